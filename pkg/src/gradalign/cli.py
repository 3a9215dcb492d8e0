"""Command-line entry point.

Subcommands: gen-space, score, train-oracle, evaluate, theorem-check,
region-demo. Every command writes into ``--output`` (a directory). A
``--config`` JSON document mirroring :class:`RunConfig` supplies defaults;
explicit flags win. Exit codes: 0 ok, 2 usage, 3 data/validation, 4 numerical.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import archspace, harness, metrics, oracle, regionlab, theorem
from .errors import DataError, GradAlignError, NumericalError, UsageError
from .seeding import rng_for

SCORE_FIELDS = (
    "genome_id",
    "metric",
    "score",
    "score_normalized",
    "higher_is_better",
    "probe_seed",
    "probe_size",
    "wall_ms",
)


@dataclass
class DatasetSpec:
    kind: str = "blobs"
    n_train: int = 200
    n_test: int = 200
    noise: float = 0.05
    num_classes: int = 4

    def build(self, seed: int) -> oracle.Dataset:
        return oracle.generate_dataset(self.kind, self.n_train, self.n_test, self.noise, self.num_classes, seed)


@dataclass
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    space: dict = field(default_factory=lambda: {"widths": [8, 16, 32], "depths": [1, 2], "ops": list(archspace.OPS), "count": 30})
    probe: dict = field(default_factory=lambda: {"n": 32})
    metrics: list = field(default_factory=lambda: ["gradalign1"])
    train: dict = field(default_factory=lambda: {"epochs": 50, "lr": 0.1, "batch_size": 32, "momentum": 0.9})
    output: str = "."
    seed: int = 0


# flat argparse dest -> path inside the RunConfig JSON document
CONFIG_KEYS = {
    "dataset": ("dataset", "kind"),
    "n_train": ("dataset", "n_train"),
    "n_test": ("dataset", "n_test"),
    "noise": ("dataset", "noise"),
    "classes": ("dataset", "num_classes"),
    "widths": ("space", "widths"),
    "depths": ("space", "depths"),
    "ops": ("space", "ops"),
    "count": ("space", "count"),
    "probe_size": ("probe", "n"),
    "metrics": ("metrics",),
    "epochs": ("train", "epochs"),
    "lr": ("train", "lr"),
    "batch_size": ("train", "batch_size"),
    "momentum": ("train", "momentum"),
    "output": ("output",),
    "seed": ("seed",),
    "jobs": ("jobs",),
}


def _flatten_config(doc: dict) -> dict:
    out = {}
    for dest, path in CONFIG_KEYS.items():
        node = doc
        for key in path:
            if not isinstance(node, dict) or key not in node:
                break
            node = node[key]
        else:
            if isinstance(node, list) and dest in ("widths", "depths", "ops", "metrics"):
                node = ",".join(str(v) for v in node)
            out[dest] = node
    return out


def _int_list(text) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


def _float_list(text) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated number list, got {text!r}") from None


def _str_list(text) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _out(args) -> Path:
    path = Path(args.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dataset_from_args(args) -> oracle.Dataset:
    return DatasetSpec(args.dataset, args.n_train, args.n_test, args.noise, args.classes).build(args.seed)


# ---------------------------------------------------------------- gen-space


def cmd_gen_space(args) -> Path:
    spec = archspace.SpaceSpec(
        widths=tuple(_int_list(args.widths)),
        depths=tuple(_int_list(args.depths)),
        ops=tuple(_str_list(args.ops)),
        seed=args.seed,
        count=args.count,
    )
    genomes = archspace.sample_space(spec)
    path = _out(args) / "space.json"
    archspace.dump_space(genomes, path)
    return path


# ---------------------------------------------------------------- score


def _score_one(job):
    genome, probe, metric_names, seed, gradient_fn = job
    return [metrics.score_architecture(genome, probe, m, seed, gradient_fn) for m in metric_names]


def score_space(genomes, probe, metric_names, seed, jobs: int = 1, gradient_fn=None) -> list[metrics.ScoreRecord]:
    """Score every genome under every metric; rows ordered by genome id, then metric order."""
    for name in metric_names:
        metrics.get_metric(name)
    genomes = sorted(genomes, key=lambda g: g.id)
    work = [(g, probe, metric_names, seed, gradient_fn) for g in genomes]
    if jobs > 1 and gradient_fn is None and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_score_one, work))
    else:
        batches = [_score_one(w) for w in work]
    return [rec for batch in batches for rec in batch]


def write_scores_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_FIELDS)
        for r in records:
            norm = r.score_normalized
            w.writerow(
                [
                    r.genome_id,
                    r.metric,
                    repr(r.score),
                    "" if norm is None else repr(norm),
                    int(r.higher_is_better),
                    r.probe_seed,
                    r.probe_size,
                    f"{r.wall_ms:.3f}",
                ]
            )


def read_scores_csv(path) -> list[metrics.ScoreRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCORE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"score file {path} lacks columns {sorted(missing)}")
        for r in reader:
            out.append(
                metrics.ScoreRecord(
                    genome_id=r["genome_id"],
                    metric=r["metric"],
                    score=float(r["score"]),
                    higher_is_better=r["higher_is_better"].strip().lower() in ("1", "true"),
                    class_scores=(),
                    classes=(),
                    probe_seed=int(r["probe_seed"]),
                    probe_size=int(r["probe_size"]),
                    num_params=0,
                    wall_ms=float(r["wall_ms"] or 0.0),
                )
            )
    return out


def cmd_score(args, gradient_fn=None) -> Path:
    names = _str_list(args.metrics)
    for name in names:
        metrics.get_metric(name)
    genomes = archspace.load_space(args.space)
    dataset = _dataset_from_args(args)
    probe = harness.build_probe(dataset, args.probe_size, args.seed)
    records = score_space(genomes, probe, names, args.seed, args.jobs, gradient_fn)
    path = _out(args) / "scores.csv"
    write_scores_csv(records, path)
    return path


# ---------------------------------------------------------------- train-oracle


def cmd_train_oracle(args) -> Path:
    genomes = archspace.load_space(args.space)
    dataset = _dataset_from_args(args)
    config = oracle.TrainConfig(args.epochs, args.lr, args.batch_size or None, args.momentum, args.seed)
    path = _out(args) / "bench.csv"
    oracle.benchmark_space(genomes, dataset, config, path, init_seed=args.seed, jobs=args.jobs)
    return path


# ---------------------------------------------------------------- evaluate


def evaluate_files(score_paths, bench_paths, variant="b", include_diverged=True):
    """Per-(metric, dataset) reports plus the mean tau per metric over datasets."""
    if len(score_paths) != len(bench_paths):
        raise UsageError("--scores and --bench must be given the same number of times")
    reports = []
    for sp, bp in zip(score_paths, bench_paths):
        records = read_scores_csv(sp)
        bench = oracle.BenchmarkTable.from_csv(bp)
        names = bench.datasets()
        dataset = names[0] if len(names) == 1 else Path(bp).stem
        by_metric: dict[str, list] = {}
        for r in records:
            by_metric.setdefault(r.metric, []).append(r)
        for name, recs in by_metric.items():
            reports.append(harness.evaluate_metric(recs, bench, variant, include_diverged, dataset))
    summary = {}
    for name in sorted({r.metric for r in reports}):
        mine = [r for r in reports if r.metric == name]
        summary[name] = {
            "mean_tau": harness.mean_tau(mine),
            "datasets": [r.dataset for r in mine],
            "taus": [r.tau for r in mine],
        }
    return reports, summary


def cmd_evaluate(args) -> Path:
    reports, summary = evaluate_files(args.scores, args.bench, args.tau_variant, not args.exclude_diverged)
    out = _out(args)
    for r in reports:
        stem = f"report-{r.metric}-{r.dataset}"
        (out / f"{stem}.json").write_text(r.to_json())
        r.write_ranking_csv(out / f"ranking-{r.metric}-{r.dataset}.csv")
    path = out / "summary.json"
    path.write_text(json.dumps({"tau_variant": args.tau_variant, "metrics": summary}, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- theorem-check


def theorem_reports(instances: int, dim: int, seed: int, isotropic: bool):
    rng = rng_for("theorem", seed)
    reports = [
        theorem.one_step_bound_check(theorem.quadratic_probe((1, 0), (0, 1), (0, 0), 0.5, instance_id="worked"))
    ]
    for k in range(instances):
        probe = theorem.random_quadratic_probe(rng, dim, isotropic, instance_id=f"q{k:04d}")
        reports.append(theorem.one_step_bound_check(probe))
    return reports


def cmd_theorem_check(args) -> Path:
    reports = theorem_reports(args.instances, args.dim, args.seed, args.isotropic)
    path = _out(args) / "bounds.csv"
    theorem.write_bound_csv(reports, path)
    failed = [r.instance_id for r in reports if not r.holds]
    if failed:
        raise NumericalError(f"bound violated on {len(failed)} instances: {', '.join(failed[:5])}")
    return path


# ---------------------------------------------------------------- region-demo


def cmd_region_demo(args) -> Path:
    dims = tuple(_int_list(args.dims))
    box = tuple(_float_list(args.box))
    if len(box) != 4:
        raise UsageError("--box needs four numbers: xmin,xmax,ymin,ymax")
    out = _out(args)
    net = regionlab.planar_net(dims, args.seed)
    census = regionlab.count_regions_exact(net, box)
    doc = census.to_dict()
    if args.resolution:
        doc["grid_count"] = regionlab.count_regions_grid(net, box, args.resolution).count
    doc["polygons"] = [[[float(v) for v in pt] for pt in r.polygon] for r in census.regions]
    (out / "census.json").write_text(json.dumps(doc, indent=2) + "\n")
    rows = regionlab.sensitivity_search(
        seeds=range(args.seed, args.seed + args.seeds),
        deltas=tuple(_float_list(args.deltas)),
        dims=dims,
        layer=args.layer,
        unit=args.unit,
        box=box,
    )
    path = out / "sensitivity.csv"
    regionlab.write_sensitivity_csv(rows, path)
    return path


# ---------------------------------------------------------------- parser


def _add_dataset_flags(p):
    p.add_argument("--dataset", default="blobs", choices=oracle.DATASET_KINDS)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--classes", type=int, default=4, help="number of blob classes")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--output", default=".")
    common.add_argument("--config", default=None, help="JSON RunConfig supplying defaults")

    parser = argparse.ArgumentParser(prog="gradalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-space", parents=[common], help="sample a genome space")
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--ops", default=",".join(archspace.OPS))
    p.add_argument("--widths", default="8,16,32")
    p.add_argument("--depths", default="1,2")
    p.set_defaults(func=cmd_gen_space)

    p = sub.add_parser("score", parents=[common], help="score genomes at initialization")
    p.add_argument("--space", required=True)
    _add_dataset_flags(p)
    p.add_argument("--probe-size", type=int, default=32)
    p.add_argument("--metrics", default="gradalign1")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train-oracle", parents=[common], help="train genomes for ground-truth accuracy")
    p.add_argument("--space", required=True)
    _add_dataset_flags(p)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32, help="0 means full batch")
    p.add_argument("--momentum", type=float, default=0.9)
    p.set_defaults(func=cmd_train_oracle)

    p = sub.add_parser("evaluate", parents=[common], help="Kendall tau of scores against accuracies")
    p.add_argument("--scores", action="append", required=True)
    p.add_argument("--bench", action="append", required=True)
    p.add_argument("--tau-variant", choices=("a", "b"), default="b")
    p.add_argument("--exclude-diverged", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("theorem-check", parents=[common], help="one-step descent bound on quadratics")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--isotropic", action="store_true")
    p.set_defaults(func=cmd_theorem_check)

    p = sub.add_parser("region-demo", parents=[common], help="linear-region perturbation sensitivity")
    p.add_argument("--dims", default="2,2,2,1")
    p.add_argument("--box", default="-3,3,-3,3")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--deltas", default="-0.5,-0.35,-0.2,-0.1,0.1,0.2,0.35,0.5")
    p.add_argument("--layer", type=int, default=2, help="layer whose bias is perturbed")
    p.add_argument("--unit", type=int, default=0)
    p.add_argument("--resolution", type=int, default=0, help="grid oracle resolution (0 = skip)")
    p.set_defaults(func=cmd_region_demo)
    return parser


def _config_defaults(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        doc = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    return _flatten_config(doc)


def main(argv=None, gradient_fn=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        defaults = _config_defaults(argv)
        parser = build_parser()
        if defaults:
            for action in parser._subparsers._group_actions:
                for sp in action.choices.values():
                    known = {a.dest for a in sp._actions}
                    sp.set_defaults(**{k: v for k, v in defaults.items() if k in known})
        args = parser.parse_args(argv)
        if args.func is cmd_score:
            path = cmd_score(args, gradient_fn)
        else:
            path = args.func(args)
    except GradAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(path)
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
