"""Desk-scale correlation experiment: every metric against trained accuracy.

Samples a space, trains each genome on one or more synthetic datasets,
scores it at init and prints Kendall's tau per (metric, dataset) together
with the mean over datasets. Artifacts land in --output.

    python3 scripts/run_correlation.py --datasets blobs,spirals --seed 7
"""

import argparse
import json
from pathlib import Path

from gradalign.cli import main

METRICS = "gradalign1,gradalign2,gradsign,naswot,gradnorm"


def run(args) -> dict:
    out = Path(args.output)
    common = ["--seed", str(args.seed), "--jobs", str(args.jobs)]
    space_args = ["--count", str(args.count), "--widths", args.widths, "--depths", args.depths]
    assert main(["gen-space", *space_args, *common, "--output", str(out)]) == 0
    space = str(out / "space.json")
    scores, benches = [], []
    for kind in args.datasets.split(","):
        d = out / kind
        ds = ["--dataset", kind, "--noise", str(args.noise)]
        assert main(["score", "--space", space, "--metrics", METRICS, "--probe-size", str(args.probe_size), *ds, *common, "--output", str(d)]) == 0
        train = ["--epochs", str(args.epochs), "--lr", str(args.lr), "--batch-size", str(args.batch_size), "--momentum", str(args.momentum)]
        assert main(["train-oracle", "--space", space, *train, *ds, *common, "--output", str(d)]) == 0
        scores += ["--scores", str(d / "scores.csv")]
        benches += ["--bench", str(d / "bench.csv")]
    pairs = [x for pair in zip(scores[1::2], benches[1::2]) for x in ("--scores", pair[0], "--bench", pair[1])]
    assert main(["evaluate", *pairs, "--tau-variant", args.tau_variant, "--output", str(out)]) == 0
    return json.loads((out / "summary.json").read_text())


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--datasets", default="blobs")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--widths", default="8,16,32")
    p.add_argument("--depths", default="1,2")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--probe-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--tau-variant", choices=("a", "b"), default="b")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", default="runs/correlation")
    return p.parse_args(argv)


if __name__ == "__main__":
    summary = run(parse_args())
    for metric, row in summary["metrics"].items():
        taus = "  ".join(f"{d}={t:+.3f}" for d, t in zip(row["datasets"], row["taus"]))
        print(f"{metric:<11} mean={row['mean_tau']:+.3f}  {taus}")
