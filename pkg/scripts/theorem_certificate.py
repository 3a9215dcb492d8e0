"""One-step descent certificate on random quadratics and a ReLU sweep.

The quadratic part checks measured decrease against the smoothness bound;
the ReLU part prints the measured decrease of a random net's probe loss for
an aligned pair (one sample duplicated, labelled with the class the net ranks
lower) and a conflicting pair (the same sample with one label flipped).
"""

import argparse

import numpy as np

from gradalign.archspace import initialize
from gradalign.autodiff import GraphBuilder, NetworkInstance, forward
from gradalign.theorem import one_step_bound_check, random_quadratic_probe, relu_bound_sweep


def relu_net(seed, width=16):
    b = GraphBuilder(2)
    h = b.relu(b.dense(b.input, width, "l0"))
    out = b.dense(h, 2, "l1")
    return initialize(NetworkInstance(b.build(out), name="sweep"), seed, bias_scale=1.0)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    reps = [one_step_bound_check(random_quadratic_probe(rng, dim=int(rng.integers(1, 6)))) for _ in range(args.instances)]
    slack = np.array([r.slack for r in reps])
    print(f"quadratics: {sum(r.holds for r in reps)}/{len(reps)} hold, min slack {slack.min():.3e}")
    applicable = [r for r in reps if r.stated_applicable]
    print(f"closed form applicable on {len(applicable)}, holds on {sum(r.stated_holds for r in applicable)}")

    net = relu_net(args.seed)
    x = rng.standard_normal((1, 2))
    weak = int(np.argmin(forward(net, x[0]).logits))
    X = np.vstack([x, x])
    lambdas = [1e-1, 1e-2, 1e-3]
    for name, y in (("aligned", [weak, weak]), ("conflicting", [weak, 1 - weak])):
        rows = relu_bound_sweep(net, (X, np.array(y)), lambdas)
        trend = "  ".join(f"lr={r.lam:g}: {r.measured_decrease:+.3e}" for r in rows)
        print(f"{name:<12} cos={rows[0].cos_mean:+.2f}  {trend}")


if __name__ == "__main__":
    main()
