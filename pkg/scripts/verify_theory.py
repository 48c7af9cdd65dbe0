"""Numerical check that the optimal adversarial classifier turns the value function into a JSD.

Prints the inner-max error over random distribution sets and the minimax
trace summary for a few (N, S) sizes.
"""

import argparse
import math

import numpy as np

from datlab import theory


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=20000)
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    worst_inner, worst_gap = 0.0, 0.0
    for _ in range(args.trials):
        n, s = int(rng.integers(2, 5)), int(rng.integers(2, 7))
        dists = theory.random_distributions(rng, n, s)
        _, err = theory.verify_inner_max(dists, steps=args.steps)
        worst_inner = max(worst_inner, err)
        worst_gap = max(worst_gap, abs(theory.jsd_value_identity_gap(dists)))
    print(f"inner max: worst sup error {worst_inner:.2e} over {args.trials} sets")
    print(f"identity: worst |V(C*) - (JSD - N ln N)| {worst_gap:.2e}")

    for n, s in ((2, 2), (3, 4), (4, 6)):
        trace = theory.verify_minimax(n, s, seed=args.seed, steps=args.steps)
        print(f"N={n} S={s}: value {trace.final_value:.6f} (target {-n * math.log(n):.6f}), "
              f"jsd {trace.final_jsd:.2e}, max TV {trace.max_pairwise_tv():.2e}, {len(trace.values) - 1} steps")


if __name__ == "__main__":
    main()
