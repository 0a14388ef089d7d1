"""Optimize the even TMSV superposition at n_max=7, then re-simulate in larger spaces."""

import argparse

from tmsv_forge.fockcore import ModeDims, superposition_state
from tmsv_forge.optimizer import OptimizationProblem, optimize, revalidate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--r", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    small = ModeDims.square(7)
    problem = OptimizationProblem(superposition_state(args.r, small, allow_truncation=True), small,
                                  seed=args.seed, max_iterations=1000)
    res = optimize(problem)
    print(f"n_max = 7: F = {res.fidelity:.5f}, T = {res.duration * 1e6:.0f} us, leakage {res.leakage:.3f}")
    for n in (20, 24, 30):
        big = ModeDims.square(n)
        print(f"n_max = {n:>2}: F = {revalidate(res, big, superposition_state(args.r, big)):.5f}")


if __name__ == "__main__":
    main()
