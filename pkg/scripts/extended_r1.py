"""Extended check: optimize a TMSV r=1 pulse at n_max=32 and revalidate it.

This is slow (minutes per start).  Usage:
    python scripts/extended_r1.py [--starts 8] [--iterations 3000] [--seed 0]
"""

import argparse
import json
import time

from tmsv_forge.cli import jsonable
from tmsv_forge.fockcore import ModeDims, TMSVParams, tmsv_state
from tmsv_forge.optimizer import OptimizationProblem, optimize, revalidate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--r", type=float, default=1.0)
    ap.add_argument("--n-max", type=int, default=32)
    ap.add_argument("--starts", type=int, default=8)
    ap.add_argument("--iterations", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--revalidate", type=int, default=40)
    args = ap.parse_args()
    dims = ModeDims.square(args.n_max)
    problem = OptimizationProblem(tmsv_state(TMSVParams(args.r), dims, allow_truncation=True), dims,
                                  seed=args.seed, n_starts=args.starts, max_iterations=args.iterations)
    t0 = time.time()
    res = optimize(problem)
    big = ModeDims.square(args.revalidate)
    report = {
        "r": args.r, "n_max": args.n_max, "fidelity": res.fidelity, "duration_us": res.duration * 1e6,
        "cost": res.cost, "converged": res.converged, "start_index": res.start_index,
        "iterations": res.iterations, "leakage": res.leakage,
        "revalidated_fidelity": revalidate(res, big, tmsv_state(TMSVParams(args.r), big)),
        "meets_fidelity_bar": res.fidelity >= 0.999, "seconds": round(time.time() - t0, 1),
    }
    print(json.dumps(jsonable(report), indent=2))


if __name__ == "__main__":
    main()
