"""Third-order remainder of the two-segment BCH expansion versus segment length."""

import math

import numpy as np

from tmsv_forge.dynamics import bch_third_order_residual
from tmsv_forge.fockcore import ModeDims

OMEGA = 2 * math.pi * 2000


def main():
    dims = ModeDims.square(8)
    phases = np.random.default_rng(7).uniform(0, 2 * math.pi, (20, 4))
    print("dt [s]      min ratio  median     max")
    for dt in (1e-4, 936e-6 / 240, 1e-6, 1e-7):
        ratios = [bch_third_order_residual(dims, OMEGA, p[:2], p[2:], dt)
                  / bch_third_order_residual(dims, OMEGA, p[:2], p[2:], dt / 2) for p in phases]
        print(f"{dt:9.3e}  {min(ratios):9.5f}  {np.median(ratios):9.5f}  {max(ratios):9.5f}")


if __name__ == "__main__":
    main()
