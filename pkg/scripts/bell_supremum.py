"""Largest Bell signal reachable with symmetric Re-Re settings, as a function of r.

For large r the correlations depend on the settings only through the
scaled coordinates x = α e^{r}, and the signal tends to
f(2x0) + 2 f(x0 + x1) − f(2x1) with f(t) = exp(−t²/4).  The script
maximises both the finite-r signal and this limit.
"""

import math

import numpy as np
from scipy.optimize import minimize

from tmsv_forge.analysis import optimize_bell_settings
from tmsv_forge.fockcore import TMSVParams


def limit_signal(x):
    f = lambda t: math.exp(-t * t / 4)
    x0, x1 = x
    return f(2 * x0) + 2 * f(x0 + x1) - f(2 * x1)


def main():
    for r in np.round(np.arange(0.0, 4.01, 0.25), 2):
        s, b = optimize_bell_settings(TMSVParams(float(r)), n_starts=12)
        print(f"r = {r:4.2f}  B = {b:.5f}  settings ({s.alpha_0:+.4f}, {s.alpha_1:+.4f})")
    best = max((minimize(lambda x: -limit_signal(x), x0, method="Nelder-Mead",
                         options={"xatol": 1e-12, "fatol": 1e-14})
                for x0 in np.random.default_rng(0).uniform(-2, 2, (40, 2))), key=lambda r: -r.fun)
    print(f"infinite-squeezing limit: B = {-best.fun:.6f} at scaled settings {best.x.round(4)}")


if __name__ == "__main__":
    main()
