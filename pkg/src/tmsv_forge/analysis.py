"""Estimators and fits on characteristic-function data.

Gaussian variance extraction, the Reid EPR product, squeezing in dB,
the CHSH-type Bell signal with its projection-noise variance, and the
two-component Gaussian model used for squeezed-state superpositions.

All coordinates are drive-frame plane labels (see ``tomography``).  A
1D χ profile A·exp(−x²/(2V)) has χ-variance V; the vacuum has V = 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import least_squares, minimize

from .fockcore import State, TMSVParams
from .tomography import (ChiGrid, MeasurementSetting, RngSpec, chi_exact, chi_gaussian_oracle,
                         chi_via_spin, sample_chi)

REID_THRESHOLD = 0.25
REID_TOL = 1e-9          # rounding slack so the vacuum reads as separable
CLASSICAL_BELL_LIMIT = 2.0
TMSV_BELL_LIMIT = 2.32
BELL_BOUND = 2.0          # |α| search box
SQRT2 = math.sqrt(2.0)


class AnalysisError(RuntimeError):
    """A fit or estimator cannot produce a meaningful answer."""


# --- 1D and 2D Gaussian fits ---------------------------------------------

@dataclass(frozen=True)
class GaussianFit1D:
    amplitude: float
    variance: float
    residual_rms: float


@dataclass(frozen=True)
class GaussianFit2D:
    """A·exp(−u²/(2V−) − v²/(2V+)) with u, v = (x1 ∓ x2)/√2."""

    amplitude: float
    v_minus: float
    v_plus: float
    residual_rms: float


def _weights(stderr, n):
    if stderr is None:
        return np.ones(n)
    e = np.asarray(stderr, dtype=float).ravel()
    if e.size != n:
        raise ValueError("stderr length mismatch")
    if np.all(e > 0):
        return 1.0 / e
    return np.ones(n)


def fit_gaussian_1d(x, y, stderr=None, *, max_nfev: int = 2000) -> GaussianFit1D:
    """Weighted least-squares fit of A·exp(−x²/(2V))."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    ok = np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 5:
        raise AnalysisError("need at least 5 samples")
    if np.ptp(y) < 1e-12:
        raise AnalysisError("degenerate profile: all samples equal")
    w = _weights(None if stderr is None else np.asarray(stderr, float).ravel()[ok], x.size)
    pos = np.clip(y, 0, None)
    v0 = float(np.sum(x ** 2 * pos) / max(np.sum(pos), 1e-12)) or 1.0
    a0 = float(np.clip(y[np.argmin(np.abs(x))], 0.05, 1.05))

    def resid(p):
        a, logv = p
        return w * (a * np.exp(-x ** 2 / (2 * math.exp(logv))) - y)

    sol = least_squares(resid, [a0, math.log(max(v0, 1e-3))],
                        bounds=([1e-6, -12.0], [1.05, 12.0]), x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    if sol.status <= 0:
        raise AnalysisError(f"1D Gaussian fit did not converge: {sol.message}")
    a, logv = sol.x
    raw = a * np.exp(-x ** 2 / (2 * math.exp(logv))) - y
    return GaussianFit1D(float(a), float(math.exp(logv)), float(np.sqrt(np.mean(raw ** 2))))


def fit_gaussian_2d(grid: ChiGrid, *, max_nfev: int = 4000) -> GaussianFit2D:
    """Diagonal-axis 2D Gaussian fit over a χ grid."""
    a1, a2 = grid.points()
    y = grid.re_chi.ravel()
    ok = np.isfinite(y)
    if ok.sum() < 9:
        raise AnalysisError("need at least 9 finite grid values")
    u = (a1 - a2)[ok] / SQRT2
    v = (a1 + a2)[ok] / SQRT2
    y = y[ok]
    err = grid.stderr.ravel()[ok] if grid.metadata.get("sampled") else None
    w = _weights(err, y.size)

    def model(p):
        a, lm, lp = p
        return a * np.exp(-u ** 2 / (2 * math.exp(lm)) - v ** 2 / (2 * math.exp(lp)))

    sol = least_squares(lambda p: w * (model(p) - y), [min(max(y.max(), 0.05), 1.05), 0.0, 0.0],
                        bounds=([1e-6, -12, -12], [1.05, 12, 12]), x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    if sol.status <= 0:
        raise AnalysisError(f"2D Gaussian fit did not converge: {sol.message}")
    a, lm, lp = sol.x
    return GaussianFit2D(float(a), math.exp(lm), math.exp(lp),
                         float(np.sqrt(np.mean((model(sol.x) - y) ** 2))))


# --- axis profiles ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AxisProfiles:
    alpha: np.ndarray
    squeezed: np.ndarray
    antisqueezed: np.ndarray
    squeezed_err: np.ndarray
    antisqueezed_err: np.ndarray


def _profile_settings(alpha: float):
    h = alpha / SQRT2
    s = [MeasurementSetting.from_drive(h, -h), MeasurementSetting.from_drive(1j * h, 1j * h)]
    a = [MeasurementSetting.from_drive(h, h), MeasurementSetting.from_drive(1j * h, -1j * h)]
    return s, a


def mean_axis_profiles(source: Union[State, Mapping[str, ChiGrid]], alpha=None, *,
                       shots: Optional[int] = None, rng: Optional[RngSpec] = None) -> AxisProfiles:
    """Quadrature-averaged χ along the squeezed and anti-squeezed axes.

    χ̄_s(α) = ½Re χ(α/√2, −α/√2) + ½Re χ(iα/√2, iα/√2)
    χ̄_as(α) = ½Re χ(α/√2, α/√2) + ½Re χ(iα/√2, −iα/√2)

    ``source`` is a state (evaluated at ``alpha``, exactly or with
    ``shots`` readouts per setting) or a mapping with "re-re" and "im-im"
    grids, whose diagonals supply the samples.
    """
    if isinstance(source, Mapping):
        try:
            rr, ii = source["re-re"], source["im-im"]
        except KeyError as exc:
            raise AnalysisError(f"missing grid for plane {exc}")
        h = rr.axis1 if alpha is None else np.asarray(alpha, float) / SQRT2
        vals = np.zeros((4, h.size))
        errs = np.zeros((4, h.size))
        try:
            for j, x in enumerate(h):
                for row, (g, x1, x2) in enumerate([(rr, x, -x), (ii, x, x), (rr, x, x), (ii, x, -x)]):
                    vals[row, j], errs[row, j] = g.value_at(x1, x2)
        except KeyError as exc:
            raise AnalysisError(f"missing setting: {exc}")
        alpha = SQRT2 * h
    else:
        if shots is not None and rng is None:
            raise ValueError("sampled profiles need an RngSpec")
        alpha = np.asarray(alpha if alpha is not None else np.linspace(-3, 3, 25), float)
        vals = np.zeros((4, alpha.size))
        errs = np.zeros((4, alpha.size))
        for j, al in enumerate(alpha):
            s, a = _profile_settings(al)
            for row, setting in enumerate(s + a):
                exact = chi_exact(source, setting).real
                if shots is None:
                    vals[row, j] = exact
                else:
                    smp = sample_chi(source, setting, shots, rng.substream(4 * j + row), value=exact)
                    vals[row, j], errs[row, j] = smp.value, smp.stderr
    sq = 0.5 * (vals[0] + vals[1])
    asq = 0.5 * (vals[2] + vals[3])
    return AxisProfiles(alpha, sq, asq, 0.5 * np.hypot(errs[0], errs[1]),
                        0.5 * np.hypot(errs[2], errs[3]))


# --- EPR, reciprocity and dB -------------------------------------------------

@dataclass(frozen=True)
class EprResult:
    v_beta_re_minus: float
    v_beta_im_plus: float
    reid_value: float
    entangled: bool


def _positive(name, v):
    if not (math.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be positive and finite, got {v}")


def reid_criterion(v_re_minus: float, v_im_plus: float) -> EprResult:
    """V_x−·V_p+ = 1/(4·V_Re−·V_Im+) from the two χ variances."""
    _positive("v_re_minus", v_re_minus)
    _positive("v_im_plus", v_im_plus)
    value = 1.0 / (4.0 * v_re_minus * v_im_plus)
    return EprResult(float(v_re_minus), float(v_im_plus), value, value < REID_THRESHOLD - REID_TOL)


def variance_reciprocity(v_chi: float) -> float:
    """Wigner-quadrature variance 1/(2·V_χ) dual to a χ variance."""
    _positive("v_chi", v_chi)
    return 1.0 / (2.0 * v_chi)


def squeezing_db(v: float) -> float:
    _positive("variance", v)
    return 10.0 * math.log10(v)


def theory_db(r: float) -> float:
    return 10.0 * math.log10(math.exp(2.0 * r))


def epr_from_grids(re_re: ChiGrid, im_im: ChiGrid) -> Tuple[EprResult, GaussianFit2D, GaussianFit2D]:
    if re_re.plane != "re-re" or im_im.plane != "im-im":
        raise AnalysisError("EPR needs the re-re and im-im planes")
    f_rr, f_ii = fit_gaussian_2d(re_re), fit_gaussian_2d(im_im)
    return reid_criterion(f_rr.v_minus, f_ii.v_plus), f_rr, f_ii


# --- Bell signal -----------------------------------------------------------------

@dataclass(frozen=True)
class BellSettings:
    alpha_0: float
    alpha_1: float
    gamma_0: float
    gamma_1: float

    @classmethod
    def symmetric(cls, a0: float, a1: float) -> "BellSettings":
        return cls(a0, a1, a0, a1)

    @property
    def is_symmetric(self) -> bool:
        return self.alpha_0 == self.gamma_0 and self.alpha_1 == self.gamma_1

    def pairs(self):
        """(α_k, γ_l) in the order 00, 01, 10, 11."""
        a, g = (self.alpha_0, self.alpha_1), (self.gamma_0, self.gamma_1)
        return [(a[k], g[l]) for k in (0, 1) for l in (0, 1)]

    def measurement_settings(self):
        return [MeasurementSetting.from_plane("re-re", a, g) for a, g in self.pairs()]


@dataclass(frozen=True)
class BellResult:
    settings: BellSettings
    correlations: Tuple[float, float, float, float]
    shots_per_setting: Tuple[int, int, int, int]
    total_shots: int
    bell_signal: float
    variance: float
    invalid_settings: Tuple[int, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.invalid_settings

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["valid"] = self.valid
        d["sigma"] = self.sigma if math.isfinite(self.variance) else None
        d["variance"] = self.variance if math.isfinite(self.variance) else None
        d["symmetric"] = self.settings.is_symmetric
        return d


def chsh(c) -> float:
    c = np.asarray(c, dtype=float)
    return float(abs(c[0] + c[1] + c[2] - c[3]))


def bell_signal(correlations: Sequence[float], settings: BellSettings,
                shots: Sequence[int]) -> BellResult:
    """B = |C00 + C01 + C10 − C11| and Var[B] = Σ (1 − C²)/M_kl.

    Settings that received no shots are flagged invalid; their
    correlation is reported as 0 and the variance is infinite.
    """
    c = [float(x) for x in correlations]
    m = [int(x) for x in shots]
    if len(c) != 4 or len(m) != 4:
        raise ValueError("need four correlations and four shot counts")
    if any(not (-1.0 <= x <= 1.0) for x in c):
        raise ValueError(f"correlations out of [-1, 1]: {c}")
    if any(x < 0 for x in m):
        raise ValueError("negative shot count")
    invalid = tuple(k for k in range(4) if m[k] == 0)
    c = [0.0 if m[k] == 0 else c[k] for k in range(4)]
    var = math.inf if invalid else sum((1 - ck * ck) / mk for ck, mk in zip(c, m))
    return BellResult(settings, tuple(c), tuple(m), sum(m), chsh(c), var, invalid)


def oracle_correlations(params: TMSVParams, settings: BellSettings):
    return [chi_gaussian_oracle(params, s) for s in settings.measurement_settings()]


def _bell_objective(params: TMSVParams, symmetric: bool):
    c, s = math.cosh(params.r), math.sinh(params.r)
    ph = np.exp(1j * params.phi)

    def corr(a, g):
        # oracle at drive labels (a, g) in the re-re plane, inlined for speed
        b1, b2 = -1j * a, -1j * g
        g1 = b1 * c - ph * s * np.conj(b2)
        g2 = b2 * c - ph * s * np.conj(b1)
        return np.exp(-0.5 * (abs(g1) ** 2 + abs(g2) ** 2))

    def signed(x):
        a0, a1, g0, g1 = (x[0], x[1], x[0], x[1]) if symmetric else x
        return corr(a0, g0) + corr(a0, g1) + corr(a1, g0) - corr(a1, g1)
    return signed


def optimize_bell_settings(params: TMSVParams, *, symmetric: bool = True, n_starts: int = 24,
                           seed: int = 0) -> Tuple[BellSettings, float]:
    """Maximise the Bell signal over |α| ≤ 2 with the closed-form χ.

    Multi-start L-BFGS-B on ±(C00 + C01 + C10 − C11).  The result is
    put in canonical form α_1 > 0 (Re χ is even, so a global sign flip
    leaves every correlation unchanged).
    """
    signed = _bell_objective(params, symmetric)
    dim = 2 if symmetric else 4
    rng = RngSpec(seed, stream_id=7).generator()
    best_val, best_x, best_k = -math.inf, None, None
    for k in range(n_starts):
        x0 = rng.uniform(-1.0, 1.0, dim)
        for sign in (1.0, -1.0):
            res = minimize(lambda x: -sign * signed(x), x0, method="L-BFGS-B",
                           bounds=[(-BELL_BOUND, BELL_BOUND)] * dim,
                           options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500})
            val = abs(signed(res.x))
            if val > best_val + 1e-12:
                best_val, best_x = val, res.x
    x = np.array(best_x, dtype=float)
    x = x if x[1] > 0 else -x
    s = BellSettings.symmetric(x[0], x[1]) if symmetric else BellSettings(*x)
    return s, float(best_val)


@dataclass(frozen=True, eq=False)
class BellTrace:
    """Bell signal after the first M shots for each M in ``checkpoints``."""

    checkpoints: np.ndarray
    bell_signal: np.ndarray
    sigma: np.ndarray


def run_bell_experiment(state: State, settings: BellSettings, total_shots: int, rng: RngSpec, *,
                        checkpoints: Optional[Sequence[int]] = None,
                        correlations: Optional[Sequence[float]] = None):
    """Randomised-setting Monte Carlo of the Bell measurement.

    Each shot draws one of the four settings uniformly, then one binary
    outcome with P(+1) = (1 + C)/2, C = Re χ from the spin protocol.
    Returns (BellResult, BellTrace or None).
    """
    if total_shots < 4:
        raise ValueError("need at least 4 shots")
    if correlations is None:
        correlations = [chi_via_spin(state, s) for s in settings.measurement_settings()]
    p_plus = np.clip(0.5 * (1 + np.asarray(correlations, float)), 0.0, 1.0)
    gen = rng.generator()
    which = gen.integers(0, 4, size=total_shots)
    plus = gen.random(total_shots) < p_plus[which]
    onehot = np.zeros((total_shots, 4), dtype=np.int64)
    onehot[np.arange(total_shots), which] = 1
    shots = onehot.sum(0)
    sums = (onehot * np.where(plus, 1, -1)[:, None]).sum(0)
    c_hat = np.where(shots > 0, sums / np.maximum(shots, 1), 0.0)
    result = bell_signal(c_hat, settings, shots)
    trace = None
    if checkpoints is not None:
        cps = np.asarray(sorted(set(int(m) for m in checkpoints if 4 <= m <= total_shots)), dtype=int)
        cum_n = np.cumsum(onehot, axis=0)[cps - 1]
        cum_s = np.cumsum(onehot * np.where(plus, 1, -1)[:, None], axis=0)[cps - 1]
        bs, sg = [], []
        for n, sm in zip(cum_n, cum_s):
            r = bell_signal(np.where(n > 0, sm / np.maximum(n, 1), 0.0), settings, n)
            bs.append(r.bell_signal)
            sg.append(r.sigma if math.isfinite(r.variance) else math.nan)
        trace = BellTrace(cps, np.array(bs), np.array(sg))
    return result, trace


def analytic_bell_sigma(correlations: Sequence[float], total_shots: int) -> float:
    """Projection-noise σ[B] with the shots split evenly over the settings."""
    c = np.asarray(correlations, float)
    return float(math.sqrt(np.sum(1 - c ** 2) / (total_shots / 4)))


# --- two-component Gaussian fit ------------------------------------------------

@dataclass(frozen=True)
class TwoGaussianFit:
    c_1: float
    c_2: float
    r_1: float
    r_2: float
    residual_rms: float

    def surface(self, x1, x2):
        return two_gaussian_model(x1, x2, self.c_1, self.c_2, self.r_1, self.r_2)


def two_gaussian_model(x1, x2, c_1, c_2, r_1, r_2):
    """c1·exp(−(s²/(4e^{2r1}) + d²/(4e^{−2r1}))) + c2·exp(−(s²/(4e^{−2r2}) + d²/(4e^{2r2})))

    with s = x1 + x2 and d = x1 − x2.  Each term is the exact χ of a
    single squeezed state with parameter r_j (ridge along s for the first,
    along d for the second).
    """
    x1, x2 = np.asarray(x1, float), np.asarray(x2, float)
    s2, d2 = (x1 + x2) ** 2, (x1 - x2) ** 2
    g1 = np.exp(-(s2 / (4 * np.exp(2 * r_1)) + d2 / (4 * np.exp(-2 * r_1))))
    g2 = np.exp(-(s2 / (4 * np.exp(-2 * r_2)) + d2 / (4 * np.exp(2 * r_2))))
    return c_1 * g1 + c_2 * g2


def synthetic_superposition_grid(c_1, c_2, r_1, r_2, extent: float = 3.0, step: float = 0.25) -> ChiGrid:
    from .tomography import symmetric_axis
    ax = symmetric_axis(extent, step)
    x1, x2 = np.meshgrid(ax, ax, indexing="ij")
    z = two_gaussian_model(x1, x2, c_1, c_2, r_1, r_2)
    n = ax.size
    return ChiGrid("re-re", ax, ax.copy(), z, np.zeros((n, n)), np.zeros((n, n), int),
                   {"sampled": False, "source": "two-gaussian model"})


R_MIN, R_MAX = 1e-6, 5.0
AMBIGUOUS_R = 0.05


def _ridge_moments(x1, x2, y):
    """Initial r for each ridge from second moments along the two diagonals."""
    out = []
    for along, across in ((x1 + x2, x1 - x2), (x1 - x2, x1 + x2)):
        sel = np.abs(across) < 1e-9
        if sel.sum() < 3:
            out.append(0.5)
            continue
        t, v = along[sel], np.clip(y[sel], 0, None)
        m2 = np.sum(t ** 2 * v) / max(np.sum(v), 1e-12)
        # profile exp(−t²/(4e^{2r})) has second moment 2e^{2r}
        out.append(float(np.clip(0.5 * math.log(max(m2 / 2, 1e-6)), 0.05, 3.0)))
    return out


def fit_superposition(grid: ChiGrid, *, n_starts: int = 6, max_nfev: int = 4000) -> TwoGaussianFit:
    """Weighted least-squares fit of the two-Gaussian model with c1 + c2 ≤ 1.

    Amplitudes are parameterised as c1 = S·w, c2 = S·(1 − w) with S and
    w in [0, 1].  Raises AnalysisError if a ridge is missing from the
    grid or both components collapse to indistinguishable round blobs.
    """
    if grid.plane != "re-re":
        raise AnalysisError(f"superposition fit needs the re-re plane, got {grid.plane}")
    if grid.axis1.size < 5 or grid.axis2.size < 5:
        raise AnalysisError("missing ridge: grid needs at least 5 points along each axis")
    x1, x2 = grid.points()
    y = grid.re_chi.ravel()
    ok = np.isfinite(y)
    on_plus = ok & (np.abs(x1 - x2) < 1e-9)
    on_minus = ok & (np.abs(x1 + x2) < 1e-9)
    if on_plus.sum() < 5 or on_minus.sum() < 5:
        raise AnalysisError("missing ridge: both grid diagonals must be sampled")
    x1, x2, y = x1[ok], x2[ok], y[ok]
    err = grid.stderr.ravel()[ok] if grid.metadata.get("sampled") else None
    w = _weights(err, y.size)
    r_plus, r_minus = _ridge_moments(x1, x2, y)

    def unpack(p):
        s, frac, r1, r2 = p
        return s * frac, s * (1 - frac), r1, r2

    def resid(p):
        return w * (two_gaussian_model(x1, x2, *unpack(p)) - y)

    starts = []
    for k, frac in enumerate(np.linspace(0.2, 0.8, n_starts)):
        starts.append([0.95, frac, r_plus, r_minus] if k % 2 == 0 else [0.95, frac, r_minus, r_plus])
    best = None
    for p0 in starts:
        sol = least_squares(resid, p0, bounds=([0, 0, R_MIN, R_MIN], [1, 1, R_MAX, R_MAX]),
                            x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
        if sol.status <= 0:
            continue
        if best is None or sol.cost < best.cost - 1e-15:
            best = sol
    if best is None:
        raise AnalysisError("two-Gaussian fit did not converge from any start")
    c1, c2, r1, r2 = unpack(best.x)
    ridged = [r for c, r in ((c1, r1), (c2, r2)) if c > AMBIGUOUS_R and r >= AMBIGUOUS_R]
    if not ridged:
        raise AnalysisError("ridge-ambiguous data: no component shows a correlation ridge")
    raw = two_gaussian_model(x1, x2, c1, c2, r1, r2) - y
    return TwoGaussianFit(float(c1), float(c2), float(r1), float(r2), float(np.sqrt(np.mean(raw ** 2))))
