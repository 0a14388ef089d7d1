"""Joint characteristic function: exact, closed-form and shot-sampled.

``MeasurementSetting`` holds the physical displacement arguments of
χ(β1, β2) = ⟨D(β1) D(β2)⟩.  Phase-space planes ("re-re", "im-im", ...)
are labelled by the SDF drive amplitude ξ = (Ω/2)τe^{iφm}; the applied
displacement is β = −iξ.  In those labels an ideal TMSV(r, 0) state shows
anti-correlation in the Re–Re plane and correlation in the Im–Im plane.

Spin readout convention: Z = P↓ − P↑, so ⟨Z⟩ = +1 right after a
postselected preparation and ⟨Z⟩ = Re χ after the two SDF pulses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .dynamics import (apply_conditional_displacement, conditional_displacement, displacement,
                       SdfParams)
from .fockcore import (DOWN, UP, DensityOperator, ModeDims, State, StateVector,
                       TMSVParams, TruncationError, spin_operators, top_level_population)

DRIVE_TO_DISPLACEMENT = -1j
PLANES: Dict[str, Tuple[complex, complex]] = {
    "re-re": (1.0, 1.0),
    "im-re": (1j, 1.0),
    "re-im": (1.0, 1j),
    "im-im": (1j, 1j),
}
GRID_COLUMNS = ("axis1", "axis2", "re_chi", "stderr", "shots")


@dataclass(frozen=True)
class MeasurementSetting:
    beta_1: complex
    beta_2: complex

    def __post_init__(self):
        if not (np.isfinite(self.beta_1) and np.isfinite(self.beta_2)):
            raise ValueError("displacements must be finite")

    @classmethod
    def from_plane(cls, plane: str, x1: float, x2: float) -> "MeasurementSetting":
        """Setting at drive-frame coordinates (x1, x2) of a named plane."""
        u1, u2 = PLANES[plane]
        return cls(complex(DRIVE_TO_DISPLACEMENT * u1 * x1), complex(DRIVE_TO_DISPLACEMENT * u2 * x2))

    @classmethod
    def from_drive(cls, xi_1: complex, xi_2: complex) -> "MeasurementSetting":
        return cls(complex(DRIVE_TO_DISPLACEMENT * xi_1), complex(DRIVE_TO_DISPLACEMENT * xi_2))


@dataclass(frozen=True)
class ChiSample:
    setting: MeasurementSetting
    value: float
    shots: int
    stderr: float


@dataclass(frozen=True)
class RngSpec:
    """Seeded counter-based (Philox) stream; identical across platforms."""

    seed: int
    stream_id: int = 0
    algorithm: str = "philox"
    parent: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.algorithm != "philox":
            raise ValueError(f"unsupported generator {self.algorithm!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.parent + (self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, stream_id: int) -> "RngSpec":
        """Child stream keyed by (parent path, this stream, ``stream_id``)."""
        return RngSpec(self.seed, stream_id, self.algorithm, self.parent + (self.stream_id,))


def _mode_dims(state: State) -> Tuple[int, int]:
    return state.dims.n_max_1, state.dims.n_max_2


def _displace_pure(psi: np.ndarray, s: MeasurementSetting) -> np.ndarray:
    """D(β1)⊗D(β2) applied to each spin branch of a (2, n1, n2) tensor."""
    n1, n2 = psi.shape[1:]
    return displacement(s.beta_1, n1) @ psi @ displacement(s.beta_2, n2).T


def _check_leak(shifted: np.ndarray, leak_tol: float):
    leak = top_level_population(np.abs(shifted) ** 2)
    if leak > leak_tol:
        raise TruncationError(f"displaced state leaks {leak:.2e} into the top Fock levels")


def _check_setting(state: State, s: MeasurementSetting, leak_tol: float):
    n1, n2 = _mode_dims(state)
    if isinstance(state, StateVector):
        _check_leak(_displace_pure(state.tensor, s), leak_tol)
    else:
        _check_leak(_displaced_populations(state, s), leak_tol)


def _displaced_populations(state: DensityOperator, s: MeasurementSetting) -> np.ndarray:
    """Fock populations of D ρ D† on the rows the leakage check reads.

    Only rows with n1 or n2 in the top two levels are computed; the rest
    of the returned (1, n1, n2) array is zero.
    """
    n1, n2 = _mode_dims(state)
    rho = np.einsum("sijskl->ijkl", state.tensor).reshape(n1 * n2, n1 * n2)
    d12 = np.kron(displacement(s.beta_1, n1), displacement(s.beta_2, n2))
    i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    rows = np.flatnonzero(((i >= n1 - 2) | (j >= n2 - 2)).ravel())
    sub = d12[rows]
    pops = np.zeros(n1 * n2)
    pops[rows] = np.einsum("ab,bc,ac->a", sub, rho, sub.conj(), optimize=True).real
    return pops.reshape(1, n1, n2)


def chi_exact(state: State, s: MeasurementSetting, *, leak_tol: float = 1e-4) -> complex:
    """⟨D(β1) D(β2)⟩ with truncated displacement unitaries; spin traced out."""
    if isinstance(state, StateVector):
        psi = state.tensor
        shifted = _displace_pure(psi, s)
        _check_leak(shifted, leak_tol)
        return complex(np.vdot(psi, shifted))
    _check_setting(state, s, leak_tol)
    n1, n2 = _mode_dims(state)
    d1, d2 = displacement(s.beta_1, n1), displacement(s.beta_2, n2)
    rho = state.tensor
    rho_modes = np.einsum("sijskl->ijkl", rho)
    return complex(np.einsum("ijkl,ki,lj->", rho_modes, d1, d2, optimize=True))


def chi_via_spin(prepared: State, s: MeasurementSetting, *, leak_tol: float = 1e-4) -> float:
    """⟨Z⟩ after CD₂(β2/2)·CD₁(β1/2) acting on the prepared joint state."""
    _check_setting(prepared, s, leak_tol)
    if isinstance(prepared, StateVector):
        t = apply_conditional_displacement(prepared.tensor, s.beta_1 / 2, mode=1)
        t = apply_conditional_displacement(t, s.beta_2 / 2, mode=2)
        p = np.abs(t) ** 2
        return float(p[DOWN].sum() - p[UP].sum())
    dims = prepared.dims
    u = (conditional_displacement(SdfParams(2, s.beta_2 / 2), dims, leak_tol=math.inf)
         @ conditional_displacement(SdfParams(1, s.beta_1 / 2), dims, leak_tol=math.inf))
    rho = u @ prepared.matrix @ u.conj().T
    diag = np.diag(rho).real.reshape(dims.shape)
    return float(diag[DOWN].sum() - diag[UP].sum())


def chi_gaussian_oracle(params: TMSVParams, s: MeasurementSetting) -> float:
    """Closed-form χ of an ideal TMSV(r, φ).

    For the series Σ (e^{iφ} tanh r)^n / cosh r |n,n⟩ one has
    S†a1S = a1 cosh r + e^{iφ} a2† sinh r (and 1↔2), hence
        χ = exp(−½ |β1 c − e^{iφ} s β2*|² − ½ |β2 c − e^{iφ} s β1*|²).
    The value is real for every argument.
    """
    if not isinstance(params, TMSVParams):
        raise TypeError("oracle is defined for TMSVParams only")
    c, sh = math.cosh(params.r), math.sinh(params.r)
    ph = np.exp(1j * params.phi)
    g1 = s.beta_1 * c - ph * sh * np.conj(s.beta_2)
    g2 = s.beta_2 * c - ph * sh * np.conj(s.beta_1)
    return float(np.exp(-0.5 * (abs(g1) ** 2 + abs(g2) ** 2)))


def postselect_prep(joint: State, *, min_probability: float = 1e-12) -> Tuple[State, float]:
    """Project onto the |↓⟩ spin branch and renormalise."""
    dims = joint.dims
    if isinstance(joint, StateVector):
        t = np.zeros(dims.shape, dtype=complex)
        t[DOWN] = joint.tensor[DOWN]
        p = float(np.sum(np.abs(t) ** 2))
        if p < min_probability:
            raise ValueError("state is orthogonal to the |down> branch")
        return StateVector.from_unnormalized(dims, t), p
    proj = np.kron(spin_operators()["p_down"], np.eye(dims.modes))
    m = proj @ joint.matrix @ proj
    p = float(np.trace(m).real)
    if p < min_probability:
        raise ValueError("state is orthogonal to the |down> branch")
    m = 0.5 * (m + m.conj().T) / p
    return DensityOperator(m / np.trace(m).real, dims), p


def outcome_probability(re_chi: float) -> float:
    """P(+1) for a dichotomic readout with mean ``re_chi``."""
    return float(np.clip(0.5 * (1.0 + re_chi), 0.0, 1.0))


def projection_stderr(mean: float, shots: int) -> float:
    return math.sqrt(max(0.0, 1.0 - mean * mean) / shots)


def sample_counts(re_chi: float, shots: int, rng: RngSpec) -> int:
    """Number of +1 outcomes in ``shots`` binary readouts."""
    return int(rng.generator().binomial(shots, outcome_probability(re_chi)))


def sample_chi(state: State, s: MeasurementSetting, shots: int, rng: RngSpec, *,
               value: Optional[float] = None) -> ChiSample:
    """Shot-sampled estimate of Re χ with projection-noise error.

    ``value`` short-circuits the protocol simulation when Re χ is known.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    re_chi = chi_via_spin(state, s) if value is None else value
    plus = sample_counts(re_chi, shots, rng)
    mean = (2 * plus - shots) / shots
    return ChiSample(s, mean, shots, projection_stderr(mean, shots))


# --- grids ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChiGrid:
    plane: str
    axis1: np.ndarray
    axis2: np.ndarray
    re_chi: np.ndarray          # [len(axis1), len(axis2)]
    stderr: np.ndarray
    shots: np.ndarray
    metadata: dict = field(default_factory=dict)

    def points(self):
        a1, a2 = np.meshgrid(self.axis1, self.axis2, indexing="ij")
        return a1.ravel(), a2.ravel()

    def value_at(self, x1: float, x2: float, tol: float = 1e-9) -> Tuple[float, float]:
        i = np.flatnonzero(np.abs(self.axis1 - x1) <= tol)
        j = np.flatnonzero(np.abs(self.axis2 - x2) <= tol)
        if i.size == 0 or j.size == 0:
            raise KeyError(f"no grid point at ({x1}, {x2}) in plane {self.plane}")
        return float(self.re_chi[i[0], j[0]]), float(self.stderr[i[0], j[0]])

    def to_csv(self, path) -> Tuple[Path, Path]:
        path = Path(path)
        a1, a2 = self.points()
        with path.open("w", newline="") as fh:
            fh.write(",".join(GRID_COLUMNS) + "\n")
            for x, y, v, e, n in zip(a1, a2, self.re_chi.ravel(), self.stderr.ravel(), self.shots.ravel()):
                fh.write(f"{x + 0.0:.12g},{y + 0.0:.12g},{v + 0.0:.12e},{e:.12e},{int(n)}\n")
        sidecar = path.with_suffix(".json")
        meta = {"plane": self.plane, "axis1": f"{self.plane.split('-')[0]}[beta_1]",
                "axis2": f"{self.plane.split('-')[1]}[beta_2]",
                "coordinates": "SDF drive amplitude xi; displacement beta = -1j * xi",
                **self.metadata}
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path, sidecar

    @classmethod
    def from_csv(cls, path) -> "ChiGrid":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(path.with_suffix(".json").read_text())
        ax1, ax2 = np.unique(data[:, 0]), np.unique(data[:, 1])
        shape = (ax1.size, ax2.size)
        plane = meta.pop("plane")
        for k in ("axis1", "axis2", "coordinates"):
            meta.pop(k, None)
        return cls(plane, ax1, ax2, data[:, 2].reshape(shape), data[:, 3].reshape(shape),
                   data[:, 4].astype(int).reshape(shape), meta)


def symmetric_axis(extent: float, step: float) -> np.ndarray:
    if step <= 0 or extent < 0:
        raise ValueError("need step > 0 and extent >= 0")
    m = int(round(extent / step))
    return step * np.arange(-m, m + 1)


def scan_grid(state: State, plane: str, extent: float, step: float, *,
              symmetry_fill: bool = False, shots: Optional[int] = None,
              rng: Optional[RngSpec] = None, leak_tol: float = 1e-4) -> ChiGrid:
    """Re χ on a square grid of one quadrature plane.

    Exact when ``shots`` is None, otherwise shot-sampled with one RNG
    substream per grid point.  With ``symmetry_fill`` only the upper
    half-plane is evaluated; Re χ(−β) = Re χ(β) fills the rest.
    """
    if plane not in PLANES:
        raise ValueError(f"unknown plane {plane!r}; choose from {sorted(PLANES)}")
    if shots is not None and rng is None:
        raise ValueError("sampled scans need an RngSpec")
    ax = symmetric_axis(extent, step)
    n = ax.size
    mid = n // 2
    vals = np.full((n, n), np.nan)
    errs = np.zeros((n, n))
    counts = np.zeros((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            if symmetry_fill and (j < mid or (j == mid and i < mid)):
                continue
            s = MeasurementSetting.from_plane(plane, ax[i], ax[j])
            try:
                if shots is None:
                    vals[i, j] = chi_exact(state, s, leak_tol=leak_tol).real
                else:
                    sample = sample_chi(state, s, shots, rng.substream(i * n + j))
                    vals[i, j], errs[i, j], counts[i, j] = sample.value, sample.stderr, shots
            except (TruncationError, ValueError) as exc:
                raise TruncationError(f"grid point ({ax[i]:.3f}, {ax[j]:.3f}) exceeds the leakage bound: {exc}")
    if symmetry_fill:
        lower = np.isnan(vals)
        vals[lower] = vals[::-1, ::-1][lower]
        errs[lower] = errs[::-1, ::-1][lower]
        counts[lower] = counts[::-1, ::-1][lower]
    meta = {"sampled": shots is not None, "symmetry_fill": symmetry_fill}
    if rng is not None and shots is not None:
        meta.update(seed=rng.seed, rng=rng.algorithm)
    return ChiGrid(plane, ax, ax.copy(), vals, errs, counts, meta)
