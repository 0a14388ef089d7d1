"""Piecewise-constant phase controls and their conditioning pipeline.

Coarse optimisable phases are held constant over ``n_opt`` segments,
upsampled to ``n_seg`` segments, low-pass filtered with a windowed sinc
kernel, and finally spline-interpolated for deployment.  Phases are
filtered directly as real signals, so the whole chain is linear.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline, PPoly

CSV_HEADER = ("t_seconds", "phi_r_rad", "phi_b_rad")


@dataclass(frozen=True, eq=False)
class PhaseWaveform:
    phi_r: np.ndarray
    phi_b: np.ndarray
    total_duration: float
    rabi_rate: float

    def __post_init__(self):
        phi_r = np.asarray(self.phi_r, dtype=float).reshape(-1)
        phi_b = np.asarray(self.phi_b, dtype=float).reshape(-1)
        if phi_r.size < 1 or phi_r.shape != phi_b.shape:
            raise ValueError("phi_r and phi_b must be non-empty and of equal length")
        if not (np.all(np.isfinite(phi_r)) and np.all(np.isfinite(phi_b))):
            raise ValueError("phases must be finite")
        if not math.isfinite(self.total_duration) or self.total_duration < 0:
            raise ValueError(f"duration must be finite and non-negative, got {self.total_duration}")
        for arr in (phi_r, phi_b):
            arr.setflags(write=False)
        object.__setattr__(self, "phi_r", phi_r)
        object.__setattr__(self, "phi_b", phi_b)

    @property
    def n_seg(self) -> int:
        return self.phi_r.size

    @property
    def segment_duration(self) -> float:
        return self.total_duration / self.n_seg

    def segment_index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.total_duration * (1 + 1e-12)):
            raise ValueError("evaluation time outside [0, T]")
        if self.total_duration == 0:
            return np.zeros(t.shape, dtype=int)
        k = np.floor(t / self.segment_duration + 1e-9).astype(int)
        return np.clip(k, 0, self.n_seg - 1)

    def __call__(self, t) -> Tuple[np.ndarray, np.ndarray]:
        k = self.segment_index(t)
        return self.phi_r[k], self.phi_b[k]

    def time_reversed(self, conjugate: bool = True) -> "PhaseWaveform":
        """Segments in reverse order; with ``conjugate`` the Hamiltonian flips sign.

        Shifting both phases by π negates H, so replaying the reversed
        sequence undoes the original evolution exactly.
        """
        shift = math.pi if conjugate else 0.0
        return PhaseWaveform(self.phi_r[::-1] + shift, self.phi_b[::-1] + shift,
                             self.total_duration, self.rabi_rate)


@dataclass(frozen=True)
class FilterSpec:
    cutoff_product: float = 2 * math.pi * 10_000
    n_opt: int = 30
    n_seg: int = 240
    kernel_halfwidth: Optional[int] = None

    def __post_init__(self):
        if self.n_opt < 1 or self.n_seg < 1:
            raise ValueError("segment counts must be positive")
        if self.n_seg % self.n_opt:
            raise ValueError(f"n_seg={self.n_seg} is not a multiple of n_opt={self.n_opt}")
        if self.cutoff_product <= 0:
            raise ValueError("cutoff must be positive")
        if self.kernel_halfwidth is None:
            object.__setattr__(self, "kernel_halfwidth", 4 * (self.n_seg // self.n_opt))
        if self.kernel_halfwidth < 0:
            raise ValueError("kernel half-width must be non-negative")

    @property
    def upsample(self) -> int:
        return self.n_seg // self.n_opt

    @property
    def cutoff_per_sample(self) -> float:
        """Cutoff in cycles per fine segment: (f_c·T / 2π) / n_seg."""
        return self.cutoff_product / (2 * math.pi) / self.n_seg


def sinc_kernel(cutoff: float, halfwidth: int) -> np.ndarray:
    """Blackman-windowed sinc low-pass taps, unit DC gain.

    ``cutoff`` is in cycles per sample; at or above Nyquist the filter
    is the identity.
    """
    if cutoff >= 0.5 or halfwidth == 0:
        return np.ones(1)
    m = np.arange(-halfwidth, halfwidth + 1)
    h = 2 * cutoff * np.sinc(2 * cutoff * m) * np.blackman(2 * halfwidth + 3)[1:-1]
    return h / h.sum()


@lru_cache(maxsize=32)
def _filter_matrix_cached(spec: FilterSpec) -> np.ndarray:
    n = spec.n_seg
    zoh = np.kron(np.eye(spec.n_opt), np.ones((spec.upsample, 1)))
    h = sinc_kernel(spec.cutoff_per_sample, spec.kernel_halfwidth)
    hw = (h.size - 1) // 2
    # mirror padding: the even periodic extension keeps the mean exact
    src = np.arange(-hw, n + hw)
    src = np.mod(src, 2 * n)
    src = np.where(src >= n, 2 * n - 1 - src, src)
    conv = np.zeros((n, n))
    for i in range(n):
        np.add.at(conv[i], src[i:i + h.size], h[::-1])
    out = conv @ zoh
    out.setflags(write=False)
    return out


def filter_matrix(spec: FilterSpec) -> np.ndarray:
    """Constant (n_seg × n_opt) map from coarse to filtered fine phases."""
    return _filter_matrix_cached(spec)


def filter_resample(coarse: PhaseWaveform, spec: FilterSpec) -> PhaseWaveform:
    if coarse.n_seg != spec.n_opt:
        raise ValueError(f"coarse waveform has {coarse.n_seg} segments, expected {spec.n_opt}")
    f = filter_matrix(spec)
    return PhaseWaveform(f @ coarse.phi_r, f @ coarse.phi_b, coarse.total_duration, coarse.rabi_rate)


@dataclass(frozen=True, eq=False)
class SplineWaveform:
    """Natural cubic spline through segment midpoints.

    Coefficient arrays follow ``scipy.interpolate.PPoly`` layout, shape
    (4, len(knot_times) - 1).  Between 0 and the first knot, and between
    the last knot and T, the spline continues linearly, which is the C²
    continuation of a natural spline.
    """

    knot_times: np.ndarray
    phi_r_coeffs: np.ndarray
    phi_b_coeffs: np.ndarray
    total_duration: float
    rabi_rate: float = 0.0

    def _pieces(self, coeffs):
        inner = PPoly(coeffs, self.knot_times)
        t0, t1 = self.knot_times[0], self.knot_times[-1]
        left = np.array([[0.0], [0.0], [inner(t0, 1)], [inner(t0) - inner(t0, 1) * t0]])
        right = np.array([[0.0], [0.0], [inner(t1, 1)], [inner(t1)]])
        c = np.hstack([left, coeffs, right])
        x = np.concatenate([[0.0], self.knot_times, [self.total_duration]])
        return PPoly(c, x, extrapolate=False)

    def __post_init__(self):
        object.__setattr__(self, "_r", self._pieces(self.phi_r_coeffs))
        object.__setattr__(self, "_b", self._pieces(self.phi_b_coeffs))

    def __call__(self, t, nu: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.total_duration):
            raise ValueError("spline evaluation outside [0, T] is not extrapolated")
        return self._r(t, nu), self._b(t, nu)


def spline_interpolate(fine: PhaseWaveform) -> SplineWaveform:
    if fine.n_seg < 4:
        raise ValueError("need at least 4 segments for a cubic spline")
    dt = fine.segment_duration
    knots = (np.arange(fine.n_seg) + 0.5) * dt
    sr = CubicSpline(knots, fine.phi_r, bc_type="natural")
    sb = CubicSpline(knots, fine.phi_b, bc_type="natural")
    return SplineWaveform(knots, sr.c, sb.c, fine.total_duration, fine.rabi_rate)


def sample_times(total_duration: float, sample_rate: float) -> np.ndarray:
    n = int(round(sample_rate * total_duration))
    if n < 2:
        raise ValueError("sample_rate * T must be at least 2")
    return np.arange(n) / sample_rate


def _fmt_phase(x: float) -> str:
    return f"{x + 0.0:.12f}"


def export_waveform(w: Union[PhaseWaveform, SplineWaveform], sample_rate: float, path) -> Path:
    """Write ``t_seconds,phi_r_rad,phi_b_rad`` rows sampled at ``sample_rate``."""
    t = sample_times(w.total_duration, sample_rate)
    phi_r, phi_b = w(t)
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for ti, a, b in zip(t, phi_r, phi_b):
            fh.write(f"{ti:.11e},{_fmt_phase(a)},{_fmt_phase(b)}\n")
    return path


def read_waveform_csv(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = np.array([[float(x) for x in row] for row in reader])
    return rows[:, 0], rows[:, 1], rows[:, 2]


def waveform_from_samples(t, phi_r, phi_b, n_seg: int, total_duration: float,
                          rabi_rate: float) -> PhaseWaveform:
    """Rebuild a piecewise-constant waveform from dense samples (nearest to midpoints)."""
    mids = (np.arange(n_seg) + 0.5) * total_duration / n_seg
    idx = np.clip(np.searchsorted(t, mids) - 1, 0, len(t) - 1)
    return PhaseWaveform(np.asarray(phi_r)[idx], np.asarray(phi_b)[idx], total_duration, rabi_rate)
