"""Control Hamiltonian, piecewise-constant propagation and the SDF unitary.

The control Hamiltonian is

    H(φr, φb) = (Ω/2) σ+ (a1 e^{-iφr} + a2† e^{-iφb}) + h.c.

Every phase setting is a diagonal rotation of the zero-phase Hamiltonian,
H(φr, φb) = W H0 W† with W = exp(i(φr n1 − φb n2)), so one
eigendecomposition of H0 serves every segment of a waveform.  H also
conserves q = n1 − n2 + P↑, which lets pure-state evolution run inside
a single charge sector.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm
from scipy.stats import poisson

from .fockcore import (DOWN, UP, DensityOperator, ModeDims, State, StateVector, TruncationError,
                       ladder_operators, number_operator, spin_operators,
                       top_level_population)
from .waveform import PhaseWaveform

SIDEBANDS = ("both", "red", "blue")
GUARD_BAND = 4


class TruncationWarning(UserWarning):
    """Population reached the top Fock levels during propagation."""

    def __init__(self, message: str, leakage: float):
        super().__init__(message)
        self.leakage = leakage


@dataclass(frozen=True)
class ControlHamiltonianSpec:
    dims: ModeDims
    waveform: PhaseWaveform
    # "red" keeps only the JC term on mode 1, "blue" only the anti-JC term on mode 2
    sidebands: str = "both"

    def __post_init__(self):
        if self.sidebands not in SIDEBANDS:
            raise ValueError(f"sidebands must be one of {SIDEBANDS}")


def _mode_ops(dims: ModeDims):
    a1, a1d = ladder_operators(dims.n_max_1)
    a2, a2d = ladder_operators(dims.n_max_2)
    i1, i2 = np.eye(dims.n_max_1), np.eye(dims.n_max_2)
    return np.kron(a1, i2), np.kron(a1d, i2), np.kron(i1, a2), np.kron(i1, a2d)


def hamiltonian(dims: ModeDims, rabi_rate: float, phi_r: float, phi_b: float,
                sidebands: str = "both") -> np.ndarray:
    """Joint Hermitian matrix of the control Hamiltonian at fixed phases."""
    a1, _, _, a2d = _mode_ops(dims)
    x = np.zeros_like(a1)
    if sidebands in ("both", "red"):
        x = x + np.exp(-1j * phi_r) * a1
    if sidebands in ("both", "blue"):
        x = x + np.exp(-1j * phi_b) * a2d
    h = 0.5 * rabi_rate * np.kron(spin_operators()["sigma_plus"], x)
    return h + h.conj().T


def hamiltonian_segment(spec: ControlHamiltonianSpec, k: int) -> np.ndarray:
    w = spec.waveform
    if not 0 <= k < w.n_seg:
        raise IndexError(f"segment {k} out of range [0, {w.n_seg})")
    return hamiltonian(spec.dims, w.rabi_rate, w.phi_r[k], w.phi_b[k], spec.sidebands)


def basis_labels(dims: ModeDims) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    s, n1, n2 = np.meshgrid(np.arange(2), np.arange(dims.n_max_1), np.arange(dims.n_max_2), indexing="ij")
    return s.ravel(), n1.ravel(), n2.ravel()


def charge(dims: ModeDims) -> np.ndarray:
    """Conserved q = n1 − n2 + P↑ for every joint basis index."""
    s, n1, n2 = basis_labels(dims)
    return n1 - n2 + (s == UP)


def sector_indices(dims: ModeDims, q: int) -> np.ndarray:
    return np.flatnonzero(charge(dims) == q)


class SegmentPropagator:
    """Fast per-segment unitaries U_k = W_k exp(-i H0 δt) W_k† on a basis subset.

    ``indices`` restricts to a subspace invariant under H (a charge
    sector); None means the whole joint space.
    """

    def __init__(self, dims: ModeDims, rabi_rate: float, sidebands: str = "both",
                 indices: Optional[np.ndarray] = None):
        self.dims = dims
        self.rabi_rate = rabi_rate
        full = hamiltonian(dims, rabi_rate, 0.0, 0.0, sidebands)
        if indices is None:
            indices = np.arange(dims.joint)
        self.indices = np.asarray(indices)
        self.h0 = full[np.ix_(self.indices, self.indices)]
        self.evals, self.evecs = np.linalg.eigh(self.h0)
        _, n1, n2 = basis_labels(dims)
        self.n1 = n1[self.indices].astype(float)
        self.n2 = n2[self.indices].astype(float)
        self._u0_cache = {}

    @property
    def dim(self) -> int:
        return self.indices.size

    def base_unitary(self, dt: float) -> np.ndarray:
        u = self._u0_cache.get(dt)
        if u is None:
            u = (self.evecs * np.exp(-1j * self.evals * dt)) @ self.evecs.conj().T
            self._u0_cache = {dt: u}
        return u

    def phase_vectors(self, phi_r: np.ndarray, phi_b: np.ndarray) -> np.ndarray:
        """Diagonals of W_k, shape (N_seg, dim)."""
        return np.exp(1j * (np.outer(phi_r, self.n1) - np.outer(phi_b, self.n2)))

    def segment_unitary(self, phi_r: float, phi_b: float, dt: float) -> np.ndarray:
        d = self.phase_vectors(np.atleast_1d(phi_r), np.atleast_1d(phi_b))[0]
        return d[:, None] * self.base_unitary(dt) * d.conj()[None, :]

    def segment_hamiltonian(self, d: np.ndarray) -> np.ndarray:
        return d[:, None] * self.h0 * d.conj()[None, :]

    def forward(self, waveform: PhaseWaveform, psi0: np.ndarray) -> np.ndarray:
        """States at every segment boundary, shape (N_seg + 1, dim)."""
        u0 = self.base_unitary(waveform.segment_duration)
        d = self.phase_vectors(waveform.phi_r, waveform.phi_b)
        out = np.empty((waveform.n_seg + 1, self.dim), dtype=complex)
        out[0] = psi0
        v = psi0
        for k in range(waveform.n_seg):
            v = d[k] * (u0 @ (d[k].conj() * v))
            out[k + 1] = v
        return out


@dataclass(frozen=True)
class PropagationResult:
    state: State
    leakage: float


def _boundary_leakage(populations: np.ndarray, dims: ModeDims) -> float:
    return top_level_population(populations.reshape(dims.shape))


def propagate(spec: ControlHamiltonianSpec, initial: State, *,
              leakage_threshold: float = 1e-4, warn: bool = True) -> PropagationResult:
    """Apply the ordered product of segment unitaries to ``initial``.

    Leakage is the largest top-two-level population of either mode seen
    at any segment boundary.  Exceeding ``leakage_threshold`` emits a
    :class:`TruncationWarning`.
    """
    dims = spec.dims
    if initial.dims != dims:
        raise ValueError(f"initial state dims {initial.dims} do not match {dims}")
    w = spec.waveform
    if isinstance(initial, StateVector):
        psi = initial.amplitudes
        support = np.flatnonzero(np.abs(psi) > 0)
        q = charge(dims)
        idx = None
        if support.size and np.all(q[support] == q[support[0]]):
            idx = sector_indices(dims, int(q[support[0]]))
        prop = SegmentPropagator(dims, w.rabi_rate, spec.sidebands, idx)
        traj = prop.forward(w, psi[prop.indices])
        full = np.zeros((traj.shape[0], dims.joint), dtype=complex)
        full[:, prop.indices] = traj
        leak = max(_boundary_leakage(np.abs(v) ** 2, dims) for v in full)
        final = StateVector.from_unnormalized(dims, full[-1])
    else:
        prop = SegmentPropagator(dims, w.rabi_rate, spec.sidebands)
        u0 = prop.base_unitary(w.segment_duration)
        d = prop.phase_vectors(w.phi_r, w.phi_b)
        rho = np.array(initial.matrix)
        leak = _boundary_leakage(np.diag(rho).real, dims)
        for k in range(w.n_seg):
            u = d[k][:, None] * u0 * d[k].conj()[None, :]
            rho = u @ rho @ u.conj().T
            leak = max(leak, _boundary_leakage(np.diag(rho).real, dims))
        rho = 0.5 * (rho + rho.conj().T)
        final = DensityOperator(rho / np.trace(rho).real, dims)
    if warn and leak > leakage_threshold:
        warnings.warn(TruncationWarning(
            f"top-level population {leak:.3e} exceeds {leakage_threshold:.1e}", leak), stacklevel=2)
    return PropagationResult(final, float(leak))


# --- BCH diagnostic -------------------------------------------------------

@dataclass(frozen=True)
class BchDecomposition:
    squeeze_coeff_create: complex
    squeeze_coeff_annih: complex
    number_coeff_1: complex
    number_coeff_2: complex
    residual_norm: float
    commutator_norm: float
    # least-squares projection onto {σz a1†a2†, σz a1a2, σz n1, P↑, σz n2, P↓}
    fitted: Tuple[complex, ...] = ()


def guard_band_indices(dims: ModeDims, guard: int = GUARD_BAND) -> np.ndarray:
    _, n1, n2 = basis_labels(dims)
    return np.flatnonzero((n1 < dims.n_max_1 - guard) & (n2 < dims.n_max_2 - guard))


def _bch_basis(dims: ModeDims):
    a1, a1d, a2, a2d = _mode_ops(dims)
    sp = spin_operators()
    sz = sp["p_up"] - sp["p_down"]
    eye_m = np.eye(dims.modes)
    return [
        np.kron(sz, a1d @ a2d),
        np.kron(sz, a1 @ a2),
        np.kron(sz, a1d @ a1),
        np.kron(sp["p_up"], eye_m),
        np.kron(sz, a2d @ a2),
        np.kron(sp["p_down"], eye_m),
    ]


def bch_coefficients(rabi_rate: float, phi_r: Sequence[float], phi_b: Sequence[float]):
    """Analytic commutator coefficients for two consecutive segments.

    Returns (squeeze_create, squeeze_annih, number_1, number_2) such that
    [H_N, H_{N+1}] = sq_c σz a1†a2† + sq_a σz a1a2 + num_1 (σz n1 + P↑)
                     + num_2 (σz n2 − P↓), with σz = P↑ − P↓.
    """
    r0, r1 = phi_r
    b0, b1 = phi_b
    theta_rb = np.exp(1j * (r1 - b0)) - np.exp(-1j * (b1 - r0))
    theta_br = np.exp(1j * (b1 - r0)) - np.exp(-1j * (r1 - b0))
    w2 = rabi_rate ** 2
    return (w2 / 4 * theta_rb, w2 / 4 * theta_br,
            w2 / 2 * 1j * math.sin(r1 - r0), w2 / 2 * 1j * math.sin(b1 - b0))


def bch_commutator(spec: ControlHamiltonianSpec, k: int) -> BchDecomposition:
    w = spec.waveform
    if not 0 <= k < w.n_seg - 1:
        raise IndexError(f"need 0 <= k < {w.n_seg - 1}")
    if spec.sidebands != "both":
        raise ValueError("the decomposition assumes both sidebands")
    dims = spec.dims
    h_a, h_b = hamiltonian_segment(spec, k), hamiltonian_segment(spec, k + 1)
    comm = h_a @ h_b - h_b @ h_a
    sq_c, sq_a, num1, num2 = bch_coefficients(
        w.rabi_rate, w.phi_r[k:k + 2], w.phi_b[k:k + 2])
    basis = _bch_basis(dims)
    analytic = (sq_c * basis[0] + sq_a * basis[1] + num1 * (basis[2] + basis[3])
                + num2 * (basis[4] - basis[5]))
    g = guard_band_indices(dims)
    sub = np.ix_(g, g)
    design = np.stack([b[sub].ravel() for b in basis], axis=1)
    fitted, *_ = np.linalg.lstsq(design, comm[sub].ravel(), rcond=None)
    return BchDecomposition(
        complex(sq_c), complex(sq_a), complex(num1), complex(num2),
        residual_norm=float(np.max(np.abs(comm[sub] - analytic[sub]))),
        commutator_norm=float(np.max(np.abs(comm[sub]))),
        fitted=tuple(complex(c) for c in fitted),
    )


def bch_third_order_residual(dims: ModeDims, rabi_rate: float, phi_r: Sequence[float],
                             phi_b: Sequence[float], dt: float) -> float:
    """max|U_{N+1} U_N − exp(−i(H_N + H_{N+1})δt + ½[H_N, H_{N+1}]δt²)|.

    With A = −iH_N δt and B = −iH_{N+1} δt the second-order BCH
    exponent −½[A, B] equals +½[H_N, H_{N+1}]δt².
    """
    h0 = hamiltonian(dims, rabi_rate, phi_r[0], phi_b[0])
    h1 = hamiltonian(dims, rabi_rate, phi_r[1], phi_b[1])
    u = expm(-1j * h1 * dt) @ expm(-1j * h0 * dt)
    approx = expm(-1j * (h0 + h1) * dt + 0.5 * (h0 @ h1 - h1 @ h0) * dt ** 2)
    return float(np.max(np.abs(u - approx)))


# --- state-dependent force ------------------------------------------------

@dataclass(frozen=True)
class SdfParams:
    mode: int
    beta: complex
    phi_m: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        if self.mode not in (1, 2):
            raise ValueError("mode must be 1 or 2")
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")

    @classmethod
    def from_pulse(cls, mode: int, tau: float, phi_m: float, rabi_rate: float) -> "SdfParams":
        beta = -1j * (rabi_rate / 2) * tau * np.exp(1j * phi_m)
        return cls(mode, complex(beta), phi_m, tau)


def coherent_tail(beta: complex, n_max: int, levels: int = 2) -> float:
    """Weight of a coherent state |β⟩ in Fock levels ≥ n_max − levels."""
    return float(poisson.sf(n_max - levels - 1, abs(beta) ** 2))


@lru_cache(maxsize=4096)
def _displacement_cached(beta: complex, n_max: int) -> np.ndarray:
    a, ad = ladder_operators(n_max)
    d = expm(beta * ad - np.conj(beta) * a)
    d.setflags(write=False)
    return d


def displacement(beta: complex, n_max: int) -> np.ndarray:
    """Truncated displacement exp(β a† − β* a)."""
    return _displacement_cached(complex(beta), int(n_max))


def check_displacement_leakage(beta: complex, n_max: int, tol: float = 1e-4):
    tail = coherent_tail(beta, n_max)
    if tail > tol:
        raise TruncationError(f"|beta|={abs(beta):.3f} leaks {tail:.2e} into the top levels of n_max={n_max}")


def conditional_displacement(p: SdfParams, dims: ModeDims, *, leak_tol: float = 1e-4) -> np.ndarray:
    """Joint matrix of exp(σx (β a_j† − β* a_j)).

    Uses exp(σx G) = P₊ ⊗ e^{G} + P₋ ⊗ e^{−G} with P± the σx projectors.
    """
    n_j = dims.n_max_1 if p.mode == 1 else dims.n_max_2
    check_displacement_leakage(p.beta, n_j, leak_tol)
    sx = spin_operators()["sigma_x"]
    p_plus = 0.5 * (np.eye(2) + sx)
    p_minus = 0.5 * (np.eye(2) - sx)
    d_plus, d_minus = displacement(p.beta, n_j), displacement(-p.beta, n_j)
    if p.mode == 1:
        e2 = np.eye(dims.n_max_2)
        return np.kron(p_plus, np.kron(d_plus, e2)) + np.kron(p_minus, np.kron(d_minus, e2))
    e1 = np.eye(dims.n_max_1)
    return np.kron(p_plus, np.kron(e1, d_plus)) + np.kron(p_minus, np.kron(e1, d_minus))


def apply_conditional_displacement(tensor: np.ndarray, beta: complex, mode: int) -> np.ndarray:
    """Apply exp(σx (β a† − β* a)) on ``mode`` to a (2, n1, n2) amplitude tensor."""
    n_j = tensor.shape[mode]
    plus = (tensor[0] + tensor[1]) / math.sqrt(2)
    minus = (tensor[0] - tensor[1]) / math.sqrt(2)
    dp, dm = displacement(beta, n_j), displacement(-beta, n_j)
    if mode == 1:
        plus, minus = dp @ plus, dm @ minus
    else:
        plus, minus = plus @ dp.T, minus @ dm.T
    out = np.empty_like(tensor)
    out[0] = (plus + minus) / math.sqrt(2)
    out[1] = (plus - minus) / math.sqrt(2)
    return out
