"""Truncated Fock-space algebra for one spin and two oscillators.

Basis ordering is spin ⊗ mode1 ⊗ mode2 with the spin index slowest.
Spin index 0 is |↓⟩ and index 1 is |↑⟩.  Operators are plain complex
``numpy`` arrays; states carry their dimensions so that shape mistakes
surface early.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from scipy.linalg import expm

NORM_TOL = 1e-10
DOWN, UP = 0, 1

TWO_PI = 2.0 * math.pi


class TruncationError(ValueError):
    """A truncated Fock space is too small for the requested object."""


@dataclass(frozen=True)
class ModeDims:
    n_max_1: int
    n_max_2: int
    spin_dim: int = 2

    def __post_init__(self):
        if self.spin_dim != 2:
            raise ValueError("spin dimension must be 2")
        if self.n_max_1 < 2 or self.n_max_2 < 2:
            raise ValueError(f"need at least 2 Fock levels per mode, got {self.n_max_1}, {self.n_max_2}")

    @classmethod
    def square(cls, n_max: int) -> "ModeDims":
        return cls(n_max, n_max)

    @property
    def joint(self) -> int:
        return self.spin_dim * self.n_max_1 * self.n_max_2

    @property
    def modes(self) -> int:
        return self.n_max_1 * self.n_max_2

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.spin_dim, self.n_max_1, self.n_max_2)

    def larger_than(self, other: "ModeDims") -> bool:
        return (self.n_max_1 >= other.n_max_1 and self.n_max_2 >= other.n_max_2
                and self != other)


@dataclass(frozen=True)
class TMSVParams:
    """Squeezing magnitude ``r`` and correlation phase ``phi`` (radians)."""

    r: float
    phi: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.r) or not math.isfinite(self.phi):
            raise ValueError("TMSV parameters must be finite")
        if self.r < 0:
            raise ValueError(f"squeezing parameter must be non-negative, got {self.r}")
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)


@dataclass(frozen=True, eq=False)
class StateVector:
    dims: ModeDims
    amplitudes: np.ndarray
    # pre-renormalisation truncation deficit, when the constructor truncated a series
    truncation_deficit: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.dims.joint:
            raise ValueError(f"expected {self.dims.joint} amplitudes, got {amps.size}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalised (norm={norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_unnormalized(cls, dims: ModeDims, amplitudes, **kw) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm < 1e-300:
            raise ValueError("cannot normalise a zero vector")
        return cls(dims, amps / norm, **kw)

    @property
    def tensor(self) -> np.ndarray:
        """Amplitudes reshaped to (spin, n1, n2)."""
        return self.amplitudes.reshape(self.dims.shape)

    def oscillator_matrix(self, spin: int = DOWN) -> np.ndarray:
        """Mode amplitudes Ψ[n1, n2] of one spin branch (not renormalised)."""
        return self.tensor[spin]

    def to_density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()), self.dims)


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Mixed state.  ``dims`` is None for a single-mode operator."""

    matrix: np.ndarray
    dims: Optional[ModeDims] = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        if self.dims is not None and m.shape[0] != self.dims.joint:
            raise ValueError(f"expected dimension {self.dims.joint}, got {m.shape[0]}")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12:
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > 1e-12:
            raise ValueError(f"density matrix trace is {tr!r}")
        # eigenvalue check is O(d^3); skip it for large joint spaces
        if m.shape[0] <= 1024 and np.linalg.eigvalsh(m)[0] < -1e-10:
            raise ValueError("density matrix has negative eigenvalues")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def tensor(self) -> np.ndarray:
        """Matrix reshaped to (s, n1, n2, s', n1', n2')."""
        return self.matrix.reshape(self.dims.shape + self.dims.shape)


State = Union[StateVector, DensityOperator]


def ladder_operators(n_max: int) -> Tuple[np.ndarray, np.ndarray]:
    """Annihilation and creation matrices on ``n_max`` levels."""
    if n_max < 2:
        raise ValueError(f"n_max must be >= 2, got {n_max}")
    a = np.diag(np.sqrt(np.arange(1, n_max, dtype=float)), k=1).astype(complex)
    return a, a.conj().T


def number_operator(n_max: int) -> np.ndarray:
    return np.diag(np.arange(n_max, dtype=float)).astype(complex)


def spin_operators() -> dict:
    """σ+, σ-, σx and the two projectors, in (↓, ↑) ordering."""
    sp = np.zeros((2, 2), dtype=complex)
    sp[UP, DOWN] = 1.0
    p_down = np.diag([1.0, 0.0]).astype(complex)
    p_up = np.diag([0.0, 1.0]).astype(complex)
    return {
        "sigma_plus": sp,
        "sigma_minus": sp.conj().T,
        "sigma_x": sp + sp.conj().T,
        "p_down": p_down,
        "p_up": p_up,
    }


def embed(op_spin, op_1, op_2, dims: Optional[ModeDims] = None) -> np.ndarray:
    """Kronecker product spin ⊗ mode1 ⊗ mode2."""
    op_spin, op_1, op_2 = (np.asarray(o, dtype=complex) for o in (op_spin, op_1, op_2))
    if dims is not None:
        want = dims.shape
        got = (op_spin.shape[0], op_1.shape[0], op_2.shape[0])
        if got != want:
            raise ValueError(f"factor dimensions {got} do not match {want}")
    if op_spin.shape != (2, 2):
        raise ValueError("spin factor must be 2x2")
    return np.kron(op_spin, np.kron(op_1, op_2))


def basis_state(dims: ModeDims, spin: int, n1: int, n2: int) -> StateVector:
    v = np.zeros(dims.shape, dtype=complex)
    v[spin, n1, n2] = 1.0
    return StateVector(dims, v)


def vacuum_state(dims: ModeDims) -> StateVector:
    return basis_state(dims, DOWN, 0, 0)


def tmsv_deficit(r: float, n_max: int) -> float:
    """Probability weight of the two-mode series beyond ``n_max`` levels."""
    return math.tanh(r) ** (2 * n_max)


def _tmsv_coefficients(params: TMSVParams, n_max: int) -> np.ndarray:
    n = np.arange(n_max)
    return (np.exp(1j * params.phi) * math.tanh(params.r)) ** n / math.cosh(params.r)


def _check_deficit(deficit: float, tol: float, allow_truncation: bool):
    if deficit > tol and not allow_truncation:
        raise TruncationError(
            f"truncation deficit {deficit:.3e} exceeds {tol:.1e}; raise n_max or pass allow_truncation=True")


def tmsv_state(params: TMSVParams, dims: ModeDims, *, deficit_tol: float = 1e-4,
               allow_truncation: bool = False) -> StateVector:
    """|↓⟩ ⊗ TMSV(r, φ), truncated and renormalised.

    The pre-normalisation deficit is kept on ``truncation_deficit``.
    """
    if dims.n_max_1 != dims.n_max_2:
        raise ValueError("TMSV needs equal truncation in both modes")
    n_max = dims.n_max_1
    deficit = tmsv_deficit(params.r, n_max)
    _check_deficit(deficit, deficit_tol, allow_truncation)
    amps = np.zeros(dims.shape, dtype=complex)
    idx = np.arange(n_max)
    amps[DOWN, idx, idx] = _tmsv_coefficients(params, n_max)
    return StateVector.from_unnormalized(dims, amps, truncation_deficit=deficit)


def superposition_state(r: float, dims: ModeDims, *, deficit_tol: float = 1e-4,
                        allow_truncation: bool = False) -> StateVector:
    """Even superposition TMSV(r, 0) + TMSV(r, π), numerically renormalised.

    Only even Fock pairs survive; the deficit reported is that of the
    renormalised infinite superposition.
    """
    if dims.n_max_1 != dims.n_max_2:
        raise ValueError("superposition needs equal truncation in both modes")
    n_max = dims.n_max_1
    c = _tmsv_coefficients(TMSVParams(r, 0.0), n_max) + _tmsv_coefficients(TMSVParams(r, math.pi), n_max)
    # exact squared norm of the untruncated sum is 2(1 + sech 2r)
    deficit = max(0.0, 1.0 - float(np.sum(np.abs(c) ** 2)) / (2.0 * (1.0 + 1.0 / math.cosh(2 * r))))
    _check_deficit(deficit, deficit_tol, allow_truncation)
    amps = np.zeros(dims.shape, dtype=complex)
    idx = np.arange(n_max)
    amps[DOWN, idx, idx] = c
    return StateVector.from_unnormalized(dims, amps, truncation_deficit=deficit)


def squeeze_generator(params: TMSVParams, n_max_1: int, n_max_2: int) -> np.ndarray:
    """r(e^{iφ} a1†a2† − e^{−iφ} a1a2), so that exp(G)|0,0⟩ matches ``tmsv_state``."""
    a1, a1d = ladder_operators(n_max_1)
    a2, a2d = ladder_operators(n_max_2)
    g = np.exp(1j * params.phi) * np.kron(a1d, a2d) - np.exp(-1j * params.phi) * np.kron(a1, a2)
    return params.r * g


def squeeze2_unitary(params: TMSVParams, dims: ModeDims) -> np.ndarray:
    """Two-mode squeeze operator on the oscillator factors (n1·n2 square)."""
    return expm(squeeze_generator(params, dims.n_max_1, dims.n_max_2))


def thermal_state(n_bar: float, n_max: int) -> DensityOperator:
    """Single-mode Bose-Einstein state, truncated and renormalised."""
    if n_bar < 0:
        raise ValueError(f"mean occupation must be non-negative, got {n_bar}")
    if n_max < 1:
        raise ValueError("n_max must be positive")
    n = np.arange(n_max)
    if n_bar == 0:
        p = (n == 0).astype(float)
    else:
        p = n_bar ** n / (1.0 + n_bar) ** (n + 1)
    p = p / p.sum()
    return DensityOperator(np.diag(p).astype(complex))


def product_density(spin_rho, rho_1, rho_2, dims: ModeDims) -> DensityOperator:
    m = embed(spin_rho, rho_1, rho_2, dims)
    # kron of normalised factors; tidy rounding so the trace check holds exactly
    m = 0.5 * (m + m.conj().T)
    return DensityOperator(m / np.trace(m).real, dims)


def thermal_joint_state(n_bar_1: float, n_bar_2: float, dims: ModeDims) -> DensityOperator:
    """|↓⟩⟨↓| ⊗ thermal ⊗ thermal."""
    spin = spin_operators()["p_down"]
    return product_density(spin, thermal_state(n_bar_1, dims.n_max_1).matrix,
                           thermal_state(n_bar_2, dims.n_max_2).matrix, dims)


def squeezed_thermal_state(params: TMSVParams, n_bar_1: float, n_bar_2: float,
                           dims: ModeDims) -> DensityOperator:
    """Ideal two-mode squeeze applied to a thermal product, spin in |↓⟩."""
    s = squeeze2_unitary(params, dims)
    rho_modes = np.kron(thermal_state(n_bar_1, dims.n_max_1).matrix,
                        thermal_state(n_bar_2, dims.n_max_2).matrix)
    rho_modes = s @ rho_modes @ s.conj().T
    full = np.kron(spin_operators()["p_down"], rho_modes)
    full = 0.5 * (full + full.conj().T)
    return DensityOperator(full / np.trace(full).real, dims)


def inner(a: StateVector, b: StateVector) -> complex:
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def fidelity(a: State, b: State) -> float:
    """|⟨a|b⟩|², clipped to [0, 1].

    When one argument is a density operator the result is ⟨ψ|ρ|ψ⟩; two
    density operators are not supported.
    """
    if isinstance(a, DensityOperator) and isinstance(b, DensityOperator):
        raise TypeError("fidelity between two mixed states is not implemented")
    if isinstance(a, DensityOperator):
        a, b = b, a
    if isinstance(b, DensityOperator):
        if a.dims != b.dims:
            raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
        val = np.vdot(a.amplitudes, b.matrix @ a.amplitudes).real
        return float(min(1.0, max(0.0, val)))
    return float(min(1.0, abs(inner(a, b)) ** 2))


def retruncate(state: StateVector, dims: ModeDims) -> StateVector:
    """Copy amplitudes into another truncation (padding or cutting), then renormalise."""
    src = state.tensor
    out = np.zeros(dims.shape, dtype=complex)
    m1 = min(src.shape[1], dims.n_max_1)
    m2 = min(src.shape[2], dims.n_max_2)
    out[:, :m1, :m2] = src[:, :m1, :m2]
    return StateVector.from_unnormalized(dims, out)


def mean_occupation(state: StateVector, mode: int) -> float:
    p = np.abs(state.tensor) ** 2
    n = np.arange(p.shape[mode])
    axis = (0, 2) if mode == 1 else (0, 1)
    return float(np.dot(p.sum(axis=axis), n))


def top_level_population(populations: np.ndarray, levels: int = 2) -> float:
    """Max over both modes of the weight in the top ``levels`` Fock levels.

    ``populations`` has shape (spin, n1, n2).
    """
    p1 = populations.sum(axis=(0, 2))
    p2 = populations.sum(axis=(0, 1))
    return float(max(p1[-levels:].sum(), p2[-levels:].sum()))
