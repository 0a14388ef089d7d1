"""Gradient-based synthesis of phase waveforms.

Parameters are the coarse red/blue phases (``n_opt`` each) plus a
duration scale s with T = s·T_max.  The cost is

    C = 1 − F + ε·T/T_max,   F = |⟨↓, target| U |↓, 0, 0⟩|².

The propagation starts in |↓,0,0⟩, which lies in the q = n1 − n2 + P↑ = 0
sector, so only that sector (dimension ≈ 2·n_max) is ever evolved.
Gradients come from one forward and one backward sweep: since
H(φr, φb) = W H0 W† with W = exp(i(φr·n1 − φb·n2)),
∂o/∂φr_k = i(f_{k+1} − f_k) with f_k = ⟨λ_k|n1|ψ_k⟩, and likewise for φb
with n2 and the opposite sign.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import minimize

from .dynamics import ControlHamiltonianSpec, SegmentPropagator, propagate, sector_indices
from .fockcore import TWO_PI, ModeDims, StateVector, basis_state, retruncate
from .tomography import RngSpec
from .waveform import FilterSpec, PhaseWaveform, filter_matrix

DEFAULT_RABI = TWO_PI * 2_000.0
DEFAULT_N_MAX = {0.25: 6, 0.75: 19, 1.0: 32, 1.25: 28}
SUPERPOSITION_N_MAX = 7
SCALE_MIN = 1e-4
FD_STEP = 1e-6
THREADS_ENV = "TMSV_FORGE_THREADS"


def worker_count(requested: Optional[int] = None) -> int:
    cap = os.environ.get(THREADS_ENV)
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            limit = int(cap)
        except ValueError:
            limit = 0
        if limit < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {cap!r}")
        n = min(n, limit)
    return max(1, n)


def default_n_max(r: float) -> int:
    """Truncation used for a TMSV target of squeezing r."""
    for key in sorted(DEFAULT_N_MAX):
        if r <= key + 1e-12:
            return DEFAULT_N_MAX[key]
    return DEFAULT_N_MAX[max(DEFAULT_N_MAX)]


@dataclass(frozen=True, eq=False)
class OptimizationProblem:
    target: StateVector
    dims: ModeDims
    epsilon: float = 0.05
    t_max: float = 2e-3
    filter: FilterSpec = field(default_factory=FilterSpec)
    rabi_rate: float = DEFAULT_RABI
    seed: int = 0
    max_iterations: int = 500
    n_starts: int = 8

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.n_starts < 1 or self.max_iterations < 1:
            raise ValueError("n_starts and max_iterations must be >= 1")
        if self.target.dims != self.dims:
            raise ValueError("target dims differ from problem dims")

    @property
    def n_params(self) -> int:
        return 2 * self.filter.n_opt + 1


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    waveform: PhaseWaveform
    coarse_params: np.ndarray
    fidelity: float
    cost: float
    cost_trace: np.ndarray
    leakage: float
    converged: bool
    start_index: int = 0
    iterations: int = 0
    revalidated_fidelity: Optional[float] = None
    dims: Optional[ModeDims] = None
    target: Optional[StateVector] = None

    @property
    def duration(self) -> float:
        return self.waveform.total_duration


class _Evaluator:
    """Cost and exact gradient for one problem; holds the sector propagator."""

    def __init__(self, problem: OptimizationProblem):
        self.p = problem
        dims = problem.dims
        self.idx = sector_indices(dims, 0)
        self.prop = SegmentPropagator(dims, problem.rabi_rate, "both", self.idx)
        psi0 = basis_state(dims, 0, 0, 0).amplitudes
        self.psi0 = psi0[self.idx]
        self.target = problem.target.amplitudes[self.idx]
        self.fmat = filter_matrix(problem.filter)
        self.n_opt = problem.filter.n_opt
        self.n_seg = problem.filter.n_seg

    def split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p.n_params,) or not np.all(np.isfinite(x)):
            raise ValueError("parameters must be a finite vector of length 2*n_opt + 1")
        scale = x[-1]
        if not 0 < scale <= 1 + 1e-12:
            raise ValueError(f"duration scale {scale} puts T outside (0, T_max]")
        return x[:self.n_opt], x[self.n_opt:2 * self.n_opt], scale

    def waveform(self, x) -> PhaseWaveform:
        pr, pb, s = self.split(x)
        return PhaseWaveform(self.fmat @ pr, self.fmat @ pb, s * self.p.t_max, self.p.rabi_rate)

    def overlap(self, w: PhaseWaveform):
        traj = self.prop.forward(w, self.psi0)
        return complex(np.vdot(self.target, traj[-1])), traj

    def cost(self, x) -> float:
        w = self.waveform(x)
        o, _ = self.overlap(w)
        return 1.0 - abs(o) ** 2 + self.p.epsilon * x[-1]

    def fidelity(self, x) -> float:
        o, _ = self.overlap(self.waveform(x))
        return abs(o) ** 2

    def cost_and_grad(self, x):
        w = self.waveform(x)
        o, psi = self.overlap(w)
        n = w.n_seg
        u0 = self.prop.base_unitary(w.segment_duration)
        d = self.prop.phase_vectors(w.phi_r, w.phi_b)
        lam = np.empty_like(psi)
        lam[n] = self.target
        for k in range(n - 1, -1, -1):
            lam[k] = d[k] * (u0.conj().T @ (d[k].conj() * lam[k + 1]))
        f1 = np.einsum("ki,ki->k", lam.conj(), self.prop.n1 * psi)
        f2 = np.einsum("ki,ki->k", lam.conj(), self.prop.n2 * psi)
        do_r = 1j * (f1[1:] - f1[:-1])
        do_b = -1j * (f2[1:] - f2[:-1])
        # ∂o/∂δt = Σ_k ⟨λ_{k+1}| −i H_k |ψ_{k+1}⟩ with H_k = W_k H0 W_k†
        a = d.conj() * lam[1:]
        b = d.conj() * psi[1:]
        do_dt = -1j * np.einsum("ki,ki->", a.conj(), b @ self.prop.h0.T)
        cj = np.conj(o)
        g_r = -2 * np.real(cj * do_r)
        g_b = -2 * np.real(cj * do_b)
        g_s = -2 * np.real(cj * do_dt) * self.p.t_max / n + self.p.epsilon
        grad = np.concatenate([self.fmat.T @ g_r, self.fmat.T @ g_b, [g_s]])
        return 1.0 - abs(o) ** 2 + self.p.epsilon * x[-1], grad


def cost(problem: OptimizationProblem, coarse_params) -> float:
    return _Evaluator(problem).cost(coarse_params)


def gradient(problem: OptimizationProblem, coarse_params, *, mode: str = "exact",
             step: float = FD_STEP) -> np.ndarray:
    """Cost gradient; ``mode="fd"`` gives the central finite difference."""
    ev = _Evaluator(problem)
    x = np.asarray(coarse_params, dtype=float)
    if mode == "exact":
        return ev.cost_and_grad(x)[1]
    if mode != "fd":
        raise ValueError(f"unknown gradient mode {mode!r}")
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (ev.cost(x + e) - ev.cost(x - e)) / (2 * step)
    return g


def initial_guess(problem: OptimizationProblem, start: int) -> np.ndarray:
    gen = RngSpec(problem.seed, stream_id=start).generator()
    phases = gen.uniform(0.0, TWO_PI, 2 * problem.filter.n_opt)
    return np.concatenate([phases, [gen.uniform(0.3, 1.0)]])


@dataclass
class _StartOutcome:
    index: int
    x: np.ndarray
    cost: float
    trace: List[float]
    iterations: int


def _run_start(problem: OptimizationProblem, start: int) -> _StartOutcome:
    """One start: a fidelity-only warm-up over the phases, then the full cost.

    Near T = 0 the fidelity gain is second order in T while the duration
    penalty is first order, so a direct descent from a random guess often
    slides to the duration floor and stalls at F = |⟨target|↓,0,0⟩|².  The
    warm-up keeps the guessed duration fixed and maximises F alone; the
    full cost is then minimised from that point.
    """
    ev = _Evaluator(problem)
    n_ph = 2 * problem.filter.n_opt
    memo = {}

    def fun(x):
        key = x.tobytes()
        if key not in memo:
            memo.clear()
            memo[key] = ev.cost_and_grad(x)
        return memo[key]

    x0 = initial_guess(problem, start)
    scale = x0[-1]

    def warm(ph):
        c, g = fun(np.concatenate([ph, [scale]]))
        return c - problem.epsilon * scale, g[:n_ph]

    budget = max(1, problem.max_iterations // 4)
    pre = minimize(warm, x0[:n_ph], jac=True, method="L-BFGS-B",
                   options={"maxiter": budget, "gtol": 1e-6, "ftol": 1e-10, "maxcor": 20})
    x1 = np.concatenate([pre.x, [scale]])
    trace = [fun(x1)[0]]

    def callback(xk):
        trace.append(fun(np.asarray(xk))[0])

    bounds = [(None, None)] * n_ph + [(SCALE_MIN, 1.0)]
    res = minimize(fun, x1, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
                   options={"maxiter": problem.max_iterations, "gtol": 1e-6, "ftol": 1e-10,
                            "maxcor": 20})
    x = np.asarray(res.x)
    c = ev.cost(x)
    return _StartOutcome(start, x, c, trace, int(pre.nit) + int(res.nit))


def optimize(problem: OptimizationProblem, *, workers: Optional[int] = None) -> OptimizationResult:
    """Multi-start L-BFGS-B; the lowest final cost wins, ties to the lowest start index."""
    n_workers = min(worker_count(workers), problem.n_starts)
    starts = range(problem.n_starts)
    if n_workers == 1:
        outcomes = [_run_start(problem, k) for k in starts]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(lambda k: _run_start(problem, k), starts))
    best = min(outcomes, key=lambda o: (o.cost, o.index))
    ev = _Evaluator(problem)
    w = ev.waveform(best.x)
    fid = ev.fidelity(best.x)
    c = 1.0 - fid + problem.epsilon * w.total_duration / problem.t_max
    spec = ControlHamiltonianSpec(problem.dims, w)
    leak = propagate(spec, basis_state(problem.dims, 0, 0, 0), warn=False).leakage
    return OptimizationResult(w, best.x, fid, c, np.asarray(best.trace), leak,
                              converged=c < problem.epsilon, start_index=best.index,
                              iterations=best.iterations, dims=problem.dims,
                              target=problem.target)


def revalidate(result: OptimizationResult, larger_dims: ModeDims,
               target: Optional[StateVector] = None) -> float:
    """Fidelity of the optimized waveform re-propagated in a larger truncation.

    ``target`` defaults to the optimization target padded into
    ``larger_dims``; the same dims return the stored fidelity unchanged.
    """
    if result.dims is None:
        raise ValueError("result carries no optimization dims")
    if larger_dims == result.dims:
        return result.fidelity
    if not larger_dims.larger_than(result.dims):
        raise ValueError(f"{larger_dims} is not larger than {result.dims}")
    if target is None:
        if result.target is None:
            raise ValueError("no target available for revalidation")
        target = result.target
    if target.dims != larger_dims:
        target = retruncate(target, larger_dims)
    spec = ControlHamiltonianSpec(larger_dims, result.waveform)
    out = propagate(spec, basis_state(larger_dims, 0, 0, 0), warn=False).state
    return float(abs(np.vdot(target.amplitudes, out.amplitudes)) ** 2)
