"""Command-line front end.

    tmsv-forge optimize|scan|epr|bell|sweep|fit-superposition
        [--config PATH] [--seed U64] [--out DIR] [--exact|--sampled] [--shots N]

Exit codes: 0 success, 2 config error, 3 optimizer non-convergence,
4 analysis degeneracy.  Outputs are data only (CSV and JSON) and are
bit-identical for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis as an
from .config import RunConfig, ConfigError, analysis_n_max, load_config
from .dynamics import ControlHamiltonianSpec, TruncationWarning, propagate
from .fockcore import (DensityOperator, ModeDims, State, StateVector, TMSVParams, TruncationError,
                       basis_state, retruncate, squeezed_thermal_state, superposition_state,
                       thermal_joint_state, tmsv_state, vacuum_state)
from .optimizer import (THREADS_ENV, OptimizationProblem, OptimizationResult, optimize, revalidate,
                        worker_count)
from .tomography import ChiGrid, RngSpec, postselect_prep, scan_grid
from .waveform import export_waveform

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_DEGENERATE = 0, 2, 3, 4
COMMANDS = ("optimize", "scan", "epr", "bell", "sweep", "fit-superposition")


class Degenerate(RuntimeError):
    pass


# --- serialisation -------------------------------------------------------------

def jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def _fmt(x) -> str:
    return f"{float(x) + 0.0:.12e}"


# --- state construction --------------------------------------------------------

def ideal_state(cfg: RunConfig, n_max: Optional[int] = None, r: Optional[float] = None) -> State:
    t = cfg.target
    r = t.effective_r if r is None else r
    kind = "vacuum" if (t.kind == "vacuum" or r == 0) and t.kind != "superposition" else t.kind
    mixed = cfg.noise.active
    n = n_max or cfg.tomography.n_max or analysis_n_max(r, mixed)
    dims = ModeDims.square(n)
    if mixed:
        if kind == "vacuum":
            return thermal_joint_state(cfg.noise.n_bar_1, cfg.noise.n_bar_2, dims)
        return squeezed_thermal_state(TMSVParams(r, t.phi), cfg.noise.n_bar_1, cfg.noise.n_bar_2, dims)
    if kind == "vacuum":
        return vacuum_state(dims)
    if kind == "superposition":
        return superposition_state(r, dims)
    return tmsv_state(TMSVParams(r, t.phi), dims)


def target_state(cfg: RunConfig, dims: ModeDims, r: Optional[float] = None) -> StateVector:
    t = cfg.target
    r = t.effective_r if r is None else r
    if t.kind == "superposition":
        return superposition_state(r, dims, allow_truncation=True)
    return tmsv_state(TMSVParams(r, t.phi), dims, allow_truncation=True)


def optimization_problem(cfg: RunConfig, r: Optional[float] = None, dims: Optional[ModeDims] = None):
    o = cfg.optimizer
    dims = dims or cfg.optimization_dims()
    return OptimizationProblem(target_state(cfg, dims, r), dims, o.epsilon, o.t_max, o.filter_spec(),
                               o.rabi_rate, cfg.seed, o.max_iterations, o.n_starts)


def prepared_state(cfg: RunConfig, result: OptimizationResult, n_analysis: int) -> State:
    """Propagate |↓,0,0⟩ (or the thermal start) through the optimized waveform and postselect."""
    dims = result.dims
    if cfg.noise.active:
        start = thermal_joint_state(cfg.noise.n_bar_1, cfg.noise.n_bar_2, dims)
    else:
        start = basis_state(dims, 0, 0, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        out = propagate(ControlHamiltonianSpec(dims, result.waveform), start).state
    state, _ = postselect_prep(out)
    if isinstance(state, StateVector) and n_analysis > dims.n_max_1:
        state = retruncate(state, ModeDims.square(n_analysis))
    return state


def source_state(cfg: RunConfig, r: Optional[float] = None, *, optimized: bool = False) -> State:
    if not optimized:
        return ideal_state(cfg, r=r)
    r_eff = cfg.target.effective_r if r is None else r
    res = optimize(optimization_problem(cfg, r_eff, _opt_dims(cfg, r_eff)))
    return prepared_state(cfg, res, cfg.tomography.n_max or analysis_n_max(r_eff))


def _opt_dims(cfg: RunConfig, r: float) -> ModeDims:
    from .optimizer import default_n_max
    if cfg.optimizer.n_max is not None or r == cfg.target.effective_r:
        return cfg.optimization_dims()
    return ModeDims.square(default_n_max(r))


def _rng(cfg: RunConfig, stream: int = 0) -> RngSpec:
    return RngSpec(cfg.seed, stream)


# --- commands --------------------------------------------------------------------

def cmd_optimize(cfg: RunConfig, out: Path, args) -> int:
    problem = optimization_problem(cfg)
    result = optimize(problem)
    reval = None
    if cfg.optimizer.revalidate_n_max is not None:
        big = ModeDims.square(cfg.optimizer.revalidate_n_max)
        reval = revalidate(result, big, target_state(cfg, big))
    out.mkdir(parents=True, exist_ok=True)
    n_samples = int(round(cfg.optimizer.sample_rate * result.duration))
    if n_samples >= 2:
        export_waveform(result.waveform, cfg.optimizer.sample_rate, out / "waveform.csv")
        export_note = None
    else:
        # a start that collapsed to the duration floor cannot be sampled
        export_note = f"waveform.csv not written: duration {result.duration:.3e} s gives {n_samples} samples"
    with (out / "cost_trace.csv").open("w") as fh:
        fh.write("iteration,cost\n")
        for i, c in enumerate(result.cost_trace):
            fh.write(f"{i},{_fmt(c)}\n")
    meta = {"extended_runtime": cfg.extended_runtime,
            "tags": ["extended-runtime"] if cfg.extended_runtime else [],
            "n_max": problem.dims.n_max_1, "seed": cfg.seed, "target": cfg.target}
    write_json(out / "result.json", {
        "fidelity": result.fidelity, "cost": result.cost, "duration_s": result.duration,
        "converged": result.converged, "leakage": result.leakage, "start_index": result.start_index,
        "iterations": result.iterations, "coarse_params": result.coarse_params,
        "revalidated_fidelity": reval, "metadata": meta, "waveform_export": export_note,
    })
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def _scan(cfg: RunConfig, state: State, plane: str, sampled: bool, shots: int, stream: int) -> ChiGrid:
    t = cfg.tomography
    rng = _rng(cfg, 1000 + stream) if sampled else None
    return scan_grid(state, plane, t.extent, t.step, symmetry_fill=t.symmetry_fill,
                     shots=shots if sampled else None, rng=rng)


def _provenance(cfg: RunConfig, state: State, sampled: bool) -> dict:
    return {"target": jsonable(cfg.target), "noise": jsonable(cfg.noise), "n_max": state.dims.n_max_1,
            "state_source": cfg.tomography.state_source, "seed": cfg.seed if sampled else None}


def cmd_scan(cfg: RunConfig, out: Path, args) -> int:
    sampled, shots = _mode(cfg, args)
    state = source_state(cfg, optimized=cfg.tomography.state_source == "optimized")
    grids = [(p, _scan(cfg, state, p, sampled, shots, i)) for i, p in enumerate(cfg.tomography.planes)]
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for plane, g in grids:
        g.metadata.update(_provenance(cfg, state, sampled))
        csv, side = g.to_csv(out / f"chi_{plane.replace('-', '_')}.csv")
        files.append({"plane": plane, "csv": csv.name, "sidecar": side.name})
    write_json(out / "manifest.json", {"grids": files, "sampled": sampled, "shots": shots if sampled else None})
    return EXIT_OK


def cmd_epr(cfg: RunConfig, out: Path, args) -> int:
    sampled, shots = _mode(cfg, args)
    state = source_state(cfg, optimized=cfg.tomography.state_source == "optimized")
    rr = _scan(cfg, state, "re-re", sampled, shots, 0)
    ii = _scan(cfg, state, "im-im", sampled, shots, 3)
    try:
        epr, f_rr, f_ii = an.epr_from_grids(rr, ii)
    except an.AnalysisError as exc:
        raise Degenerate(str(exc))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "epr.json", {
        "epr": epr, "fit_re_re": f_rr, "fit_im_im": f_ii,
        "v_x_minus": an.variance_reciprocity(epr.v_beta_re_minus),
        "v_p_plus": an.variance_reciprocity(epr.v_beta_im_plus),
        "threshold": an.REID_THRESHOLD, "provenance": _provenance(cfg, state, sampled),
    })
    return EXIT_OK


def bell_settings_for(cfg: RunConfig):
    s = cfg.bell.settings
    if isinstance(s, str):
        if cfg.target.kind == "superposition":
            raise ConfigError("bell.settings", "'auto' needs a tmsv or vacuum target")
        return an.optimize_bell_settings(cfg.target.params())
    settings = an.BellSettings.symmetric(*s) if len(s) == 2 else an.BellSettings(*s)
    return settings, None


def cmd_bell(cfg: RunConfig, out: Path, args) -> int:
    settings, predicted = bell_settings_for(cfg)
    state = source_state(cfg, optimized=cfg.tomography.state_source == "optimized")
    result, trace = an.run_bell_experiment(state, settings, cfg.bell.total_shots, _rng(cfg, 2000),
                                           checkpoints=cfg.bell.checkpoints())
    out.mkdir(parents=True, exist_ok=True)
    with (out / "bell_trace.csv").open("w") as fh:
        fh.write(f"# classical_limit={an.CLASSICAL_BELL_LIMIT}\n# tmsv_limit={an.TMSV_BELL_LIMIT}\n")
        fh.write("shots,bell_signal,sigma\n")
        for m, b, sg in zip(trace.checkpoints, trace.bell_signal, trace.sigma):
            fh.write(f"{int(m)},{_fmt(b)},{_fmt(sg)}\n")
    write_json(out / "bell.json", {"result": result.to_dict(), "predicted_bell_signal": predicted,
                                   "classical_limit": an.CLASSICAL_BELL_LIMIT,
                                   "tmsv_limit": an.TMSV_BELL_LIMIT, "seed": cfg.seed})
    return EXIT_OK


SWEEP_COLUMNS = ("r", "v_squeezed", "v_antisqueezed", "db_squeezed", "db_antisqueezed",
                 "theory_db_squeezed", "theory_db_antisqueezed")


def sweep_rows(cfg: RunConfig, *, optimized: bool = False, sampled: bool = False, shots: int = 1000):
    sw = cfg.sweep
    alpha = np.linspace(-sw.alpha_extent, sw.alpha_extent, sw.alpha_points)
    rows = []
    for i, r in enumerate(sw.r_values):
        state = source_state(cfg, r=r, optimized=optimized and r > 0)
        prof = an.mean_axis_profiles(state, alpha, shots=shots if sampled else None,
                                     rng=_rng(cfg, 3000 + i) if sampled else None)
        es, ea = (prof.squeezed_err, prof.antisqueezed_err) if sampled else (None, None)
        fs = an.fit_gaussian_1d(prof.alpha, prof.squeezed, es)
        fa = an.fit_gaussian_1d(prof.alpha, prof.antisqueezed, ea)
        th = an.theory_db(r)
        rows.append((r, fs.variance, fa.variance, an.squeezing_db(fs.variance),
                     an.squeezing_db(fa.variance), th, -th))
    return rows


def cmd_sweep(cfg: RunConfig, out: Path, args) -> int:
    sampled, shots = _mode(cfg, args)
    try:
        rows = sweep_rows(cfg, optimized=args.optimize, sampled=sampled, shots=shots)
    except an.AnalysisError as exc:
        raise Degenerate(str(exc))
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join([f"{row[0]:g}"] + [_fmt(x) for x in row[1:]]) + "\n")
    write_json(out / "sweep.json", {"rows": [dict(zip(SWEEP_COLUMNS, row)) for row in rows],
                                    "noise": cfg.noise, "optimized": bool(args.optimize),
                                    "sampled": sampled, "seed": cfg.seed if sampled else None})
    return EXIT_OK


def cmd_fit_superposition(cfg: RunConfig, out: Path, args) -> int:
    sampled, shots = _mode(cfg, args)
    if args.grid:
        grid = ChiGrid.from_csv(args.grid)
    else:
        state = source_state(cfg, optimized=cfg.tomography.state_source == "optimized")
        grid = _scan(cfg, state, "re-re", sampled, shots, 0)
    try:
        fit = an.fit_superposition(grid)
    except an.AnalysisError as exc:
        raise Degenerate(str(exc))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "superposition_fit.json", {"fit": fit, "db_1": an.squeezing_db(math.exp(2 * fit.r_1)),
                                                "db_2": an.squeezing_db(math.exp(2 * fit.r_2))})
    x1, x2 = grid.points()
    with (out / "superposition_surface.csv").open("w") as fh:
        fh.write("axis1,axis2,re_chi,fit\n")
        for a, b, v, f in zip(x1, x2, grid.re_chi.ravel(), fit.surface(x1, x2)):
            fh.write(f"{a + 0.0:.12g},{b + 0.0:.12g},{_fmt(v)},{_fmt(f)}\n")
    return EXIT_OK


HANDLERS = {"optimize": cmd_optimize, "scan": cmd_scan, "epr": cmd_epr, "bell": cmd_bell,
            "sweep": cmd_sweep, "fit-superposition": cmd_fit_superposition}


def _mode(cfg: RunConfig, args):
    sampled = cfg.tomography.sampled if args.sampled is None else args.sampled
    shots = args.shots if args.shots is not None else cfg.tomography.shots
    return sampled, shots


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tmsv-forge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed, overrides the config")
        sp.add_argument("--out", help="output directory, overrides the config")
        mode = sp.add_mutually_exclusive_group()
        mode.add_argument("--exact", dest="sampled", action="store_false", default=None)
        mode.add_argument("--sampled", dest="sampled", action="store_true")
        sp.add_argument("--shots", type=int, help="readouts per setting in sampled mode")
        if name == "sweep":
            sp.add_argument("--optimize", action="store_true", help="prepare states with optimized waveforms")
        else:
            sp.set_defaults(optimize=False)
        if name == "fit-superposition":
            sp.add_argument("--grid", help="fit an existing re-re grid CSV instead of scanning")
        else:
            sp.set_defaults(grid=None)
    return p


def _error(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code, **extra}, sort_keys=True),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.shots is not None and args.shots < 1:
            raise ConfigError("--shots", "must be >= 1")
        try:
            worker_count()
        except ValueError as exc:
            raise ConfigError(THREADS_ENV, str(exc))
        if args.grid is not None and not Path(args.grid).is_file():
            raise ConfigError("--grid", f"file not found: {args.grid}")
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config", exc.message, field=exc.field)
    try:
        return HANDLERS[args.command](cfg, Path(cfg.output_dir), args)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config", exc.message, field=exc.field)
    except Degenerate as exc:
        return _error(EXIT_DEGENERATE, "analysis", str(exc))
    except TruncationError as exc:
        return _error(EXIT_CONFIG, "truncation", str(exc))


if __name__ == "__main__":
    sys.exit(main())
