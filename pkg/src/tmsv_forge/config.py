"""JSON run configuration, validated in full before any work starts."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

from .fockcore import ModeDims, TMSVParams, tmsv_deficit
from .tomography import PLANES
from .waveform import FilterSpec

SCHEMA_VERSION = 1
TARGET_KINDS = ("tmsv", "superposition", "vacuum")
STATE_SOURCES = ("ideal", "optimized")
SWEEP_R = (0.0, 0.25, 0.75, 1.0, 1.25)
EXTENDED_RUNTIME_N_MAX = 20


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message

    def report(self) -> dict:
        return {"error": "config", "field": self.field, "message": self.message}


def _check(cond, name, msg):
    if not cond:
        raise ConfigError(name, msg)


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


@dataclass(frozen=True)
class TargetConfig:
    kind: str = "tmsv"
    r: float = 1.0
    phi: float = 0.0

    def validate(self):
        _check(self.kind in TARGET_KINDS, "target.kind", f"must be one of {TARGET_KINDS}")
        _check(_finite(self.r) and self.r >= 0, "target.r", "must be finite and >= 0")
        _check(_finite(self.phi), "target.phi", "must be finite")

    @property
    def effective_r(self) -> float:
        return 0.0 if self.kind == "vacuum" else float(self.r)

    def params(self) -> TMSVParams:
        return TMSVParams(self.effective_r, self.phi)


@dataclass(frozen=True)
class OptimizerConfig:
    epsilon: float = 0.05
    t_max: float = 2e-3
    n_opt: int = 30
    n_seg: int = 240
    cutoff_product: float = 2 * math.pi * 10_000
    kernel_halfwidth: Optional[int] = None
    rabi_rate: float = 2 * math.pi * 2_000.0
    max_iterations: int = 500
    n_starts: int = 8
    n_max: Optional[int] = None
    revalidate_n_max: Optional[int] = None
    sample_rate: float = 1e6

    def validate(self):
        _check(_finite(self.epsilon) and 0 < self.epsilon < 1, "optimizer.epsilon", "must lie in (0, 1)")
        _check(_finite(self.t_max) and self.t_max > 0, "optimizer.t_max", "must be positive")
        _check(_finite(self.rabi_rate) and self.rabi_rate > 0, "optimizer.rabi_rate", "must be positive")
        _check(isinstance(self.max_iterations, int) and self.max_iterations >= 1,
               "optimizer.max_iterations", "must be a positive integer")
        _check(isinstance(self.n_starts, int) and self.n_starts >= 1, "optimizer.n_starts",
               "must be a positive integer")
        _check(_finite(self.sample_rate) and self.sample_rate > 0, "optimizer.sample_rate", "must be positive")
        for name in ("n_max", "revalidate_n_max"):
            v = getattr(self, name)
            _check(v is None or (isinstance(v, int) and v >= 2), f"optimizer.{name}", "must be an integer >= 2")
        try:
            self.filter_spec()
        except ValueError as exc:
            raise ConfigError("optimizer.filter", str(exc))

    def filter_spec(self) -> FilterSpec:
        return FilterSpec(self.cutoff_product, self.n_opt, self.n_seg, self.kernel_halfwidth)


@dataclass(frozen=True)
class TomographyConfig:
    planes: Tuple[str, ...] = tuple(PLANES)
    extent: float = 2.0
    step: float = 0.25
    symmetry_fill: bool = True
    shots: int = 1000
    sampled: bool = False
    state_source: str = "ideal"
    n_max: Optional[int] = None

    def validate(self):
        _check(len(self.planes) > 0 and all(p in PLANES for p in self.planes), "tomography.planes",
               f"entries must be among {sorted(PLANES)}")
        _check(_finite(self.extent) and self.extent >= 0, "tomography.extent", "must be >= 0")
        _check(_finite(self.step) and self.step > 0, "tomography.step", "must be > 0")
        _check(isinstance(self.shots, int) and self.shots >= 1, "tomography.shots", "must be >= 1")
        _check(self.state_source in STATE_SOURCES, "tomography.state_source", f"must be one of {STATE_SOURCES}")
        _check(self.n_max is None or (isinstance(self.n_max, int) and self.n_max >= 2),
               "tomography.n_max", "must be an integer >= 2")


@dataclass(frozen=True)
class BellConfig:
    settings: Union[str, Tuple[float, ...]] = "auto"
    total_shots: int = 251_000
    schedule: Optional[Tuple[int, ...]] = None

    def validate(self):
        if isinstance(self.settings, str):
            _check(self.settings == "auto", "bell.settings", "must be 'auto' or a list of 2 or 4 numbers")
        else:
            _check(len(self.settings) in (2, 4) and all(_finite(x) for x in self.settings),
                   "bell.settings", "must be 'auto' or a list of 2 or 4 numbers")
        _check(isinstance(self.total_shots, int) and self.total_shots >= 4, "bell.total_shots", "must be >= 4")
        if self.schedule is not None:
            _check(all(isinstance(m, int) and 4 <= m <= self.total_shots for m in self.schedule),
                   "bell.schedule", "entries must be integers in [4, total_shots]")

    def checkpoints(self) -> List[int]:
        if self.schedule is not None:
            return sorted(set(self.schedule) | {self.total_shots})
        pts = {int(round(x)) for x in 10 ** __import__("numpy").linspace(2, math.log10(self.total_shots), 25)}
        return sorted(p for p in pts | {self.total_shots} if p >= 4)


@dataclass(frozen=True)
class SweepConfig:
    r_values: Tuple[float, ...] = SWEEP_R
    alpha_extent: float = 3.0
    alpha_points: int = 25

    def validate(self):
        _check(len(self.r_values) > 0 and all(_finite(r) and r >= 0 for r in self.r_values),
               "sweep.r_values", "must be a non-empty list of r >= 0")
        _check(_finite(self.alpha_extent) and self.alpha_extent > 0, "sweep.alpha_extent", "must be > 0")
        _check(isinstance(self.alpha_points, int) and self.alpha_points >= 5, "sweep.alpha_points", "must be >= 5")


@dataclass(frozen=True)
class NoiseConfig:
    n_bar_1: float = 0.0
    n_bar_2: float = 0.0

    def validate(self):
        for name in ("n_bar_1", "n_bar_2"):
            v = getattr(self, name)
            _check(_finite(v) and v >= 0, f"noise.{name}", "must be finite and >= 0")

    @property
    def active(self) -> bool:
        return self.n_bar_1 > 0 or self.n_bar_2 > 0


@dataclass(frozen=True)
class RunConfig:
    target: TargetConfig = field(default_factory=TargetConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    tomography: TomographyConfig = field(default_factory=TomographyConfig)
    bell: BellConfig = field(default_factory=BellConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    output_dir: str = "out"
    lab_metadata: Optional[dict] = None
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> "RunConfig":
        _check(self.schema_version == SCHEMA_VERSION, "schema_version", f"must be {SCHEMA_VERSION}")
        _check(isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64, "seed", "must be an unsigned 64-bit integer")
        _check(isinstance(self.output_dir, str) and self.output_dir, "output_dir", "must be a non-empty path")
        for sub in (self.target, self.optimizer, self.tomography, self.bell, self.sweep, self.noise):
            sub.validate()
        if self.lab_metadata is not None:
            allowed = {"omega_1", "omega_2", "omega_0", "delta_omega_L"}
            _check(isinstance(self.lab_metadata, dict) and set(self.lab_metadata) <= allowed
                   and all(_finite(v) for v in self.lab_metadata.values()),
                   "lab_metadata", f"keys must be among {sorted(allowed)} with numeric values")
        if self.noise.active:
            _check(self.target.kind != "superposition", "noise", "thermal noise is supported for tmsv and vacuum targets")
        return self

    def optimization_dims(self) -> ModeDims:
        from .optimizer import SUPERPOSITION_N_MAX, default_n_max
        if self.optimizer.n_max is not None:
            return ModeDims.square(self.optimizer.n_max)
        if self.target.kind == "superposition":
            return ModeDims.square(SUPERPOSITION_N_MAX)
        return ModeDims.square(default_n_max(self.target.effective_r))

    @property
    def extended_runtime(self) -> bool:
        return self.optimization_dims().n_max_1 >= EXTENDED_RUNTIME_N_MAX

    def to_dict(self) -> dict:
        return asdict(self)


def analysis_n_max(r: float, mixed: bool = False) -> int:
    """Truncation for exact χ evaluation of an ideal state of squeezing r.

    Pure states are cheap, so the series tail is pushed below 1e-10; the
    density-operator path stops at 1e-5 to keep matrices manageable.
    """
    tol, floor, guard = (1e-5, 16, 2) if mixed else (1e-10, 40, 6)
    n = 2
    while tmsv_deficit(r, n) > tol:
        n += 1
    return max(floor, n + guard)


def _build(cls, data, prefix):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(prefix, "must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{prefix}.{sorted(unknown)[0]}", "unknown field")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc))


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    subs = {"target": TargetConfig, "optimizer": OptimizerConfig, "tomography": TomographyConfig,
            "bell": BellConfig, "sweep": SweepConfig, "noise": NoiseConfig}
    top = {f.name for f in fields(RunConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    kwargs = {k: _build(cls, data.get(k), k) for k, cls in subs.items()}
    for k in ("seed", "output_dir", "lab_metadata", "schema_version"):
        if k in data:
            kwargs[k] = data[k]
    return RunConfig(**kwargs).validate()


def load_config(path: Optional[str], *, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    data: dict = {"schema_version": SCHEMA_VERSION}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["output_dir"] = out
    return config_from_dict(data)
