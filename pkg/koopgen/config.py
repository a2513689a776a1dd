"""Run configuration: parsing, validation and overrides."""

from __future__ import annotations

import json
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from .errors import ConfigError
from .numerics import DEFAULT_GMRES_RESTART


OUT_DIR_ENV = "KOOPGEN_OUT_DIR"

FIT_METHODS = ("generator", "operators", "switched", "bank")
DERIVATIVE_METHODS = ("chain_rule", "forward", "central", "central5")
DICTIONARY_KINDS = ("identity", "monomial", "fourier", "rbf")
INPUT_KINDS = ("constant", "sine", "schedule")
REFERENCE_KINDS = ("setpoints", "sinusoid")
SOLVERS = ("bfgs", "newton")
BASES = ("indicator", "fourier")
SCHEMES = ("euler", "rk4", "exact")
DISCRETIZATIONS = ("euler", "expm_interpolated")
SWITCHED_TARGETS = ("operator", "generator")

PLANT_KEYS: Dict[str, Tuple[str, ...]] = {
    "duffing": ("delta", "alpha", "beta", "input_lo", "input_hi", "max_substep"),
    "burgers1d": (
        "nu",
        "n_grid",
        "length",
        "chi",
        "chi_center",
        "chi_width",
        "input_lo",
        "input_hi",
        "obs_points",
        "max_substep",
        "cfl",
    ),
    "linear": ("a", "b", "input_lo", "input_hi", "n", "n_c", "plant_seed"),
    "synthetic_nonlinear_input": ("a", "b", "input_lo", "input_hi"),
    "circle_rotation": ("input_lo", "input_hi"),
}


@dataclass(frozen=True)
class PlantConfig:
    kind: str = "duffing"
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class DictionaryConfig:
    kind: str = "monomial"
    degree: int = 2
    max_frequency: int = 1
    include_constant: bool = False
    n_centers: int = 0
    shape: float = 1.0
    rbf_kernel: str = "gaussian"
    center_lo: Optional[Tuple[float, ...]] = None
    center_hi: Optional[Tuple[float, ...]] = None
    delay_depth: int = 1


@dataclass(frozen=True)
class SamplingConfig:
    mode: str = "scattered"
    n_initial: int = 100
    n_steps: int = 0
    dt: Optional[float] = None
    state_lo: Optional[Tuple[float, ...]] = None
    state_hi: Optional[Tuple[float, ...]] = None
    x0: Optional[Tuple[float, ...]] = None
    input_levels: Optional[Tuple[Any, ...]] = None
    level_probabilities: Optional[Tuple[float, ...]] = None
    hold_steps: int = 1
    derivatives: bool = True
    observe: bool = False
    jobs: int = 1


@dataclass(frozen=True)
class FitConfig:
    method: str = "generator"
    derivative: str = "chain_rule"
    switched_target: str = "generator"
    regions: Optional[Tuple[Any, ...]] = None
    drop_incomplete: bool = False


@dataclass(frozen=True)
class InputConfig:
    kind: str = "constant"
    value: Tuple[float, ...] = (0.0,)
    amplitude: float = 1.0
    frequency: float = 1.0
    offset: float = 0.0
    values: Optional[Tuple[Any, ...]] = None


@dataclass(frozen=True)
class PredictConfig:
    x0: Optional[Tuple[float, ...]] = None
    n_steps: int = 10
    dt: float = 0.1
    scheme: str = "exact"
    compare_plant: bool = True
    input: InputConfig = field(default_factory=InputConfig)


@dataclass(frozen=True)
class ReferenceConfig:
    kind: str = "setpoints"
    times: Tuple[float, ...] = (0.0,)
    values: Tuple[Any, ...] = (0.0,)
    offset: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 5
    dt: float = 0.1
    t_final: float = 10.0
    x0: Optional[Tuple[float, ...]] = None
    tracked: Optional[Tuple[int, ...]] = None
    q_weights: Tuple[float, ...] = (1.0,)
    r: float = 0.01
    solver: str = "bfgs"
    tol: float = 1e-8
    max_iter: int = 200
    warm_start: bool = True
    basis: str = "indicator"
    max_frequency: int = 1
    discretization: str = "euler"
    amplitude: float = 1.0
    observe: bool = False
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)


@dataclass(frozen=True)
class NumericsConfig:
    pinv_rtol: float = 1e-10
    gmres_tol: float = 1e-12
    gmres_restart: int = DEFAULT_GMRES_RESTART
    newton_tol: float = 1e-10
    max_newton: int = 20


@dataclass(frozen=True)
class OutputConfig:
    out_dir: str = "koopgen_out"
    plot_scripts: bool = False
    compress_model: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    plant: PlantConfig = field(default_factory=PlantConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_NESTED: Dict[Tuple[type, str], type] = {
    (RunConfig, "dictionary"): DictionaryConfig,
    (RunConfig, "sampling"): SamplingConfig,
    (RunConfig, "fit"): FitConfig,
    (RunConfig, "predict"): PredictConfig,
    (RunConfig, "mpc"): MpcConfig,
    (RunConfig, "numerics"): NumericsConfig,
    (RunConfig, "output"): OutputConfig,
    (PredictConfig, "input"): InputConfig,
    (MpcConfig, "reference"): ReferenceConfig,
}


def load_config(path: str | Path) -> RunConfig:
    """Read a ``.json`` or ``.toml`` run configuration and validate it."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        if path.suffix.lower() == ".toml":
            with path.open("rb") as handle:
                raw = tomllib.load(handle)
        else:
            with path.open("r", encoding="utf-8") as handle:
                raw = json.load(handle)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Config file {path} is not valid: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: Mapping[str, Any]) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a table at the top level")
    body = dict(raw)
    plant = _parse_plant(body.pop("plant", None))
    cfg = _build(RunConfig, body, "")
    cfg = replace(cfg, plant=plant)
    try:
        validate_config(cfg)
    except TypeError as exc:
        raise ConfigError(f"config value has the wrong type: {exc}") from exc
    return cfg


def _parse_plant(raw: Any) -> PlantConfig:
    if raw is None:
        return PlantConfig()
    if not isinstance(raw, Mapping):
        raise ConfigError("plant must be a table")
    kind = raw.get("kind", "duffing")
    if kind not in PLANT_KEYS:
        raise ConfigError(f"plant.kind must be one of {', '.join(PLANT_KEYS)}; got '{kind}'")
    allowed = set(PLANT_KEYS[kind]) | {"kind"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"Unknown config key 'plant.{unknown[0]}' for plant kind '{kind}'")
    return PlantConfig(kind=kind, params={k: _freeze(v) for k, v in raw.items() if k != "kind"})


def _build(cls: type, raw: Any, path: str) -> Any:
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path or 'config'} must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        key = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"Unknown config key '{key}'")
    kwargs: Dict[str, Any] = {}
    for name, value in raw.items():
        sub = _NESTED.get((cls, name))
        dotted = f"{path}.{name}" if path else name
        kwargs[name] = _build(sub, value, dotted) if sub is not None else _freeze(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _freeze(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, Mapping):
        return {k: _freeze(v) for k, v in value.items()}
    return value


def _thaw(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    if isinstance(value, Mapping):
        return {k: _thaw(v) for k, v in value.items()}
    return value


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def _one_of(value: Any, choices: Tuple[str, ...], key: str) -> None:
    _require(value in choices, f"{key} must be one of {', '.join(choices)}; got '{value}'")


def validate_config(cfg: RunConfig) -> None:
    """Range and enumeration checks; raises ConfigError naming the dotted option."""
    _require(isinstance(cfg.seed, int) and not isinstance(cfg.seed, bool), "seed must be an integer")

    d = cfg.dictionary
    _one_of(d.kind, DICTIONARY_KINDS, "dictionary.kind")
    _require(d.degree >= 1, "dictionary.degree must be >= 1")
    _require(d.max_frequency >= 1, "dictionary.max_frequency must be >= 1")
    _require(d.delay_depth >= 1, "dictionary.delay_depth must be >= 1")
    if d.kind == "rbf":
        _require(d.n_centers >= 1, "dictionary.n_centers must be >= 1 for rbf dictionaries")
        _require(d.shape > 0.0, "dictionary.shape must be > 0")

    s = cfg.sampling
    _one_of(s.mode, ("scattered", "trajectories"), "sampling.mode")
    _require(s.n_initial >= 1, "sampling.n_initial must be >= 1")
    _require(s.hold_steps >= 1, "sampling.hold_steps must be >= 1")
    _require(s.jobs >= 0, "sampling.jobs must be >= 0")
    if s.mode == "trajectories":
        _require(s.n_steps >= 1, "sampling.n_steps must be >= 1 for trajectory sampling")
        _require(s.dt is not None, "sampling.dt is required for trajectory sampling")
    if s.dt is not None:
        _require(s.dt > 0.0, "sampling.dt must be > 0")

    f = cfg.fit
    _one_of(f.method, FIT_METHODS, "fit.method")
    _one_of(f.derivative, DERIVATIVE_METHODS, "fit.derivative")
    _one_of(f.switched_target, SWITCHED_TARGETS, "fit.switched_target")
    if f.method == "bank":
        _require(bool(f.regions), "fit.regions is required for bank fits")
    if f.method in ("operators", "bank") or (f.method == "switched" and f.switched_target == "operator"):
        _require(s.dt is not None, f"sampling.dt is required for fit.method = {f.method}")
    if f.method == "generator" and f.derivative != "chain_rule":
        _require(s.dt is not None, "finite-difference derivatives need sampling.dt")

    p = cfg.predict
    _require(p.n_steps >= 1, "predict.n_steps must be >= 1")
    _require(p.dt > 0.0, "predict.dt must be > 0")
    _one_of(p.scheme, SCHEMES, "predict.scheme")
    _one_of(p.input.kind, INPUT_KINDS, "predict.input.kind")
    if p.input.kind == "schedule":
        _require(bool(p.input.values), "predict.input.values is required for schedule inputs")

    m = cfg.mpc
    _require(m.horizon >= 1, "mpc.horizon must be >= 1")
    _require(m.dt > 0.0, "mpc.dt must be > 0")
    _require(m.t_final > 0.0, "mpc.t_final must be > 0")
    _require(m.r >= 0.0, "mpc.r must be >= 0")
    _require(m.tol > 0.0, "mpc.tol must be > 0")
    _require(m.max_iter >= 1, "mpc.max_iter must be >= 1")
    _require(m.amplitude > 0.0, "mpc.amplitude must be > 0")
    _require(m.max_frequency >= 0, "mpc.max_frequency must be >= 0")
    _require(all(w >= 0.0 for w in m.q_weights), "mpc.q_weights must be >= 0")
    _one_of(m.solver, SOLVERS, "mpc.solver")
    _one_of(m.basis, BASES, "mpc.basis")
    _one_of(m.discretization, DISCRETIZATIONS, "mpc.discretization")
    _one_of(m.reference.kind, REFERENCE_KINDS, "mpc.reference.kind")
    if m.reference.kind == "setpoints":
        _require(
            len(m.reference.times) == len(m.reference.values) and len(m.reference.times) >= 1,
            "mpc.reference.times and mpc.reference.values must have the same nonzero length",
        )
    else:
        _require(m.reference.period > 0.0, "mpc.reference.period must be > 0")

    n = cfg.numerics
    _require(0.0 < n.pinv_rtol < 1.0, "numerics.pinv_rtol must be in (0, 1)")
    _require(n.gmres_tol > 0.0, "numerics.gmres_tol must be > 0")
    _require(n.newton_tol > 0.0, "numerics.newton_tol must be > 0")
    _require(n.max_newton >= 0, "numerics.max_newton must be >= 0")
    _require(
        isinstance(n.gmres_restart, int) and not isinstance(n.gmres_restart, bool) and n.gmres_restart >= 1,
        "numerics.gmres_restart must be an integer >= 1",
    )

    _require(bool(cfg.output.out_dir), "output.out_dir must not be empty")


def apply_overrides(
    cfg: RunConfig,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Flag beats environment beats file; the environment only overrides the output directory."""
    env = os.environ if env is None else env
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    chosen = out_dir if out_dir is not None else env.get(OUT_DIR_ENV) or None
    if chosen is not None:
        cfg = replace(cfg, output=replace(cfg.output, out_dir=str(chosen)))
    return cfg


def config_to_dict(cfg: RunConfig) -> Dict[str, Any]:
    """Plain nested mapping; the plant section is flattened to ``kind`` plus parameters."""
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "plant":
            out["plant"] = {"kind": value.kind, **_thaw(dict(value.params))}
        elif is_dataclass(value):
            out[f.name] = _thaw(asdict(value))
        else:
            out[f.name] = value
    return out
