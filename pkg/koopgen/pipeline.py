"""Assemble plants, dictionaries, datasets, models and runs from a RunConfig."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from . import numerics
from .config import RunConfig
from .dictionary import (
    DelayDictionary,
    Dictionary,
    FourierDictionary,
    IdentityDictionary,
    MonomialDictionary,
    RbfDictionary,
    dictionary_from_descriptor,
    halton_rbf_centers,
)
from .edmd import (
    GeneratorModel,
    OperatorModel,
    TrajectoryDataset,
    delay_embed_dataset,
    fit_generator,
    fit_operators,
    fit_switched_family,
)
from .errors import InvalidInputError, UnsupportedOperationError
from .krom import (
    ModelBank,
    PiecewiseConstantSignal,
    fit_model_bank,
    lift_and_predict,
    model_affinity_defect,
)
from .ocp import (
    FourierBasis,
    IndicatorBasis,
    OcpSpec,
    QuadraticStageCost,
    SinusoidReference,
    StepReference,
    TrackingCost,
    ClosedLoopRecord,
    mpc_loop,
    objective_and_gradient,
)
from .plants import Plant, SamplingSpec, plant_from_descriptor, random_stable_linear_plant, sample_training_set


AnyModel = GeneratorModel | OperatorModel | ModelBank


def build_plant(cfg: RunConfig) -> Plant:
    params = dict(cfg.plant.params)
    if cfg.plant.kind == "linear" and "a" not in params:
        return random_stable_linear_plant(
            int(params.get("n", 4)),
            int(params.get("n_c", 1)),
            int(params.get("plant_seed", 0)),
        )
    return plant_from_descriptor({"kind": cfg.plant.kind, **params})


def state_dimension(cfg: RunConfig, plant: Plant) -> int:
    return plant.n_obs if cfg.sampling.observe else plant.n


def build_dictionary(cfg: RunConfig, plant: Plant) -> Dictionary:
    """Dictionary over the (observed) state; with delays it acts on depth stacked copies."""
    d = cfg.dictionary
    depth = d.delay_depth
    n = state_dimension(cfg, plant) * depth
    if d.kind == "identity":
        base: Dictionary = IdentityDictionary(n)
    elif d.kind == "monomial":
        base = MonomialDictionary(n, d.degree)
    elif d.kind == "fourier":
        base = FourierDictionary(n, d.max_frequency, d.include_constant)
    else:
        lo, hi = sampling_spec(cfg).state_box(plant) if not cfg.sampling.observe else (None, None)
        c_lo = d.center_lo if d.center_lo is not None else lo
        c_hi = d.center_hi if d.center_hi is not None else hi
        if c_lo is None or c_hi is None:
            raise InvalidInputError("dictionary.center_lo and dictionary.center_hi are required for observed states")
        c_lo = np.tile(np.asarray(c_lo, dtype=float), depth if np.size(c_lo) * depth == n else 1)
        c_hi = np.tile(np.asarray(c_hi, dtype=float), depth if np.size(c_hi) * depth == n else 1)
        centers = halton_rbf_centers(n, d.n_centers, c_lo, c_hi)
        base = RbfDictionary(centers, d.shape, d.rbf_kernel, d.include_constant)
    if depth > 1:
        return DelayDictionary(base, depth)
    return base


def sampling_spec(cfg: RunConfig) -> SamplingSpec:
    s = cfg.sampling
    levels = None
    if s.input_levels is not None:
        levels = tuple(tuple(float(v) for v in np.atleast_1d(lv)) for lv in s.input_levels)
    return SamplingSpec(
        mode=s.mode,
        n_initial=s.n_initial,
        n_steps=s.n_steps,
        dt=None if s.dt is None else float(s.dt),
        state_lo=None if s.state_lo is None else tuple(float(v) for v in s.state_lo),
        state_hi=None if s.state_hi is None else tuple(float(v) for v in s.state_hi),
        x0=None if s.x0 is None else tuple(float(v) for v in s.x0),
        input_levels=levels,
        level_probabilities=None if s.level_probabilities is None else tuple(float(v) for v in s.level_probabilities),
        hold_steps=s.hold_steps,
        derivatives=s.derivatives,
        observe=s.observe,
    )


def build_dataset(cfg: RunConfig, plant: Plant, jobs: Optional[int] = None) -> TrajectoryDataset:
    data = sample_training_set(plant, sampling_spec(cfg), cfg.seed, cfg.sampling.jobs if jobs is None else jobs)
    if cfg.dictionary.delay_depth > 1:
        data = delay_embed_dataset(data, cfg.dictionary.delay_depth)
    return data


def split_by_input(data: TrajectoryDataset) -> Dict[Tuple[float, ...], TrajectoryDataset]:
    levels: Dict[Tuple[float, ...], List[int]] = {}
    for j, row in enumerate(data.u):
        levels.setdefault(tuple(float(v) for v in row), []).append(j)
    return {k: data.subset(idx) for k, idx in sorted(levels.items())}


def fit_model(cfg: RunConfig, dictionary: Dictionary, data: TrajectoryDataset) -> AnyModel:
    f = cfg.fit
    rtol = cfg.numerics.pinv_rtol
    if f.method == "generator":
        return fit_generator(dictionary, data, f.derivative, rtol, drop_incomplete=f.drop_incomplete)
    if f.method == "operators":
        return fit_operators(dictionary, data, rtol)
    if f.method == "switched":
        _, model = fit_switched_family(
            dictionary, split_by_input(data), rtol, target=f.switched_target, derivative=f.derivative
        )
        if model is None:
            raise InvalidInputError("switched fit needs symmetric input levels +-u per channel")
        return model
    regions = [(np.atleast_1d(r[0]), np.atleast_1d(r[1])) for r in f.regions]
    return fit_model_bank(dictionary, data, regions, rtol)


def model_dictionary(model: AnyModel) -> Dictionary:
    return dictionary_from_descriptor(model.dictionary)


def predict_signal(cfg: RunConfig, n_c: int, input_lo: np.ndarray, input_hi: np.ndarray) -> PiecewiseConstantSignal:
    p = cfg.predict
    spec = p.input
    if spec.kind == "constant":
        value = np.broadcast_to(np.asarray(spec.value, dtype=float), (n_c,)).copy()
        return PiecewiseConstantSignal.constant(value, p.dt, p.n_steps, input_lo, input_hi)
    if spec.kind == "sine":
        def fn(t: float) -> np.ndarray:
            return np.full(n_c, spec.offset + spec.amplitude * math.sin(spec.frequency * t))

        return PiecewiseConstantSignal.from_function(fn, p.dt, p.n_steps, input_lo, input_hi)
    values = np.asarray(spec.values, dtype=float).reshape(-1, n_c)
    if values.shape[0] != p.n_steps:
        raise InvalidInputError(f"predict.input.values has {values.shape[0]} rows; predict.n_steps is {p.n_steps}")
    return PiecewiseConstantSignal(dt=p.dt, values=values, input_lo=input_lo, input_hi=input_hi)


@dataclass(frozen=True)
class PredictionResult:
    t: np.ndarray
    z: np.ndarray
    u: np.ndarray
    x: Optional[np.ndarray]
    err: Optional[np.ndarray]


def run_prediction(cfg: RunConfig, model: AnyModel, plant: Optional[Plant]) -> PredictionResult:
    dictionary = model_dictionary(model)
    x0 = np.asarray(cfg.predict.x0, dtype=float) if cfg.predict.x0 is not None else None
    if x0 is None:
        if plant is None:
            raise InvalidInputError("predict.x0 is required without a plant")
        x0 = plant.default_initial_state()
    signal = predict_signal(cfg, model.n_c, model.input_lo, model.input_hi)
    compare = plant is not None and cfg.predict.compare_plant and x0.shape == (plant.n,)
    lift_x0 = plant.observe(x0) if compare and cfg.sampling.observe else x0
    if lift_x0.shape != (dictionary.n,):
        raise InvalidInputError(f"predict.x0 must have length {dictionary.n}; got {lift_x0.shape[0]}")
    z = lift_and_predict(model, dictionary, lift_x0, signal, cfg.predict.scheme)
    if not compare:
        return PredictionResult(t=signal.times(), z=z, u=signal.values, x=None, err=None)

    xs = [x0]
    for u in signal.values:
        xs.append(plant.step(xs[-1], u, signal.dt))
    x = np.vstack(xs)
    y = plant.observe_batch(x) if cfg.sampling.observe else x
    return PredictionResult(t=signal.times(), z=z, u=signal.values, x=x, err=prediction_error(dictionary, z, y))


def prediction_error(dictionary: Dictionary, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """State-space error where the dictionary recovers states, lifted-space error otherwise."""
    if isinstance(dictionary, (IdentityDictionary, MonomialDictionary)):
        est = np.vstack([dictionary.state_estimate(row) for row in z])
        return np.linalg.norm(est - y, axis=1)
    lifted = dictionary.eval_batch(y).T
    return np.linalg.norm(z - lifted, axis=1)


def tracked_indices(cfg: RunConfig, dictionary: Dictionary) -> Tuple[int, ...]:
    if cfg.mpc.tracked is not None:
        return tuple(int(i) for i in cfg.mpc.tracked)
    if isinstance(dictionary, MonomialDictionary):
        return tuple(dictionary.linear_indices())
    if isinstance(dictionary, IdentityDictionary):
        return tuple(range(dictionary.n))
    raise InvalidInputError("mpc.tracked is required for this dictionary kind")


def build_tracking(cfg: RunConfig, n_o: int, n_c: int, indices: Tuple[int, ...]) -> TrackingCost:
    m = cfg.mpc
    k = len(indices)
    weights = tuple(float(w) for w in np.broadcast_to(np.asarray(m.q_weights, dtype=float), (k,)))
    ref_cfg = m.reference
    if ref_cfg.kind == "setpoints":
        values = [np.broadcast_to(np.atleast_1d(np.asarray(v, dtype=float)), (k,)) for v in ref_cfg.values]
        reference: Callable[[float], np.ndarray] = StepReference(ref_cfg.times, np.vstack(values))
    else:
        reference = SinusoidReference(ref_cfg.offset, ref_cfg.amplitude, ref_cfg.period, k)
    return TrackingCost(n_o=n_o, indices=indices, q_weights=weights, r=float(m.r) * np.eye(n_c), reference=reference)


def build_ocp(cfg: RunConfig, model: AnyModel, plant: Plant) -> Tuple[OcpSpec, TrackingCost]:
    m = cfg.mpc
    if isinstance(model, OperatorModel) and not np.isclose(model.dt, m.dt, rtol=1e-12, atol=0.0):
        raise InvalidInputError(f"operator model dt {model.dt} does not match mpc.dt {m.dt}")
    dictionary = model_dictionary(model)
    tracking = build_tracking(cfg, model.n_o, model.n_c, tracked_indices(cfg, dictionary))
    if m.basis == "fourier":
        basis: IndicatorBasis | FourierBasis = FourierBasis(m.horizon, model.n_c, m.dt, m.max_frequency)
    else:
        basis = IndicatorBasis(m.horizon, model.n_c)
    spec = OcpSpec(
        model=model,
        horizon=m.horizon,
        dt=m.dt,
        input_lo=plant.input_lo,
        input_hi=plant.input_hi,
        cost=tracking.stage_cost(0.0, m.horizon, m.dt),
        basis=basis,
        discretization=m.discretization,
        amplitude=m.amplitude,
    )
    return spec, tracking


def run_mpc(
    cfg: RunConfig,
    model: AnyModel,
    plant: Plant,
    on_step: Optional[Callable[[int, int], None]] = None,
) -> ClosedLoopRecord:
    spec, tracking = build_ocp(cfg, model, plant)
    x0 = plant.default_initial_state() if cfg.mpc.x0 is None else np.asarray(cfg.mpc.x0, dtype=float)
    return mpc_loop(
        plant,
        model_dictionary(model),
        spec,
        x0,
        cfg.mpc.t_final,
        tracking,
        warm_start=cfg.mpc.warm_start,
        solver=cfg.mpc.solver,
        tol=cfg.mpc.tol if cfg.mpc.solver == "bfgs" else cfg.numerics.newton_tol,
        max_iter=cfg.mpc.max_iter,
        observe=cfg.mpc.observe,
        on_step=on_step,
        max_newton=cfg.numerics.max_newton,
        gmres_tol=cfg.numerics.gmres_tol,
        gmres_restart=cfg.numerics.gmres_restart,
    )


def _check(name: str, passed: bool, value: Optional[float], threshold: Optional[float], detail: str = "") -> Dict[str, Any]:
    return {
        "check": name,
        "passed": bool(passed),
        "value": None if value is None or not math.isfinite(value) else float(value),
        "threshold": threshold,
        "detail": detail,
    }


def _rel_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(a)))


def _matrices(model: GeneratorModel | OperatorModel) -> List[np.ndarray]:
    return [model.k0, *model.b]


def validate_model(
    model: AnyModel,
    checksum_ok: bool,
    data: Optional[TrajectoryDataset] = None,
    seed: int = 0,
) -> List[Dict[str, Any]]:
    """Run the invariant checks; failures become report entries, never exceptions."""
    report = [_check("checksum", checksum_ok, None, None, "model payload matches its recorded checksum")]
    singles = model.models if isinstance(model, ModelBank) else [model]

    worst = max(model_affinity_defect(m, 50, seed) for m in singles)
    report.append(_check("model_affinity", worst <= 1e-12, worst, 1e-12, "one-step map is affine in u"))

    report.append(_gradient_check(singles[0], seed))

    if data is None:
        return report
    try:
        dictionary = model_dictionary(model)
    except (InvalidInputError, KeyError) as exc:
        report.append(_check("dictionary", False, None, None, str(exc)))
        return report
    if dictionary.n != data.n:
        report.append(_check("dataset_dimension", False, None, None, "dataset does not match the model dictionary"))
        return report

    fp = singles[0].fit.dataset_fingerprint if singles[0].fit is not None else None
    report.append(
        _check("dataset_fingerprint", fp == data.fingerprint(), None, None, "model was fitted on this dataset")
    )

    if not isinstance(model, ModelBank):
        report.append(_refit_check(model, dictionary, data))

    if data.has_successors:
        report.append(_euler_compatibility_check(dictionary, data))

    plant_desc = data.metadata.get("plant") if isinstance(data.metadata, dict) else None
    if isinstance(model, OperatorModel) and isinstance(plant_desc, dict) and plant_desc.get("kind") == "linear":
        report.append(_linear_exactness_check(model, dictionary, plant_from_descriptor(plant_desc), seed))
    return report


def _refit_check(model: GeneratorModel | OperatorModel, dictionary: Dictionary, data: TrajectoryDataset) -> Dict[str, Any]:
    fit = model.fit
    rtol = fit.rtol if fit is not None else numerics.DEFAULT_PINV_RTOL
    try:
        if isinstance(model, GeneratorModel):
            method = fit.derivative if fit is not None and fit.derivative else "chain_rule"
            ref: GeneratorModel | OperatorModel = fit_generator(dictionary, data, method, rtol)
        else:
            ref = fit_operators(dictionary, data, rtol)
    except (InvalidInputError, UnsupportedOperationError, RuntimeError) as exc:
        return _check("refit_agreement", False, None, 1e-8, f"refit failed: {exc}")
    diff = max(_rel_diff(a, b) for a, b in zip(_matrices(ref), _matrices(model)))
    return _check("refit_agreement", diff <= 1e-8, diff, 1e-8, "stored matrices equal a refit on the dataset")


def _euler_compatibility_check(dictionary: Dictionary, data: TrajectoryDataset) -> Dict[str, Any]:
    try:
        op = fit_operators(dictionary, data)
        gen = fit_generator(dictionary, data, "forward")
    except (InvalidInputError, UnsupportedOperationError, RuntimeError) as exc:
        return _check("euler_compatibility", False, None, 1e-9, f"fit failed: {exc}")
    if op.fit.rank < op.fit.full_rank:
        return _check("euler_compatibility", False, None, 1e-9, "lifted data is rank deficient")
    dt = op.dt
    diffs = [_rel_diff(op.k0, np.eye(op.n_o) + dt * gen.k0)]
    diffs += [_rel_diff(bo, dt * bg) for bo, bg in zip(op.b, gen.b)]
    worst = max(diffs)
    return _check("euler_compatibility", worst <= 1e-9, worst, 1e-9, "K0dt = I + dt K0 and Bdt = dt B")


def _linear_exactness_check(model: OperatorModel, dictionary: Dictionary, plant: Plant, seed: int) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        for _ in range(20):
            x = rng.uniform(-1.0, 1.0, plant.n)
            vals = plant.input_lo + (plant.input_hi - plant.input_lo) * rng.random((10, plant.n_c))
            signal = PiecewiseConstantSignal(model.dt, vals, plant.input_lo, plant.input_hi)
            z = lift_and_predict(model, dictionary, x, signal)
            for k, u in enumerate(vals):
                x = plant.step(x, u, model.dt)
                worst = max(worst, float(np.max(np.abs(dictionary.state_estimate(z[k + 1]) - x))))
    except (InvalidInputError, NotImplementedError) as exc:
        return _check("linear_exactness", False, None, 1e-8, str(exc))
    return _check("linear_exactness", worst <= 1e-8, worst, 1e-8, "prediction equals the exact linear flow")


def _gradient_check(model: GeneratorModel | OperatorModel, seed: int, horizon: int = 3) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    if isinstance(model, GeneratorModel):
        from .krom import generator_to_operator

        model = generator_to_operator(model, 0.1)
    n_o, n_c = model.n_o, model.n_c
    a = rng.standard_normal((horizon, n_o))
    cost = QuadraticStageCost(
        q=np.repeat(np.eye(n_o)[None], horizon, axis=0),
        r=np.repeat(0.1 * np.eye(n_c)[None], horizon, axis=0),
        a=a,
    )
    spec = OcpSpec(model, horizon, model.dt, model.input_lo, model.input_hi, cost)
    z0 = rng.standard_normal(n_o) / math.sqrt(n_o)
    c = (model.input_lo + (model.input_hi - model.input_lo) * rng.random((horizon, n_c))).ravel()
    _, g = objective_and_gradient(spec, z0, c, model)
    eps = 1e-6 * (1.0 + np.linalg.norm(c))
    fd = np.empty_like(c)
    for i in range(c.size):
        e = np.zeros_like(c)
        e[i] = eps
        jp, _ = objective_and_gradient(spec, z0, c + e, model)
        jm, _ = objective_and_gradient(spec, z0, c - e, model)
        fd[i] = (jp - jm) / (2.0 * eps)
    rel = float(np.max(np.abs(g - fd)) / max(1e-12, np.max(np.abs(fd)), np.max(np.abs(g))))
    return _check("gradient_check", rel <= 1e-5, rel, 1e-5, "adjoint gradient against central differences")
