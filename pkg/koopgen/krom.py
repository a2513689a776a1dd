"""Prediction with bilinear Koopman surrogates and input-localised model banks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import numerics
from .dictionary import Dictionary
from .edmd import GeneratorModel, OperatorModel, TrajectoryDataset, fit_operators
from .errors import InvalidInputError, OutOfDomainError


DISCRETIZATIONS = ("euler", "expm_interpolated")

Model = Union[GeneratorModel, OperatorModel]


@dataclass(frozen=True)
class PiecewiseConstantSignal:
    """Inputs u_0 .. u_{l-1}, each held for ``dt``."""

    dt: float
    values: np.ndarray
    input_lo: np.ndarray
    input_hi: np.ndarray

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise InvalidInputError(f"signal dt must be > 0; got {self.dt}")
        lo = np.asarray(self.input_lo, dtype=float).ravel()
        hi = np.asarray(self.input_hi, dtype=float).ravel()
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, lo.shape[0])
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise InvalidInputError("signal needs at least one held input")
        if vals.shape[1] != lo.shape[0] or hi.shape != lo.shape:
            raise InvalidInputError(f"signal inputs have {vals.shape[1]} channels but the box has {lo.shape[0]}")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("signal contains non-finite inputs")
        tol = 1e-12 * (1.0 + np.abs(hi - lo))
        bad = np.nonzero(np.any((vals < lo - tol) | (vals > hi + tol), axis=1))[0]
        if bad.size:
            raise OutOfDomainError(f"signal input {int(bad[0])} = {vals[bad[0]].tolist()} lies outside the input box")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "input_lo", lo)
        object.__setattr__(self, "input_hi", hi)

    @property
    def length(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_c(self) -> int:
        return int(self.values.shape[1])

    def times(self) -> np.ndarray:
        return np.arange(self.length + 1) * self.dt

    @classmethod
    def from_function(
        cls,
        fn: Callable[[float], Sequence[float] | float],
        dt: float,
        n_steps: int,
        input_lo: Sequence[float],
        input_hi: Sequence[float],
        t0: float = 0.0,
    ) -> "PiecewiseConstantSignal":
        """Sample ``fn`` at the left end of every hold interval."""
        if n_steps < 1:
            raise InvalidInputError("n_steps must be >= 1")
        vals = [np.atleast_1d(np.asarray(fn(t0 + k * dt), dtype=float)) for k in range(n_steps)]
        return cls(dt=dt, values=np.vstack(vals), input_lo=input_lo, input_hi=input_hi)

    @classmethod
    def constant(
        cls,
        u: Sequence[float] | float,
        dt: float,
        n_steps: int,
        input_lo: Sequence[float],
        input_hi: Sequence[float],
    ) -> "PiecewiseConstantSignal":
        return cls.from_function(lambda _t: u, dt, n_steps, input_lo, input_hi)


@dataclass(frozen=True)
class BankRegion:
    lo: np.ndarray
    hi: np.ndarray
    model: Model

    def contains(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))


@dataclass(frozen=True)
class ModelBank:
    """Axis-aligned input regions, one surrogate each; the lowest index wins on shared faces."""

    regions: Tuple[BankRegion, ...]
    input_lo: np.ndarray
    input_hi: np.ndarray

    def __post_init__(self) -> None:
        if not self.regions:
            raise InvalidInputError("model bank needs at least one region")
        lo = np.asarray(self.input_lo, dtype=float).ravel()
        hi = np.asarray(self.input_hi, dtype=float).ravel()
        object.__setattr__(self, "input_lo", lo)
        object.__setattr__(self, "input_hi", hi)
        first = self.regions[0].model
        for r in self.regions:
            if r.lo.shape != lo.shape or r.hi.shape != lo.shape or np.any(r.hi < r.lo):
                raise InvalidInputError("bank regions must be nonempty boxes of the input dimension")
            if type(r.model) is not type(first) or r.model.n_o != first.n_o or r.model.dictionary != first.dictionary:
                raise InvalidInputError("bank models must share model kind, dictionary and size")
            if isinstance(first, OperatorModel) and not np.isclose(r.model.dt, first.dt, rtol=1e-12, atol=0.0):
                raise InvalidInputError("bank operator models must share dt")
        self._check_coverage()

    def _check_coverage(self) -> None:
        axes = []
        for j in range(self.input_lo.shape[0]):
            cuts = {self.input_lo[j], self.input_hi[j]}
            for r in self.regions:
                cuts.update(v for v in (r.lo[j], r.hi[j]) if self.input_lo[j] < v < self.input_hi[j])
            pts = np.array(sorted(cuts))
            axes.append(0.5 * (pts[:-1] + pts[1:]) if pts.size > 1 else pts)
        for center in itertools.product(*axes):
            c = np.asarray(center)
            if not any(r.contains(c) for r in self.regions):
                raise InvalidInputError(f"bank regions leave the input {c.tolist()} uncovered")

    @property
    def n_o(self) -> int:
        return self.regions[0].model.n_o

    @property
    def n_c(self) -> int:
        return int(self.input_lo.shape[0])

    @property
    def dictionary(self) -> Dict:
        return self.regions[0].model.dictionary

    @property
    def models(self) -> List[Model]:
        return [r.model for r in self.regions]


def bank_select(bank: ModelBank, u: Sequence[float]) -> Model:
    return bank.regions[_region_index(bank, u)].model


def _region_index(bank: ModelBank, u: Sequence[float]) -> int:
    arr = np.atleast_1d(np.asarray(u, dtype=float))
    if arr.shape != bank.input_lo.shape:
        raise InvalidInputError(f"input has {arr.shape[0]} entries; bank expects {bank.input_lo.shape[0]}")
    tol = 1e-12 * (1.0 + np.abs(bank.input_hi - bank.input_lo))
    if np.any(arr < bank.input_lo - tol) or np.any(arr > bank.input_hi + tol):
        raise OutOfDomainError(f"input {arr.tolist()} lies outside the bank input box")
    for i, r in enumerate(bank.regions):
        if r.contains(arr):
            return i
    raise OutOfDomainError(f"no bank region contains {arr.tolist()}")


def _check_z0(model: Model, z0: Sequence[float]) -> np.ndarray:
    z = np.asarray(z0, dtype=float).ravel()
    if z.shape != (model.n_o,):
        raise InvalidInputError(f"z0 must have length {model.n_o}; got {z.shape[0]}")
    return z


def _check_signal(model: Model, signal: PiecewiseConstantSignal) -> None:
    if signal.n_c != model.n_c:
        raise InvalidInputError(f"signal has {signal.n_c} channels; model expects {model.n_c}")


def predict_discrete(model: OperatorModel, z0: Sequence[float], signal: PiecewiseConstantSignal) -> np.ndarray:
    """Rows z_0 .. z_l of z_{k+1} = (K0dt + sum u_k,i Bdt_i) z_k."""
    if not isinstance(model, OperatorModel):
        raise InvalidInputError("predict_discrete needs an operator model")
    if not np.isclose(signal.dt, model.dt, rtol=1e-12, atol=0.0):
        raise InvalidInputError(f"signal dt {signal.dt} does not match model dt {model.dt}")
    _check_signal(model, signal)
    out = np.empty((signal.length + 1, model.n_o))
    out[0] = _check_z0(model, z0)
    for k, u in enumerate(signal.values):
        out[k + 1] = model.matrix_at(u) @ out[k]
    return out


def predict_continuous(
    model: GeneratorModel,
    z0: Sequence[float],
    signal: PiecewiseConstantSignal,
    scheme: str = "exact",
) -> np.ndarray:
    """Integrate the frozen bilinear generator over each hold interval."""
    if not isinstance(model, GeneratorModel):
        raise InvalidInputError("predict_continuous needs a generator model")
    if scheme not in numerics.SCHEMES:
        raise InvalidInputError(f"Unknown integration scheme '{scheme}'; expected one of {', '.join(numerics.SCHEMES)}")
    _check_signal(model, signal)
    out = np.empty((signal.length + 1, model.n_o))
    out[0] = _check_z0(model, z0)
    propagators: Dict[Tuple[float, ...], np.ndarray] = {}
    for k, u in enumerate(signal.values):
        if scheme == "exact":
            key = tuple(u.tolist())
            prop = propagators.get(key)
            if prop is None:
                prop = numerics.expm(model.matrix_at(u) * signal.dt)
                propagators[key] = prop
            out[k + 1] = prop @ out[k]
        else:
            out[k + 1] = numerics.integrate_bilinear(model.k0, model.b, u, out[k], signal.dt, scheme)
    return out


def generator_to_operator(
    model: GeneratorModel,
    dt: float,
    method: str = "euler",
    amplitude: float = 1.0,
) -> OperatorModel:
    """Discretise a generator model over one hold interval.

    ``euler``: K0dt = I + dt K0, Bdt = dt B.
    ``expm_interpolated``: K0dt = exp(dt K0) and
    Bdt_j = (exp(dt (K0 + a B_j)) - exp(dt (K0 - a B_j))) / (2a), which is exact at
    u = 0 and interpolates affinely between the levels +-a per channel.
    """
    if not isinstance(model, GeneratorModel):
        raise InvalidInputError("generator_to_operator needs a generator model")
    if not dt > 0.0:
        raise InvalidInputError(f"dt must be > 0; got {dt}")
    if method == "euler":
        k0 = np.eye(model.n_o) + dt * model.k0
        b = tuple(dt * bi for bi in model.b)
    elif method == "expm_interpolated":
        if not amplitude > 0.0:
            raise InvalidInputError("amplitude must be > 0")
        k0 = numerics.expm(dt * model.k0)
        b = tuple(
            (numerics.expm(dt * (model.k0 + amplitude * bi)) - numerics.expm(dt * (model.k0 - amplitude * bi)))
            / (2.0 * amplitude)
            for bi in model.b
        )
    else:
        raise InvalidInputError(f"Unknown discretization '{method}'; expected one of {', '.join(DISCRETIZATIONS)}")
    return OperatorModel(
        k0=k0,
        b=b,
        dictionary=model.dictionary,
        input_lo=model.input_lo,
        input_hi=model.input_hi,
        dt=float(dt),
        fit=model.fit,
    )


def operator_to_generator(model: OperatorModel) -> GeneratorModel:
    """Inverse of the Euler map: K0 = (K0dt - I)/dt, B = Bdt/dt."""
    if not isinstance(model, OperatorModel):
        raise InvalidInputError("operator_to_generator needs an operator model")
    dt = model.dt
    return GeneratorModel(
        k0=(model.k0 - np.eye(model.n_o)) / dt,
        b=tuple(bi / dt for bi in model.b),
        dictionary=model.dictionary,
        input_lo=model.input_lo,
        input_hi=model.input_hi,
        fit=model.fit,
    )


def one_step(model: Model, z: np.ndarray, u: np.ndarray, dt: float, scheme: str = "exact") -> np.ndarray:
    if isinstance(model, OperatorModel):
        return model.matrix_at(u) @ z
    if scheme == "exact":
        return numerics.expm(model.matrix_at(u) * dt) @ z
    return numerics.integrate_bilinear(model.k0, model.b, u, z, dt, scheme)


def lift_and_predict(
    model: Union[Model, ModelBank],
    dictionary: Dictionary,
    x0: Sequence[float],
    signal: PiecewiseConstantSignal,
    scheme: str = "exact",
) -> np.ndarray:
    """z0 = psi(x0), then predict with the model (banks switch per hold interval)."""
    if model.dictionary != dictionary.descriptor():
        raise InvalidInputError(
            f"dictionary {dictionary.descriptor().get('kind')} does not match the model's "
            f"{model.dictionary.get('kind')} descriptor"
        )
    z0 = dictionary.eval(x0)
    if isinstance(model, OperatorModel):
        return predict_discrete(model, z0, signal)
    if isinstance(model, GeneratorModel):
        return predict_continuous(model, z0, signal, scheme)
    if not isinstance(model, ModelBank):
        raise InvalidInputError(f"cannot predict with {type(model).__name__}")
    if signal.n_c != model.n_c:
        raise InvalidInputError(f"signal has {signal.n_c} channels; bank expects {model.n_c}")
    out = np.empty((signal.length + 1, model.n_o))
    out[0] = z0
    for k, u in enumerate(signal.values):
        m = bank_select(model, u)
        if isinstance(m, OperatorModel) and not np.isclose(signal.dt, m.dt, rtol=1e-12, atol=0.0):
            raise InvalidInputError(f"signal dt {signal.dt} does not match bank dt {m.dt}")
        out[k + 1] = one_step(m, out[k], u, signal.dt, scheme)
    return out


def fit_model_bank(
    dictionary: Dictionary,
    data: TrajectoryDataset,
    regions: Sequence[Tuple[Sequence[float], Sequence[float]]],
    rtol: float = numerics.DEFAULT_PINV_RTOL,
) -> ModelBank:
    """One operator model per region, each fitted on the samples whose input lies in it."""
    if not regions:
        raise InvalidInputError("model bank needs at least one region")
    out: List[BankRegion] = []
    for i, (lo, hi) in enumerate(regions):
        lo_arr = np.atleast_1d(np.asarray(lo, dtype=float))
        hi_arr = np.atleast_1d(np.asarray(hi, dtype=float))
        mask = np.all((data.u >= lo_arr - 1e-12) & (data.u <= hi_arr + 1e-12), axis=1)
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            raise InvalidInputError(f"bank region {i} [{lo_arr.tolist()}, {hi_arr.tolist()}] holds no samples")
        sub = data.subset(idx)
        model = fit_operators(dictionary, sub, rtol)
        out.append(BankRegion(lo=lo_arr, hi=hi_arr, model=model))
    return ModelBank(regions=tuple(out), input_lo=data.input_lo, input_hi=data.input_hi)


def model_affinity_defect(model: Model, n_trials: int = 100, seed: int = 0) -> float:
    """Max relative deviation of the one-step matrix from affinity in u over random draws."""
    rng = np.random.default_rng(seed)
    lo, hi = model.input_lo, model.input_hi
    worst = 0.0
    for _ in range(n_trials):
        z = rng.standard_normal(model.n_o)
        u1 = lo + (hi - lo) * rng.random(model.n_c)
        u2 = lo + (hi - lo) * rng.random(model.n_c)
        a = float(rng.random())
        y1 = model.matrix_at(u1) @ z
        y2 = model.matrix_at(u2) @ z
        ym = model.matrix_at(a * u1 + (1.0 - a) * u2) @ z
        scale = 1.0 + max(np.max(np.abs(y1)), np.max(np.abs(y2)))
        worst = max(worst, float(np.max(np.abs(ym - a * y1 - (1.0 - a) * y2))) / scale)
    return worst


def state_trajectory(dictionary: Dictionary, z_rows: np.ndarray) -> Optional[np.ndarray]:
    """Project predicted observables back to states when the dictionary allows it."""
    try:
        return np.vstack([dictionary.state_estimate(z) for z in z_rows])
    except NotImplementedError:
        return None
