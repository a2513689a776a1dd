"""Optimal control on bilinear surrogates: objective, adjoint, gradient, box-BFGS and the MPC loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, minimize

from . import numerics
from .dictionary import DelayDictionary, Dictionary
from .edmd import GeneratorModel, OperatorModel
from .errors import InvalidInputError, PlantStepError
from .krom import ModelBank, bank_select, generator_to_operator
from .plants import Plant


SOLVERS = ("bfgs", "newton")
BASES = ("indicator", "fourier")


@dataclass(frozen=True)
class QuadraticStageCost:
    """Per-interval weights: interval i charges (z_{i+1} - a_i)' Q_i (z_{i+1} - a_i) + u_i' R_i u_i."""

    q: np.ndarray
    r: np.ndarray
    a: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        r = np.asarray(self.r, dtype=float)
        a = np.asarray(self.a, dtype=float)
        if q.ndim != 3 or q.shape[1] != q.shape[2]:
            raise InvalidInputError(f"Q must have shape (l, n_o, n_o); got {q.shape}")
        if r.ndim != 3 or r.shape[1] != r.shape[2]:
            raise InvalidInputError(f"R must have shape (l, n_c, n_c); got {r.shape}")
        if a.shape != q.shape[:2] or r.shape[0] != q.shape[0]:
            raise InvalidInputError("Q, R and a must cover the same number of intervals")
        for name, mats, floor in (("Q", q, -1e-10), ("R", r, -1e-10)):
            if not np.all(np.isfinite(mats)):
                raise InvalidInputError(f"{name} contains non-finite entries")
            for i, m in enumerate(mats):
                scale = 1.0 + float(np.max(np.abs(m)))
                if np.max(np.abs(m - m.T)) > 1e-12 * scale:
                    raise InvalidInputError(f"{name}[{i}] is not symmetric")
                if np.min(np.linalg.eigvalsh(m)) < floor:
                    raise InvalidInputError(f"{name}[{i}] is not positive semidefinite")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("reference a contains non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "a", a)

    @property
    def horizon(self) -> int:
        return int(self.q.shape[0])

    @property
    def n_o(self) -> int:
        return int(self.q.shape[1])

    @property
    def n_c(self) -> int:
        return int(self.r.shape[1])

    @classmethod
    def constant(cls, q: object, r: object, a: object, horizon: int) -> "QuadraticStageCost":
        q_arr = np.atleast_2d(np.asarray(q, dtype=float))
        r_arr = np.atleast_2d(np.asarray(r, dtype=float))
        a_arr = np.atleast_1d(np.asarray(a, dtype=float))
        return cls(
            q=np.repeat(q_arr[None], horizon, axis=0),
            r=np.repeat(r_arr[None], horizon, axis=0),
            a=np.repeat(a_arr[None], horizon, axis=0),
        )

    def scaled(self, q_factor: float = 1.0, r_factor: float = 1.0) -> "QuadraticStageCost":
        return QuadraticStageCost(q=self.q * q_factor, r=self.r * r_factor, a=self.a)


class StepReference:
    """Piecewise-constant reference: values[k] holds from times[k] on."""

    def __init__(self, times: Sequence[float], values: Sequence[Sequence[float]]) -> None:
        t = np.asarray(times, dtype=float).ravel()
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.size < 1 or v.shape[0] != t.size:
            raise InvalidInputError("reference needs one value row per switching time")
        if np.any(np.diff(t) < 0.0):
            raise InvalidInputError("reference switching times must be nondecreasing")
        self.times = t
        self.values = v

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def __call__(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t + 1e-9, side="right")) - 1
        return self.values[max(k, 0)]


class SinusoidReference:
    """offset + amplitude * sin(2 pi t / period), repeated over ``dim`` components."""

    def __init__(self, offset: float, amplitude: float, period: float, dim: int = 1) -> None:
        if not period > 0.0 or dim < 1:
            raise InvalidInputError("sinusoid reference needs period > 0 and dim >= 1")
        self.offset = float(offset)
        self.amplitude = float(amplitude)
        self.period = float(period)
        self._dim = int(dim)

    @property
    def dim(self) -> int:
        return self._dim

    def __call__(self, t: float) -> np.ndarray:
        return np.full(self._dim, self.offset + self.amplitude * math.sin(2.0 * math.pi * t / self.period))


Reference = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class TrackingCost:
    """Track ``reference(t)`` on the observables ``indices`` with diagonal weights."""

    n_o: int
    indices: Tuple[int, ...]
    q_weights: Tuple[float, ...]
    r: np.ndarray
    reference: Reference

    def __post_init__(self) -> None:
        if not self.indices or len(self.q_weights) != len(self.indices):
            raise InvalidInputError("tracking cost needs one weight per tracked observable")
        if any(i < 0 or i >= self.n_o for i in self.indices):
            raise InvalidInputError(f"tracked observable indices must lie in [0, {self.n_o})")
        object.__setattr__(self, "r", np.atleast_2d(np.asarray(self.r, dtype=float)))

    def reference_at(self, t: float) -> np.ndarray:
        ref = np.atleast_1d(np.asarray(self.reference(t), dtype=float))
        if ref.shape != (len(self.indices),):
            raise InvalidInputError(f"reference has {ref.shape[0]} entries; {len(self.indices)} observables are tracked")
        return ref

    def stage_cost(self, t0: float, horizon: int, dt: float) -> QuadraticStageCost:
        q = np.zeros((self.n_o, self.n_o))
        idx = np.asarray(self.indices, dtype=int)
        q[idx, idx] = np.asarray(self.q_weights, dtype=float)
        a = np.zeros((horizon, self.n_o))
        for i in range(horizon):
            a[i, idx] = self.reference_at(t0 + (i + 1) * dt)
        return QuadraticStageCost(
            q=np.repeat(q[None], horizon, axis=0),
            r=np.repeat(self.r[None], horizon, axis=0),
            a=a,
        )


class IndicatorBasis:
    """One coefficient per interval and channel; coefficients are the held input values."""

    kind = "indicator"

    def __init__(self, horizon: int, n_c: int) -> None:
        self.horizon = int(horizon)
        self.n_c = int(n_c)

    @property
    def dim(self) -> int:
        return self.horizon * self.n_c

    def to_inputs(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs, dtype=float).reshape(self.horizon, self.n_c)

    def from_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return np.asarray(inputs, dtype=float).reshape(self.horizon, self.n_c).ravel().copy()

    def project(self, grad_inputs: np.ndarray) -> np.ndarray:
        return np.asarray(grad_inputs, dtype=float).ravel().copy()

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind}


class FourierBasis:
    """Truncated Fourier series over the horizon, per channel.

    Row i of ``phi`` holds the averages of 1, cos(2 pi k t/T), sin(2 pi k t/T) over
    interval i, so the held input is phi @ c and gradients map through phi'.
    """

    kind = "fourier"

    def __init__(self, horizon: int, n_c: int, dt: float, max_frequency: int = 1) -> None:
        if max_frequency < 0:
            raise InvalidInputError("max_frequency must be >= 0")
        self.horizon = int(horizon)
        self.n_c = int(n_c)
        self.dt = float(dt)
        self.max_frequency = int(max_frequency)
        period = self.horizon * self.dt
        edges = np.arange(self.horizon + 1) * self.dt
        cols = [np.ones(self.horizon)]
        for k in range(1, self.max_frequency + 1):
            w = 2.0 * math.pi * k / period
            cols.append((np.sin(w * edges[1:]) - np.sin(w * edges[:-1])) / (w * self.dt))
            cols.append((np.cos(w * edges[:-1]) - np.cos(w * edges[1:])) / (w * self.dt))
        self.phi = np.column_stack(cols)

    @property
    def n_terms(self) -> int:
        return int(self.phi.shape[1])

    @property
    def dim(self) -> int:
        return self.n_terms * self.n_c

    def to_inputs(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs, dtype=float).reshape(self.n_c, self.n_terms)
        return self.phi @ c.T

    def from_inputs(self, inputs: np.ndarray) -> np.ndarray:
        u = np.asarray(inputs, dtype=float).reshape(self.horizon, self.n_c)
        c, *_ = np.linalg.lstsq(self.phi, u, rcond=None)
        return c.T.ravel().copy()

    def project(self, grad_inputs: np.ndarray) -> np.ndarray:
        g = np.asarray(grad_inputs, dtype=float).reshape(self.horizon, self.n_c)
        return (self.phi.T @ g).T.ravel().copy()

    def input_matrix(self) -> np.ndarray:
        """Map from flattened coefficients to flattened held inputs (row-major, interval first)."""
        m = np.zeros((self.horizon * self.n_c, self.dim))
        for j in range(self.n_c):
            m[j :: self.n_c, j * self.n_terms : (j + 1) * self.n_terms] = self.phi
        return m

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind, "max_frequency": self.max_frequency}


Basis = Union[IndicatorBasis, FourierBasis]
SurrogateModel = Union[OperatorModel, GeneratorModel, ModelBank]


@dataclass(frozen=True)
class OcpSpec:
    model: SurrogateModel
    horizon: int
    dt: float
    input_lo: np.ndarray
    input_hi: np.ndarray
    cost: QuadraticStageCost
    basis: Optional[Basis] = None
    discretization: str = "euler"
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise InvalidInputError(f"horizon must be >= 1; got {self.horizon}")
        if not self.dt > 0.0:
            raise InvalidInputError(f"dt must be > 0; got {self.dt}")
        lo = np.atleast_1d(np.asarray(self.input_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.input_hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise InvalidInputError("input box must be nonempty")
        if lo.shape[0] != self.model.n_c:
            raise InvalidInputError(f"input box has {lo.shape[0]} channels; model has {self.model.n_c}")
        if self.cost.horizon != self.horizon:
            raise InvalidInputError(f"cost covers {self.cost.horizon} intervals; horizon is {self.horizon}")
        if self.cost.n_o != self.model.n_o or self.cost.n_c != self.model.n_c:
            raise InvalidInputError("cost dimensions do not match the model")
        if self.discretization not in ("euler", "expm_interpolated"):
            raise InvalidInputError(f"Unknown discretization '{self.discretization}'")
        object.__setattr__(self, "input_lo", lo)
        object.__setattr__(self, "input_hi", hi)
        if self.basis is None:
            object.__setattr__(self, "basis", IndicatorBasis(self.horizon, lo.shape[0]))
        elif self.basis.horizon != self.horizon or self.basis.n_c != lo.shape[0]:
            raise InvalidInputError("input basis does not match horizon and input dimension")

    @property
    def n_o(self) -> int:
        return self.model.n_o

    @property
    def n_c(self) -> int:
        return int(self.input_lo.shape[0])

    def with_cost(self, cost: QuadraticStageCost) -> "OcpSpec":
        return replace(self, cost=cost)

    def discretized(self) -> "OcpSpec":
        """The same spec with generator models replaced by operator models over dt."""
        model = self.model
        if isinstance(model, GeneratorModel):
            return replace(self, model=self._discretize(model))
        if isinstance(model, ModelBank) and isinstance(model.regions[0].model, GeneratorModel):
            regions = tuple(replace(r, model=self._discretize(r.model)) for r in model.regions)
            return replace(self, model=replace(model, regions=regions))
        return self

    def _discretize(self, model: GeneratorModel) -> OperatorModel:
        return generator_to_operator(model, self.dt, self.discretization, self.amplitude)

    def operator_model(self, u_prev: Optional[Sequence[float]] = None) -> OperatorModel:
        """The discrete model used over the horizon; banks select by the previous input."""
        model = self.model
        if isinstance(model, ModelBank):
            u = np.clip(
                np.zeros(self.n_c) if u_prev is None else np.asarray(u_prev, dtype=float),
                model.input_lo,
                model.input_hi,
            )
            model = bank_select(model, u)
        if isinstance(model, GeneratorModel):
            model = self._discretize(model)
        if not np.isclose(model.dt, self.dt, rtol=1e-12, atol=0.0):
            raise InvalidInputError(f"model dt {model.dt} does not match OCP dt {self.dt}")
        return model


@dataclass(frozen=True)
class AdjointTrajectory:
    lam: np.ndarray


@dataclass(frozen=True)
class BfgsResult:
    coeffs: np.ndarray
    inputs: np.ndarray
    objective: float
    initial_objective: float
    converged: bool
    iterations: int
    n_evaluations: int
    projected_gradient_norm: float
    line_search_failure: bool
    message: str

    def as_dict(self) -> Dict[str, Any]:
        return {
            "objective": self.objective,
            "initial_objective": self.initial_objective,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_evaluations": self.n_evaluations,
            "projected_gradient_norm": self.projected_gradient_norm,
            "line_search_failure": self.line_search_failure,
            "message": self.message,
        }


def _check_traj(spec: OcpSpec, z_traj: np.ndarray, u_seq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z_traj, dtype=float)
    u = np.asarray(u_seq, dtype=float)
    if u.ndim == 1 and spec.n_c == 1:
        u = u[:, None]
    if z.shape != (spec.horizon + 1, spec.n_o):
        raise InvalidInputError(f"trajectory must have shape ({spec.horizon + 1}, {spec.n_o}); got {z.shape}")
    if u.shape != (spec.horizon, spec.n_c):
        raise InvalidInputError(f"input sequence must have shape ({spec.horizon}, {spec.n_c}); got {u.shape}")
    return z, u


def forward(model: OperatorModel, z0: np.ndarray, u_seq: np.ndarray) -> np.ndarray:
    u = np.atleast_2d(u_seq)
    z = np.empty((u.shape[0] + 1, model.n_o))
    z[0] = z0
    for i, ui in enumerate(u):
        z[i + 1] = model.matrix_at(ui) @ z[i]
    return z


def objective(spec: OcpSpec, z_traj: np.ndarray, u_seq: np.ndarray) -> float:
    """Rectangle-rule quadrature of the quadratic tracking objective."""
    z, u = _check_traj(spec, z_traj, u_seq)
    c = spec.cost
    e = z[1:] - c.a
    state = np.einsum("ij,ijk,ik->", e, c.q, e)
    effort = np.einsum("ij,ijk,ik->", u, c.r, u)
    return float((state + effort) * spec.dt)


def solve_adjoint_discrete(
    spec: OcpSpec,
    z_traj: np.ndarray,
    u_seq: np.ndarray,
    model: Optional[OperatorModel] = None,
) -> AdjointTrajectory:
    """lam_l = 0 and lam_i = A_{i+1}' lam_{i+1} + dt 2 Q_i (z_{i+1} - a_i), A_k = K0dt + sum u_k,j Bdt_j."""
    z, u = _check_traj(spec, z_traj, u_seq)
    m = spec.operator_model() if model is None else model
    c = spec.cost
    n = spec.horizon
    lam = np.zeros((n + 1, spec.n_o))
    for i in range(n - 1, -1, -1):
        gamma = 2.0 * c.q[i] @ (z[i + 1] - c.a[i])
        nxt = m.matrix_at(u[i + 1]).T @ lam[i + 1] if i + 1 < n else 0.0
        lam[i] = nxt + spec.dt * gamma
    return AdjointTrajectory(lam=lam)


def gradient(
    spec: OcpSpec,
    z_traj: np.ndarray,
    adjoint: AdjointTrajectory | np.ndarray,
    u_seq: np.ndarray,
    model: Optional[OperatorModel] = None,
) -> np.ndarray:
    """dJ/du_{i,j} = (Bdt_j z_i)' lam_i + dt 2 (R_i u_i)_j, shape (l, n_c)."""
    z, u = _check_traj(spec, z_traj, u_seq)
    lam = adjoint.lam if isinstance(adjoint, AdjointTrajectory) else np.asarray(adjoint, dtype=float)
    if lam.shape != z.shape:
        raise InvalidInputError(f"adjoint must have shape {z.shape}; got {lam.shape}")
    m = spec.operator_model() if model is None else model
    g = np.empty((spec.horizon, spec.n_c))
    for j, bj in enumerate(m.b):
        bz = z[:-1] @ bj.T
        g[:, j] = np.einsum("ij,ij->i", bz, lam[:-1])
    g += spec.dt * 2.0 * np.einsum("ijk,ik->ij", spec.cost.r, u)
    return g


def objective_and_gradient(
    spec: OcpSpec,
    z0: np.ndarray,
    coeffs: np.ndarray,
    model: Optional[OperatorModel] = None,
) -> Tuple[float, np.ndarray]:
    """J and dJ/dcoeffs for basis coefficients."""
    m = spec.operator_model() if model is None else model
    u = spec.basis.to_inputs(coeffs)
    z = forward(m, np.asarray(z0, dtype=float), u)
    j = objective(spec, z, u)
    lam = solve_adjoint_discrete(spec, z, u, m)
    g = gradient(spec, z, lam, u, m)
    return j, spec.basis.project(g)


def cold_start(spec: OcpSpec) -> np.ndarray:
    """Coefficients of the constant input nearest zero inside the box."""
    u_mid = np.clip(np.zeros(spec.n_c), spec.input_lo, spec.input_hi)
    return spec.basis.from_inputs(np.tile(u_mid, (spec.horizon, 1)))


def initial_coefficients(
    spec: OcpSpec,
    z0: Sequence[float],
    warm: Optional[Sequence[float]] = None,
    u_prev: Optional[Sequence[float]] = None,
) -> Tuple[np.ndarray, float]:
    """First iterate of a horizon solve and its objective.

    A warm start is used only when its objective does not exceed that of the cold start.
    """
    model = spec.operator_model(u_prev)
    z_init = np.asarray(z0, dtype=float).ravel()
    cold = cold_start(spec)
    u_cold = spec.basis.to_inputs(cold)
    j_cold = objective(spec, forward(model, z_init, u_cold), u_cold)
    if warm is None:
        return cold, j_cold
    w = np.asarray(warm, dtype=float).ravel()
    if w.shape != cold.shape:
        raise InvalidInputError(f"warm start must have length {cold.shape[0]}; got {w.shape[0]}")
    u_warm = spec.basis.to_inputs(w)
    j_warm = objective(spec, forward(model, z_init, u_warm), u_warm)
    if math.isfinite(j_warm) and j_warm <= j_cold:
        return w.copy(), j_warm
    return cold, j_cold


def _projected_gradient_norm(x: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(np.clip(x - g, lo, hi) - x)))


def _pull_into_box(basis: FourierBasis, coeffs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Shrink ``coeffs`` towards the constant mid input until every held input lies in the box."""
    x_mid = basis.from_inputs(np.tile(np.clip(np.zeros(basis.n_c), lo, hi), (basis.horizon, 1)))
    u_mid = basis.to_inputs(x_mid)
    d = basis.to_inputs(coeffs) - u_mid
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0.0, (hi - u_mid) / d, np.inf)
        down = np.where(d < 0.0, (lo - u_mid) / d, np.inf)
    s = min(1.0, float(np.min(up)), float(np.min(down)))
    return x_mid + max(s, 0.0) * (coeffs - x_mid)


def bfgs_box(
    spec: OcpSpec,
    z0: Sequence[float],
    coeffs0: Optional[Sequence[float]] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    u_prev: Optional[Sequence[float]] = None,
    memory: int = 10,
) -> BfgsResult:
    """Minimise J over the input box with limited-memory BFGS and gradient projection.

    Fourier coefficients are box-constrained through their interval averages and are
    solved with SLSQP instead. The best evaluated point is always returned.
    """
    model = spec.operator_model(u_prev)
    z_init = np.asarray(z0, dtype=float).ravel()
    if z_init.shape != (spec.n_o,):
        raise InvalidInputError(f"z0 must have length {spec.n_o}; got {z_init.shape[0]}")
    basis = spec.basis
    if coeffs0 is None:
        x0 = cold_start(spec)
    else:
        x0 = np.asarray(coeffs0, dtype=float).ravel()
    if x0.shape != (basis.dim,):
        raise InvalidInputError(f"initial coefficients must have length {basis.dim}; got {x0.shape[0]}")

    state: Dict[str, Any] = {
        "best_x": x0.copy(),
        "best_j": math.inf,
        "best_g": np.zeros_like(x0),
        "bad": False,
        "n": 0,
        "feasible": None,
    }

    def fun(x: np.ndarray) -> Tuple[float, np.ndarray]:
        state["n"] += 1
        j, g = objective_and_gradient(spec, z_init, x, model)
        if not math.isfinite(j) or not np.all(np.isfinite(g)):
            state["bad"] = True
            return math.inf, np.zeros_like(x)
        # SLSQP may evaluate outside the input box; such points never become the answer
        ok = state["feasible"] is None or state["feasible"](x)
        if j < state["best_j"] and ok:
            state["best_x"], state["best_j"], state["best_g"] = x.copy(), j, g.copy()
        return j, g

    if isinstance(basis, IndicatorBasis):
        lo = np.tile(spec.input_lo, spec.horizon)
        hi = np.tile(spec.input_hi, spec.horizon)
        x0 = np.clip(x0, lo, hi)
        j0, _ = fun(x0)
        res = minimize(
            fun,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=Bounds(lo, hi),
            options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15, "maxcor": memory},
        )
        pg = _projected_gradient_norm(state["best_x"], state["best_g"], lo, hi)
    else:
        a = basis.input_matrix()
        lo_u = np.tile(spec.input_lo, spec.horizon)
        hi_u = np.tile(spec.input_hi, spec.horizon)
        slack = 1e-9 * (1.0 + np.abs(hi_u - lo_u))

        def feasible(x: np.ndarray) -> bool:
            u = a @ x
            return bool(np.all(u >= lo_u - slack) and np.all(u <= hi_u + slack))

        state["feasible"] = feasible
        x0 = _pull_into_box(basis, x0, spec.input_lo, spec.input_hi)
        j0, _ = fun(x0)
        res = minimize(
            fun,
            x0,
            jac=True,
            method="SLSQP",
            constraints=[LinearConstraint(a, lo_u, hi_u)],
            options={"maxiter": max_iter, "ftol": tol * tol},
        )
        pg = float(np.max(np.abs(state["best_g"]))) if x0.size else 0.0

    best_x = state["best_x"]
    converged = bool(res.success) or pg <= tol
    return BfgsResult(
        coeffs=best_x,
        inputs=basis.to_inputs(best_x),
        objective=float(state["best_j"]),
        initial_objective=float(j0),
        converged=converged and not state["bad"],
        iterations=int(getattr(res, "nit", 0)),
        n_evaluations=int(state["n"]),
        projected_gradient_norm=pg,
        line_search_failure=bool(state["bad"]),
        message=str(res.message),
    )


@dataclass(frozen=True)
class HorizonSolveStats:
    """Outcome of one receding-horizon solve.

    ``residual`` is the final optimality-system residual norm for the Newton solver and
    the projected gradient norm for the box BFGS solver.
    """

    solver: str
    converged: bool
    iterations: int
    residual: float
    message: str
    initial_objective: float = math.nan

    def as_dict(self) -> Dict[str, Any]:
        return {
            "solver": self.solver,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": _finite_or_none(self.residual),
            "initial_objective": _finite_or_none(self.initial_objective),
            "message": self.message,
        }


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


@dataclass
class ClosedLoopRecord:
    """Closed-loop samples; row k of the state arrays is time t_k, row k of ``u`` acts on [t_k, t_k+1)."""

    t: List[float] = field(default_factory=list)
    x: List[np.ndarray] = field(default_factory=list)
    y: List[np.ndarray] = field(default_factory=list)
    tracked: List[np.ndarray] = field(default_factory=list)
    reference: List[np.ndarray] = field(default_factory=list)
    u: List[np.ndarray] = field(default_factory=list)
    objective: List[float] = field(default_factory=list)
    solve_ms: List[float] = field(default_factory=list)
    converged: List[bool] = field(default_factory=list)
    solver_stats: List[HorizonSolveStats] = field(default_factory=list)
    dt: float = 0.0
    aborted: bool = False
    message: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.u)

    def summary(self) -> Dict[str, Any]:
        ms = np.asarray(self.solve_ms, dtype=float)
        return {
            "n_steps": self.n_steps,
            "dt": self.dt,
            "aborted": self.aborted,
            "message": self.message,
            "tracking_error_integral": tracking_error_integral(self),
            "total_solve_ms": float(ms.sum()) if ms.size else 0.0,
            "mean_solve_ms": float(ms.mean()) if ms.size else 0.0,
            "max_solve_ms": float(ms.max()) if ms.size else 0.0,
            "n_unconverged": int(sum(1 for c in self.converged if not c)),
            "max_abs_input": float(np.max(np.abs(np.asarray(self.u)))) if self.u else 0.0,
            "total_solver_iterations": int(sum(s.iterations for s in self.solver_stats)),
            "solver_steps": [s.as_dict() for s in self.solver_stats],
        }


def tracking_error_integral(record: ClosedLoopRecord) -> float:
    """Rectangle rule of ||z_tracked - z_ref||^2 over the closed loop."""
    if len(record.tracked) < 2:
        return 0.0
    e = np.asarray(record.tracked[1:]) - np.asarray(record.reference[1:])
    return float(np.sum(e**2) * record.dt)


def rms_tracking_error(record: ClosedLoopRecord, t_start: float = 0.0, t_end: float = math.inf) -> float:
    t = np.asarray(record.t)
    mask = (t >= t_start - 1e-9) & (t <= t_end + 1e-9)
    if not np.any(mask):
        raise InvalidInputError(f"no closed-loop samples in [{t_start}, {t_end}]")
    e = np.asarray(record.tracked)[mask] - np.asarray(record.reference)[mask]
    return float(np.sqrt(np.mean(e**2)))


def mpc_loop(
    plant: Plant,
    dictionary: Dictionary,
    spec: OcpSpec,
    x0: Sequence[float],
    t_final: float,
    tracking: TrackingCost,
    warm_start: bool = True,
    solver: str = "bfgs",
    tol: float = 1e-8,
    max_iter: int = 200,
    observe: bool = False,
    on_step: Optional[Callable[[int, int], None]] = None,
    max_newton: int = 20,
    gmres_tol: float = 1e-12,
    gmres_restart: int = numerics.DEFAULT_GMRES_RESTART,
) -> ClosedLoopRecord:
    """Receding-horizon control of ``plant`` with the surrogate in ``spec``.

    Each step lifts the current (observed) state, solves the horizon problem, applies
    the first input for ``spec.dt`` and shifts. A plant failure ends the loop early
    with the partial record. ``max_iter`` bounds the BFGS solver; ``max_newton``,
    ``gmres_tol`` and ``gmres_restart`` configure the Newton solver.
    """
    if solver not in SOLVERS:
        raise InvalidInputError(f"Unknown solver '{solver}'; expected one of {', '.join(SOLVERS)}")
    if not t_final > 0.0:
        raise InvalidInputError("t_final must be > 0")
    if plant.n_c != spec.n_c:
        raise InvalidInputError(f"plant has {plant.n_c} inputs; OCP has {spec.n_c}")
    if tracking.n_o != spec.n_o:
        raise InvalidInputError("tracking cost dimension does not match the surrogate")
    spec = spec.discretized()
    n_steps = int(round(t_final / spec.dt))
    x = np.asarray(x0, dtype=float).ravel()
    buffer = dictionary.buffer() if isinstance(dictionary, DelayDictionary) else None
    idx = np.asarray(tracking.indices, dtype=int)

    def lift(state: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        y = plant.observe(state) if observe else state
        if buffer is None:
            return y, dictionary.eval(y)
        if not buffer.ready:
            for _ in range(buffer.depth - 1):
                buffer.push(y)
        return y, dictionary.eval(buffer.push(y))

    newton_options = {"max_newton": max_newton, "gmres_tol": gmres_tol, "gmres_restart": gmres_restart}
    record = ClosedLoopRecord(dt=spec.dt)
    y, z = lift(x)
    prev_coeffs: Optional[np.ndarray] = None
    u_prev: Optional[np.ndarray] = None
    for k in range(n_steps):
        t = k * spec.dt
        record.t.append(t)
        record.x.append(x.copy())
        record.y.append(y.copy())
        record.tracked.append(z[idx].copy())
        record.reference.append(tracking.reference_at(t))

        sub = spec.with_cost(tracking.stage_cost(t, spec.horizon, spec.dt))
        start = None
        if warm_start and prev_coeffs is not None:
            start = sub.basis.from_inputs(_shift_inputs(sub.basis.to_inputs(prev_coeffs)))
        tic = time.perf_counter()
        coeffs, inputs, j, stats = _solve_horizon(sub, z, start, tol, max_iter, u_prev, solver, newton_options)
        record.solve_ms.append((time.perf_counter() - tic) * 1000.0)
        u0 = np.clip(inputs[0], spec.input_lo, spec.input_hi)
        record.u.append(u0)
        record.objective.append(j)
        record.converged.append(stats.converged)
        record.solver_stats.append(stats)
        prev_coeffs = coeffs
        u_prev = u0
        try:
            x = plant.step(x, u0, spec.dt)
        except PlantStepError as exc:
            record.aborted = True
            record.message = f"plant step failed at t={t + spec.dt:g}: {exc}"
            return record
        y, z = lift(x)
        if on_step is not None:
            on_step(k + 1, n_steps)

    t = n_steps * spec.dt
    record.t.append(t)
    record.x.append(x.copy())
    record.y.append(y.copy())
    record.tracked.append(z[idx].copy())
    record.reference.append(tracking.reference_at(t))
    return record


def _shift_inputs(inputs: np.ndarray) -> np.ndarray:
    return np.vstack([inputs[1:], inputs[-1:]])


def _solve_horizon(
    spec: OcpSpec,
    z0: np.ndarray,
    start: Optional[np.ndarray],
    tol: float,
    max_iter: int,
    u_prev: Optional[np.ndarray],
    solver: str,
    newton_options: Dict[str, Any],
) -> Tuple[np.ndarray, np.ndarray, float, HorizonSolveStats]:
    coeffs0, j0 = initial_coefficients(spec, z0, start, u_prev)
    if solver == "newton":
        from .newton import KktIterate, newton_solve

        model = spec.operator_model(u_prev)
        it0 = KktIterate.from_inputs(spec, z0, coeffs0, model)
        it, diag = newton_solve(spec, it0, tol=tol, model=model, **newton_options)
        u = np.clip(spec.basis.to_inputs(it.coeffs), spec.input_lo, spec.input_hi)
        z = forward(model, z0, u)
        stats = HorizonSolveStats("newton", diag.converged, diag.iterations, diag.final_residual, diag.message, j0)
        return spec.basis.from_inputs(u), u, objective(spec, z, u), stats
    res = bfgs_box(spec, z0, coeffs0, tol=tol, max_iter=max_iter, u_prev=u_prev)
    stats = HorizonSolveStats(
        "bfgs", res.converged, res.iterations, res.projected_gradient_norm, res.message, res.initial_objective
    )
    return res.coeffs, res.inputs, res.objective, stats
