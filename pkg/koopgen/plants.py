"""Reference simulators and training-set generation."""

from __future__ import annotations

import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import repeat
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import numerics
from .edmd import TrajectoryDataset
from .errors import InvalidInputError, PlantStepError


TWO_PI = 2.0 * math.pi
PLANT_KINDS = ("duffing", "burgers1d", "linear", "circle_rotation", "synthetic_nonlinear_input")
SAMPLING_MODES = ("scattered", "trajectories")


class Plant:
    """Ground-truth system x' = H(x, u) with a box-constrained input."""

    kind = "plant"
    control_affine = True

    def __init__(self, n: int, n_c: int, input_lo: Sequence[float], input_hi: Sequence[float]) -> None:
        if n < 1 or n_c < 1:
            raise InvalidInputError("plant needs n >= 1 and n_c >= 1")
        lo = np.asarray(input_lo, dtype=float).ravel()
        hi = np.asarray(input_hi, dtype=float).ravel()
        if lo.shape != (n_c,) or hi.shape != (n_c,):
            raise InvalidInputError(f"input box must have {n_c} entries per bound")
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(hi < lo):
            raise InvalidInputError("input box must be finite and nonempty")
        self._n = int(n)
        self._n_c = int(n_c)
        self.input_lo = lo
        self.input_hi = hi

    @property
    def n(self) -> int:
        return self._n

    @property
    def n_c(self) -> int:
        return self._n_c

    @property
    def n_obs(self) -> int:
        return self._n

    def rhs(self, x: Sequence[float], u: Sequence[float]) -> np.ndarray:
        xs, us = self._check(x, u)
        return self._rhs_rows(xs[None, :], us[None, :])[0]

    def rhs_batch(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        return self._rhs_rows(np.atleast_2d(xs).astype(float), np.atleast_2d(us).astype(float))

    def step(self, x: Sequence[float], u: Sequence[float], dt: float) -> np.ndarray:
        xs, us = self._check(x, u)
        return self.step_batch(xs[None, :], us[None, :], dt)[0]

    def step_batch(self, xs: np.ndarray, us: np.ndarray, dt: float) -> np.ndarray:
        if not dt > 0.0:
            raise InvalidInputError(f"dt must be > 0; got {dt}")
        out = self._step_rows(np.atleast_2d(xs).astype(float), np.atleast_2d(us).astype(float), float(dt))
        if not np.all(np.isfinite(out)):
            raise PlantStepError(f"{self.kind} step over dt={dt} produced non-finite states")
        return out

    def observe(self, x: Sequence[float]) -> np.ndarray:
        return np.array(x, dtype=float, copy=True)

    def observe_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.observe(row) for row in np.atleast_2d(xs)])

    def default_state_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return -np.ones(self._n), np.ones(self._n)

    def default_initial_state(self) -> np.ndarray:
        return np.zeros(self._n)

    def in_box(self, u: Sequence[float], tol: float = 1e-12) -> bool:
        arr = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(arr >= self.input_lo - tol) and np.all(arr <= self.input_hi + tol))

    def descriptor(self) -> Dict[str, Any]:
        raise NotImplementedError

    def _check(self, x: Sequence[float], u: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(x, dtype=float).ravel()
        us = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        if xs.shape != (self._n,):
            raise InvalidInputError(f"{self.kind} state must have length {self._n}; got {xs.shape[0]}")
        if us.shape != (self._n_c,):
            raise InvalidInputError(f"{self.kind} input must have length {self._n_c}; got {us.shape[0]}")
        return xs, us

    def _rhs_rows(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _step_rows(self, xs: np.ndarray, us: np.ndarray, dt: float) -> np.ndarray:
        raise NotImplementedError

    def _rk4_rows(self, xs: np.ndarray, us: np.ndarray, dt: float, max_substep: float) -> np.ndarray:
        n_sub = max(1, int(math.ceil(dt / max_substep - 1e-9)))
        h = dt / n_sub
        x = xs.copy()
        for _ in range(n_sub):
            k1 = self._rhs_rows(x, us)
            k2 = self._rhs_rows(x + 0.5 * h * k1, us)
            k3 = self._rhs_rows(x + 0.5 * h * k2, us)
            k4 = self._rhs_rows(x + h * k3, us)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x


@dataclass(frozen=True)
class DuffingParams:
    delta: float = 0.5
    alpha: float = -1.0
    beta: float = 1.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.delta, self.alpha, self.beta)):
            raise InvalidInputError("Duffing parameters must be finite")


class DuffingPlant(Plant):
    """x1' = x2, x2' = -delta x2 - alpha x1 - beta x1^3 + u."""

    kind = "duffing"

    def __init__(
        self,
        params: DuffingParams = DuffingParams(),
        input_lo: float = -1.0,
        input_hi: float = 1.0,
        max_substep: float = 1e-3,
    ) -> None:
        super().__init__(2, 1, [input_lo], [input_hi])
        if not max_substep > 0.0:
            raise InvalidInputError("max_substep must be > 0")
        self.params = params
        self.max_substep = float(max_substep)

    def _rhs_rows(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        p = self.params
        x1 = xs[:, 0]
        x2 = xs[:, 1]
        out = np.empty_like(xs)
        out[:, 0] = x2
        out[:, 1] = -p.delta * x2 - p.alpha * x1 - p.beta * x1**3 + us[:, 0]
        return out

    def _step_rows(self, xs: np.ndarray, us: np.ndarray, dt: float) -> np.ndarray:
        return self._rk4_rows(xs, us, dt, self.max_substep)

    def default_state_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array([-3.0, -3.0]), np.array([3.0, 3.0])

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            **asdict(self.params),
            "input_lo": float(self.input_lo[0]),
            "input_hi": float(self.input_hi[0]),
            "max_substep": self.max_substep,
        }


@dataclass(frozen=True)
class BurgersParams:
    nu: float = 0.01
    n_grid: int = 128
    length: float = 2.0
    chi: Optional[Tuple[float, ...]] = None
    chi_center: float = 1.0
    chi_width: float = 0.2
    input_lo: float = -0.025
    input_hi: float = 0.075
    obs_points: Tuple[float, ...] = (0.0, 0.5, 1.0, 1.5)
    max_substep: float = 0.01
    cfl: float = 0.5

    def __post_init__(self) -> None:
        if self.n_grid < 32:
            raise InvalidInputError(f"Burgers grid needs N >= 32; got {self.n_grid}")
        if not (self.nu > 0.0 and self.length > 0.0 and self.chi_width > 0.0):
            raise InvalidInputError("Burgers nu, length and chi_width must be > 0")
        if not (0.0 < self.cfl <= 1.0) or not self.max_substep > 0.0:
            raise InvalidInputError("Burgers cfl must be in (0, 1] and max_substep > 0")
        if self.chi is not None:
            chi = np.asarray(self.chi, dtype=float)
            if chi.shape != (self.n_grid,) or not np.all(np.isfinite(chi)):
                raise InvalidInputError(f"chi must hold {self.n_grid} finite grid samples")
        if not self.obs_points:
            raise InvalidInputError("Burgers needs at least one observation point")


class Burgers1dPlant(Plant):
    """v' = nu v_xixi - v v_xi + u chi(xi) on a periodic grid; the state is the grid vector."""

    kind = "burgers1d"

    def __init__(self, params: BurgersParams = BurgersParams()) -> None:
        super().__init__(params.n_grid, 1, [params.input_lo], [params.input_hi])
        self.params = params
        n = params.n_grid
        self.dxi = params.length / n
        self.grid = np.arange(n) * self.dxi
        if params.chi is not None:
            self.chi = np.asarray(params.chi, dtype=float)
        else:
            d = np.abs(self.grid - params.chi_center)
            d = np.minimum(d, params.length - d)
            bump = np.exp(-(d**2) / (2.0 * params.chi_width**2))
            self.chi = bump / bump.max()
        k = np.arange(n // 2 + 1)
        # eigenvalues of the periodic second-difference operator
        self._lap_symbol = (2.0 * np.cos(TWO_PI * k / n) - 2.0) / self.dxi**2
        self._obs = self._observation_matrix(params.obs_points)

    @property
    def n_obs(self) -> int:
        return int(self._obs.shape[0])

    def _observation_matrix(self, points: Sequence[float]) -> np.ndarray:
        n = self.params.n_grid
        rows = np.zeros((len(points), n))
        for r, xi in enumerate(points):
            pos = (float(xi) % self.params.length) / self.dxi
            i0 = int(math.floor(pos + 1e-12))
            w = max(0.0, pos - i0)
            if w < 1e-12:
                rows[r, i0 % n] = 1.0
            else:
                rows[r, i0 % n] = 1.0 - w
                rows[r, (i0 + 1) % n] = w
        return rows

    def _advection(self, v: np.ndarray) -> np.ndarray:
        d1 = (np.roll(v, -1, axis=-1) - np.roll(v, 1, axis=-1)) / (2.0 * self.dxi)
        return v * d1

    def _rhs_rows(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        d2 = (np.roll(xs, -1, axis=-1) - 2.0 * xs + np.roll(xs, 1, axis=-1)) / self.dxi**2
        return self.params.nu * d2 - self._advection(xs) + us[:, :1] * self.chi[None, :]

    def substep_for(self, v: np.ndarray) -> float:
        """max_substep halved until the advective CFL bound holds for ``v``.

        Steps that are whole multiples of the returned substep compose exactly.
        """
        p = self.params
        h = p.max_substep
        vmax = float(np.max(np.abs(v)))
        if vmax > 0.0:
            limit = p.cfl * self.dxi / vmax
            while h > limit:
                h *= 0.5
        return h

    def _step_rows(self, xs: np.ndarray, us: np.ndarray, dt: float) -> np.ndarray:
        p = self.params
        out = np.empty_like(xs)
        for r in range(xs.shape[0]):
            v = xs[r].copy()
            h_max = self.substep_for(v)
            n_sub = max(1, int(math.ceil(dt / h_max - 1e-9)))
            h = dt / n_sub
            denom = 1.0 - h * p.nu * self._lap_symbol
            forcing = us[r, 0] * self.chi
            for _ in range(n_sub):
                explicit = v + h * (forcing - self._advection(v))
                v = np.fft.irfft(np.fft.rfft(explicit) / denom, n=p.n_grid)
                if not np.all(np.isfinite(v)):
                    raise PlantStepError("Burgers substep produced non-finite values")
            out[r] = v
        return out

    def observe(self, x: Sequence[float]) -> np.ndarray:
        xs = np.asarray(x, dtype=float).ravel()
        if xs.shape != (self.n,):
            raise InvalidInputError(f"Burgers state must have length {self.n}")
        return self._obs @ xs

    def observe_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.atleast_2d(xs) @ self._obs.T

    def default_state_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.full(self.n, 0.45), np.full(self.n, 0.55)

    def default_initial_state(self) -> np.ndarray:
        return np.full(self.n, 0.5)

    def descriptor(self) -> Dict[str, Any]:
        d = asdict(self.params)
        d["chi"] = None if self.params.chi is None else [float(v) for v in self.params.chi]
        d["obs_points"] = [float(v) for v in self.params.obs_points]
        return {"kind": self.kind, **d}


class LinearPlant(Plant):
    """x' = A x + B u, stepped exactly through the augmented matrix exponential."""

    kind = "linear"

    def __init__(
        self,
        a: object,
        b: object,
        input_lo: Optional[Sequence[float]] = None,
        input_hi: Optional[Sequence[float]] = None,
    ) -> None:
        a_arr = numerics.as_matrix(a, "A")
        b_arr = numerics.as_matrix(b, "B")
        n = a_arr.shape[0]
        if a_arr.shape != (n, n) or b_arr.shape[0] != n:
            raise InvalidInputError(f"A must be square and B must have {n} rows")
        n_c = b_arr.shape[1]
        super().__init__(
            n,
            n_c,
            -np.ones(n_c) if input_lo is None else input_lo,
            np.ones(n_c) if input_hi is None else input_hi,
        )
        self.a = a_arr
        self.b = b_arr
        self._flows: Dict[float, Tuple[np.ndarray, np.ndarray]] = {}

    def forcing(self, us: np.ndarray) -> np.ndarray:
        return us @ self.b.T

    def _rhs_rows(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        return xs @ self.a.T + self.forcing(us)

    def flow(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        """(Phi, Gamma) with x(dt) = Phi x + Gamma w for constant forcing input w."""
        cached = self._flows.get(dt)
        if cached is not None:
            return cached
        n = self.n
        g = self.b.shape[1]
        aug = np.zeros((n + g, n + g))
        aug[:n, :n] = self.a
        aug[:n, n:] = self.b
        e = numerics.expm(aug * dt)
        pair = (e[:n, :n], e[:n, n:])
        self._flows[dt] = pair
        return pair

    def _forcing_input(self, us: np.ndarray) -> np.ndarray:
        return us

    def _step_rows(self, xs: np.ndarray, us: np.ndarray, dt: float) -> np.ndarray:
        phi, gam = self.flow(dt)
        return xs @ phi.T + self._forcing_input(us) @ gam.T

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "input_lo": self.input_lo.tolist(),
            "input_hi": self.input_hi.tolist(),
        }


class SyntheticNonlinearInputPlant(LinearPlant):
    """x' = A x + G (u * u); not control-affine."""

    kind = "synthetic_nonlinear_input"
    control_affine = False

    def forcing(self, us: np.ndarray) -> np.ndarray:
        return (us**2) @ self.b.T

    def _forcing_input(self, us: np.ndarray) -> np.ndarray:
        return us**2


class CircleRotationPlant(Plant):
    """x' = u on the circle [0, 2 pi)."""

    kind = "circle_rotation"

    def __init__(self, input_lo: float = -1.0, input_hi: float = 1.0) -> None:
        super().__init__(1, 1, [input_lo], [input_hi])

    def _rhs_rows(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        return np.broadcast_to(us[:, :1], xs.shape).copy()

    def _step_rows(self, xs: np.ndarray, us: np.ndarray, dt: float) -> np.ndarray:
        return np.mod(xs + us[:, :1] * dt, TWO_PI)

    def default_state_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.zeros(1), np.full(1, TWO_PI)

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind, "input_lo": float(self.input_lo[0]), "input_hi": float(self.input_hi[0])}


def plant_from_descriptor(desc: Dict[str, Any]) -> Plant:
    """Rebuild a plant from its descriptor (or a config section of the same shape)."""
    params = dict(desc)
    kind = params.pop("kind", None)
    if kind == "duffing":
        dp = DuffingParams(
            delta=float(params.pop("delta", 0.5)),
            alpha=float(params.pop("alpha", -1.0)),
            beta=float(params.pop("beta", 1.0)),
        )
        return DuffingPlant(
            dp,
            input_lo=float(params.pop("input_lo", -1.0)),
            input_hi=float(params.pop("input_hi", 1.0)),
            max_substep=float(params.pop("max_substep", 1e-3)),
        )
    if kind == "burgers1d":
        chi = params.pop("chi", None)
        obs = params.pop("obs_points", None)
        bp = BurgersParams(
            chi=None if chi is None else tuple(float(v) for v in chi),
            obs_points=BurgersParams.obs_points if obs is None else tuple(float(v) for v in obs),
            **{k: v for k, v in params.items() if k in BurgersParams.__dataclass_fields__},
        )
        return Burgers1dPlant(bp)
    if kind in ("linear", "synthetic_nonlinear_input"):
        cls = LinearPlant if kind == "linear" else SyntheticNonlinearInputPlant
        return cls(params["a"], params["b"], params.get("input_lo"), params.get("input_hi"))
    if kind == "circle_rotation":
        return CircleRotationPlant(float(params.get("input_lo", -1.0)), float(params.get("input_hi", 1.0)))
    raise InvalidInputError(f"Unknown plant kind '{kind}'; expected one of {', '.join(PLANT_KINDS)}")


def random_stable_linear_plant(n: int, n_c: int, seed: int) -> LinearPlant:
    """Random A with spectrum in the open left half plane and random B, inputs in [-1, 1]."""
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n)) / math.sqrt(n)
    a = m - (np.max(np.linalg.eigvals(m).real) + 0.5) * np.eye(n)
    b = rng.standard_normal((n, n_c))
    return LinearPlant(a, b)


def affinity_defect(plant: Plant, n_trials: int = 100, seed: int = 0) -> float:
    """Max of |H(x, a u1 + (1-a) u2) - a H(x, u1) - (1-a) H(x, u2)| / (1 + |H|) over random draws."""
    rng = np.random.default_rng(seed)
    lo, hi = plant.default_state_box()
    worst = 0.0
    for _ in range(n_trials):
        x = lo + (hi - lo) * rng.random(plant.n)
        u1 = plant.input_lo + (plant.input_hi - plant.input_lo) * rng.random(plant.n_c)
        u2 = plant.input_lo + (plant.input_hi - plant.input_lo) * rng.random(plant.n_c)
        a = float(rng.random())
        f1 = plant.rhs(x, u1)
        f2 = plant.rhs(x, u2)
        mixed = plant.rhs(x, a * u1 + (1.0 - a) * u2)
        scale = 1.0 + max(np.max(np.abs(f1)), np.max(np.abs(f2)))
        worst = max(worst, float(np.max(np.abs(mixed - a * f1 - (1.0 - a) * f2))) / scale)
    return worst


@dataclass(frozen=True)
class SamplingSpec:
    """How a training set is drawn.

    ``scattered``: ``n_initial`` states uniform in the state box, each evaluated under
    every input level (or one uniform input when no levels are given).
    ``trajectories``: ``n_initial`` trajectories of ``n_steps`` snapshot pairs under
    piecewise-constant random inputs redrawn every ``hold_steps`` steps.
    """

    mode: str = "trajectories"
    n_initial: int = 1
    n_steps: int = 0
    dt: Optional[float] = None
    state_lo: Optional[Tuple[float, ...]] = None
    state_hi: Optional[Tuple[float, ...]] = None
    x0: Optional[Tuple[float, ...]] = None
    input_levels: Optional[Tuple[Tuple[float, ...], ...]] = None
    level_probabilities: Optional[Tuple[float, ...]] = None
    hold_steps: int = 1
    derivatives: bool = True
    observe: bool = False

    def validate(self, plant: Plant) -> None:
        if self.mode not in SAMPLING_MODES:
            raise InvalidInputError(f"Unknown sampling mode '{self.mode}'; expected one of {', '.join(SAMPLING_MODES)}")
        if self.n_initial < 1:
            raise InvalidInputError("sampling.n_initial must be >= 1")
        if self.mode == "trajectories":
            if self.n_steps < 1:
                raise InvalidInputError("sampling.n_steps must be >= 1 for trajectory sampling")
            if self.dt is None:
                raise InvalidInputError("sampling.dt is required for trajectory sampling")
        if self.dt is not None and not self.dt > 0.0:
            raise InvalidInputError("sampling.dt must be > 0")
        if self.mode == "scattered" and not self.derivatives and self.dt is None:
            raise InvalidInputError("scattered sampling needs derivatives or a successor spacing dt")
        if self.hold_steps < 1:
            raise InvalidInputError("sampling.hold_steps must be >= 1")
        if self.x0 is not None and len(self.x0) != plant.n:
            raise InvalidInputError(f"sampling.x0 must have length {plant.n}")
        for name in ("state_lo", "state_hi"):
            val = getattr(self, name)
            if val is not None and len(val) != plant.n:
                raise InvalidInputError(f"sampling.{name} must have length {plant.n}")
        levels = self.levels(plant)
        if levels is not None:
            if levels.shape[0] == 0:
                raise InvalidInputError("sampling.input_levels must not be empty")
            for lv in levels:
                if not plant.in_box(lv):
                    raise InvalidInputError(f"input level {lv.tolist()} lies outside the plant input box")
        if self.level_probabilities is not None:
            if levels is None or len(self.level_probabilities) != levels.shape[0]:
                raise InvalidInputError("sampling.level_probabilities needs one entry per input level")
            p = np.asarray(self.level_probabilities, dtype=float)
            if np.any(p < 0.0) or not math.isclose(float(p.sum()), 1.0, rel_tol=0.0, abs_tol=1e-9):
                raise InvalidInputError("sampling.level_probabilities must be nonnegative and sum to 1")

    def levels(self, plant: Plant) -> Optional[np.ndarray]:
        if self.input_levels is None:
            return None
        return np.asarray([np.atleast_1d(np.asarray(lv, dtype=float)) for lv in self.input_levels]).reshape(
            -1, plant.n_c
        )

    def state_box(self, plant: Plant) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = plant.default_state_box()
        if self.state_lo is not None:
            lo = np.asarray(self.state_lo, dtype=float)
        if self.state_hi is not None:
            hi = np.asarray(self.state_hi, dtype=float)
        if np.any(hi < lo):
            raise InvalidInputError("sampling state box must be nonempty")
        return lo, hi

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def sample_training_set(plant: Plant, spec: SamplingSpec, seed: int, jobs: int = 1) -> TrajectoryDataset:
    """Draw a reproducible dataset; the result does not depend on ``jobs``."""
    spec.validate(plant)
    if spec.mode == "scattered":
        data = _sample_scattered(plant, spec, seed)
    else:
        data = _sample_trajectories(plant, spec, seed, jobs)
    return data


def _sample_scattered(plant: Plant, spec: SamplingSpec, seed: int) -> TrajectoryDataset:
    rng = np.random.default_rng(seed)
    lo, hi = spec.state_box(plant)
    x0 = lo + (hi - lo) * rng.random((spec.n_initial, plant.n))
    levels = spec.levels(plant)
    if levels is not None:
        xs = np.vstack([x0 for _ in range(levels.shape[0])])
        us = np.repeat(levels, spec.n_initial, axis=0)
    else:
        xs = x0
        us = plant.input_lo + (plant.input_hi - plant.input_lo) * rng.random((spec.n_initial, plant.n_c))
    xdot = plant.rhs_batch(xs, us) if spec.derivatives else None
    x_next = plant.step_batch(xs, us, spec.dt) if spec.dt is not None else None
    if spec.observe:
        xs = plant.observe_batch(xs)
        xdot = None if xdot is None else plant.observe_batch(xdot)
        x_next = None if x_next is None else plant.observe_batch(x_next)
    return TrajectoryDataset(
        x=xs,
        u=us,
        input_lo=plant.input_lo,
        input_hi=plant.input_hi,
        xdot=xdot,
        x_next=x_next,
        dt=spec.dt,
        metadata=_metadata(plant, spec, seed),
    )


def _metadata(plant: Plant, spec: SamplingSpec, seed: int) -> Dict[str, Any]:
    return {"plant": plant.descriptor(), "sampling": spec.as_dict(), "seed": int(seed)}


_TrajectoryRows = Tuple[int, np.ndarray, np.ndarray, Optional[np.ndarray], np.ndarray]


def _sample_trajectories(plant: Plant, spec: SamplingSpec, seed: int, jobs: int) -> TrajectoryDataset:
    jobs_eff = min(_effective_jobs(jobs), spec.n_initial)
    indices = list(range(spec.n_initial))
    if jobs_eff <= 1:
        rows = _trajectory_chunk(plant, spec, indices, seed)
    else:
        chunks = _split_indices(indices, jobs_eff)
        try:
            rows = _parallel_chunks(plant, spec, chunks, seed, jobs_eff)
        except (PermissionError, OSError):
            rows = _thread_chunks(plant, spec, chunks, seed, jobs_eff)
    rows.sort(key=lambda r: r[0])

    xs, us, xdots, nexts, traj, steps = [], [], [], [], [], []
    for idx, x, u, xd, xn in rows:
        xs.append(x)
        us.append(u)
        xdots.append(xd)
        nexts.append(xn)
        traj.append(np.full(x.shape[0], idx, dtype=int))
        steps.append(np.arange(x.shape[0], dtype=int))
    return TrajectoryDataset(
        x=np.vstack(xs),
        u=np.vstack(us),
        input_lo=plant.input_lo,
        input_hi=plant.input_hi,
        xdot=np.vstack(xdots) if spec.derivatives else None,
        x_next=np.vstack(nexts),
        dt=spec.dt,
        traj_id=np.concatenate(traj),
        step=np.concatenate(steps),
        metadata=_metadata(plant, spec, seed),
    )


def _one_trajectory(plant: Plant, spec: SamplingSpec, idx: int, base_seed: int) -> _TrajectoryRows:
    rng = np.random.default_rng(_seed_for_index(base_seed, idx))
    if spec.x0 is not None:
        x = np.asarray(spec.x0, dtype=float)
    elif spec.state_lo is not None or spec.state_hi is not None:
        lo, hi = spec.state_box(plant)
        x = lo + (hi - lo) * rng.random(plant.n)
    else:
        x = plant.default_initial_state()
    levels = spec.levels(plant)
    probs = None if spec.level_probabilities is None else np.asarray(spec.level_probabilities, dtype=float)

    n = spec.n_steps
    xs = np.empty((n, plant.n))
    us = np.empty((n, plant.n_c))
    nexts = np.empty((n, plant.n))
    xdots = np.empty((n, plant.n)) if spec.derivatives else None
    u = None
    for k in range(n):
        if k % spec.hold_steps == 0:
            if levels is not None:
                u = levels[rng.choice(levels.shape[0], p=probs)]
            else:
                u = plant.input_lo + (plant.input_hi - plant.input_lo) * rng.random(plant.n_c)
        xs[k] = x
        us[k] = u
        if xdots is not None:
            xdots[k] = plant.rhs(x, u)
        x = plant.step(x, u, spec.dt)
        nexts[k] = x

    if spec.observe:
        xs = plant.observe_batch(xs)
        nexts = plant.observe_batch(nexts)
        xdots = None if xdots is None else plant.observe_batch(xdots)
    return idx, xs, us, xdots, nexts


def _trajectory_chunk(plant: Plant, spec: SamplingSpec, indices: List[int], base_seed: int) -> List[_TrajectoryRows]:
    return [_one_trajectory(plant, spec, idx, base_seed) for idx in indices]


def _parallel_chunks(
    plant: Plant,
    spec: SamplingSpec,
    chunks: List[List[int]],
    base_seed: int,
    jobs: int,
) -> List[_TrajectoryRows]:
    out: List[_TrajectoryRows] = []
    if os.name == "posix":
        mp_ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=mp_ctx) as executor:
            for rows in executor.map(_trajectory_chunk, repeat(plant), repeat(spec), chunks, repeat(base_seed)):
                out.extend(rows)
        return out

    with ProcessPoolExecutor(max_workers=jobs) as executor:
        for rows in executor.map(_trajectory_chunk, repeat(plant), repeat(spec), chunks, repeat(base_seed)):
            out.extend(rows)
    return out


def _thread_chunks(
    plant: Plant,
    spec: SamplingSpec,
    chunks: List[List[int]],
    base_seed: int,
    jobs: int,
) -> List[_TrajectoryRows]:
    out: List[_TrajectoryRows] = []
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        for rows in executor.map(_trajectory_chunk, repeat(plant), repeat(spec), chunks, repeat(base_seed)):
            out.extend(rows)
    return out


def _effective_jobs(jobs: int) -> int:
    if jobs < 0:
        raise InvalidInputError("jobs must be >= 0")
    if jobs == 0:
        return os.cpu_count() or 1
    return jobs


def _split_indices(indices: List[int], jobs: int) -> List[List[int]]:
    chunk_size = max(1, -(-len(indices) // jobs))
    return [indices[i : i + chunk_size] for i in range(0, len(indices), chunk_size)]


def _seed_for_index(base_seed: int, idx: int) -> int:
    # 64-bit mix so each trajectory index maps to a stable seed.
    return (base_seed + (idx + 1) * 0x9E3779B97F4A7C15) & ((1 << 64) - 1)
