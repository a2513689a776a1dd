"""Newton-Krylov solution of the first-order optimality system of the surrogate OCP.

The unknowns are the predicted observables z_1..z_l, the adjoints lam_0..lam_{l-1}
and the input coefficients; z_0 = psi(x_0) and lam_l = 0 stay fixed. Every residual
block is bilinear in the unknowns, so Jacobian-vector products are exact and the
Jacobian is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import numerics
from .edmd import OperatorModel
from .errors import InvalidInputError, UnsupportedOperationError
from .ocp import OcpSpec, QuadraticStageCost, forward, gradient, solve_adjoint_discrete


MAX_BACKTRACKS = 20


@dataclass(frozen=True)
class KktIterate:
    z: np.ndarray
    lam: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def from_inputs(
        cls,
        spec: OcpSpec,
        z0: np.ndarray,
        coeffs: np.ndarray,
        model: Optional[OperatorModel] = None,
    ) -> "KktIterate":
        """Dynamics- and adjoint-consistent iterate for the given input coefficients."""
        m = spec.operator_model() if model is None else model
        c = np.asarray(coeffs, dtype=float).ravel()
        u = spec.basis.to_inputs(c)
        z = forward(m, np.asarray(z0, dtype=float), u)
        lam = solve_adjoint_discrete(spec, z, u, m).lam
        return cls(z=z, lam=lam, coeffs=c.copy())

    def pack(self) -> np.ndarray:
        return np.concatenate([self.z[1:].ravel(), self.lam[:-1].ravel(), self.coeffs])

    def unpack(self, vec: np.ndarray) -> "KktIterate":
        n, n_o = self.z.shape[0] - 1, self.z.shape[1]
        k = n * n_o
        z = self.z.copy()
        lam = self.lam.copy()
        z[1:] = vec[:k].reshape(n, n_o)
        lam[:-1] = vec[k : 2 * k].reshape(n, n_o)
        lam[-1] = 0.0
        return KktIterate(z=z, lam=lam, coeffs=vec[2 * k :].copy())

    def direction(self, vec: np.ndarray) -> "KktIterate":
        """Interpret a packed vector as a direction; fixed blocks get zero."""
        zero = KktIterate(z=np.zeros_like(self.z), lam=np.zeros_like(self.lam), coeffs=np.zeros_like(self.coeffs))
        return zero.unpack(vec)


@dataclass(frozen=True)
class KktResidual:
    r_z: np.ndarray
    r_lam: np.ndarray
    r_u: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.r_z**2) + np.sum(self.r_lam**2) + np.sum(self.r_u**2)))

    def pack(self) -> np.ndarray:
        return np.concatenate([self.r_z.ravel(), self.r_lam.ravel(), self.r_u])


@dataclass
class NewtonDiagnostics:
    converged: bool = False
    iterations: int = 0
    residual_norms: List[float] = field(default_factory=list)
    gmres_iterations: List[int] = field(default_factory=list)
    gmres_converged: List[bool] = field(default_factory=list)
    step_sizes: List[float] = field(default_factory=list)
    clipped: bool = False
    final_residual: float = float("nan")
    message: str = ""

    def as_dict(self) -> Dict[str, Any]:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_norms": list(self.residual_norms),
            "gmres_iterations": list(self.gmres_iterations),
            "gmres_converged": list(self.gmres_converged),
            "step_sizes": list(self.step_sizes),
            "clipped": self.clipped,
            "final_residual": self.final_residual,
            "message": self.message,
        }


def _model_and_cost(spec: OcpSpec, model: Optional[OperatorModel]) -> Tuple[OperatorModel, QuadraticStageCost]:
    if not isinstance(spec.cost, QuadraticStageCost):
        raise UnsupportedOperationError("the Newton solver handles quadratic stage costs only")
    return (spec.operator_model() if model is None else model), spec.cost


def _check_iterate(spec: OcpSpec, it: KktIterate) -> None:
    shape = (spec.horizon + 1, spec.n_o)
    if it.z.shape != shape or it.lam.shape != shape:
        raise InvalidInputError(f"iterate trajectories must have shape {shape}")
    if it.coeffs.shape != (spec.basis.dim,):
        raise InvalidInputError(f"iterate needs {spec.basis.dim} input coefficients; got {it.coeffs.shape[0]}")


def residuals(spec: OcpSpec, it: KktIterate, model: Optional[OperatorModel] = None) -> KktResidual:
    m, cost = _model_and_cost(spec, model)
    _check_iterate(spec, it)
    n = spec.horizon
    u = spec.basis.to_inputs(it.coeffs)
    z, lam = it.z, it.lam
    r_z = np.empty((n, spec.n_o))
    r_lam = np.empty((n, spec.n_o))
    for i in range(n):
        r_z[i] = z[i + 1] - m.matrix_at(u[i]) @ z[i]
        back = m.matrix_at(u[i + 1]).T @ lam[i + 1] if i + 1 < n else 0.0
        r_lam[i] = lam[i] - back - spec.dt * 2.0 * cost.q[i] @ (z[i + 1] - cost.a[i])
    r_u = spec.basis.project(gradient(spec, z, lam, u, m))
    return KktResidual(r_z=r_z, r_lam=r_lam, r_u=r_u)


def jvp(
    spec: OcpSpec,
    it: KktIterate,
    direction: KktIterate,
    model: Optional[OperatorModel] = None,
) -> KktResidual:
    """Directional derivative of ``residuals`` at ``it`` along ``direction``."""
    m, cost = _model_and_cost(spec, model)
    _check_iterate(spec, it)
    _check_iterate(spec, direction)
    n = spec.horizon
    u = spec.basis.to_inputs(it.coeffs)
    du = spec.basis.to_inputs(direction.coeffs)
    z, lam = it.z, it.lam
    dz = direction.z.copy()
    dlam = direction.lam.copy()
    dz[0] = 0.0
    dlam[-1] = 0.0

    d_z = np.empty((n, spec.n_o))
    d_lam = np.empty((n, spec.n_o))
    for i in range(n):
        acc = dz[i + 1] - m.matrix_at(u[i]) @ dz[i]
        for j, bj in enumerate(m.b):
            acc -= du[i, j] * (bj @ z[i])
        d_z[i] = acc
        back = np.zeros(spec.n_o)
        if i + 1 < n:
            back = m.matrix_at(u[i + 1]).T @ dlam[i + 1]
            for j, bj in enumerate(m.b):
                back += du[i + 1, j] * (bj.T @ lam[i + 1])
        d_lam[i] = dlam[i] - back - spec.dt * 2.0 * cost.q[i] @ dz[i + 1]

    dg = np.empty((n, spec.n_c))
    for j, bj in enumerate(m.b):
        dg[:, j] = np.einsum("ij,ij->i", dz[:-1] @ bj.T, lam[:-1]) + np.einsum("ij,ij->i", z[:-1] @ bj.T, dlam[:-1])
    dg += spec.dt * 2.0 * np.einsum("ijk,ik->ij", cost.r, du)
    return KktResidual(r_z=d_z, r_lam=d_lam, r_u=spec.basis.project(dg))


def newton_solve(
    spec: OcpSpec,
    it0: KktIterate,
    tol: float = 1e-10,
    max_newton: int = 20,
    gmres_tol: float = 1e-12,
    gmres_restart: int = numerics.DEFAULT_GMRES_RESTART,
    gmres_max_iter: Optional[int] = None,
    model: Optional[OperatorModel] = None,
    clip: bool = True,
) -> Tuple[KktIterate, NewtonDiagnostics]:
    """Newton iterations with GMRES inner solves and residual-norm backtracking.

    Stops when the residual norm is <= tol * (1 + initial norm). The box is not part of
    the system; with ``clip`` the final inputs are clipped into it and the iterate is
    made consistent again, and ``diagnostics.clipped`` records whether that changed them.
    """
    m, _ = _model_and_cost(spec, model)
    _check_iterate(spec, it0)
    if not (tol > 0.0 and gmres_tol > 0.0) or max_newton < 0 or gmres_restart < 1:
        raise InvalidInputError("tolerances must be > 0, max_newton >= 0 and gmres_restart >= 1")
    if not (np.all(np.isfinite(it0.z)) and np.all(np.isfinite(it0.lam)) and np.all(np.isfinite(it0.coeffs))):
        raise InvalidInputError("initial iterate must be finite")

    diag = NewtonDiagnostics()
    it = KktIterate(z=it0.z.copy(), lam=it0.lam.copy(), coeffs=it0.coeffs.copy())
    it.lam[-1] = 0.0
    res = residuals(spec, it, m)
    norm0 = res.norm
    target = tol * (1.0 + norm0)
    diag.residual_norms.append(norm0)
    dim = it.pack().size
    max_inner = max(500, 2 * dim) if gmres_max_iter is None else gmres_max_iter

    while res.norm > target and diag.iterations < max_newton:
        base = it

        def apply(v: np.ndarray) -> np.ndarray:
            return jvp(spec, base, base.direction(v), m).pack()

        sol = numerics.gmres(apply, -res.pack(), tol=gmres_tol, max_iter=max_inner, restart=gmres_restart)
        diag.gmres_iterations.append(sol.iterations)
        diag.gmres_converged.append(sol.converged)

        x = base.pack()
        step = 1.0
        accepted = None
        for _ in range(MAX_BACKTRACKS + 1):
            trial = base.unpack(x + step * sol.x)
            trial_res = residuals(spec, trial, m)
            if np.isfinite(trial_res.norm) and trial_res.norm < res.norm:
                accepted = (trial, trial_res)
                break
            step *= 0.5
        diag.iterations += 1
        if accepted is None:
            diag.message = "backtracking failed to reduce the residual"
            break
        it, res = accepted
        diag.step_sizes.append(step)
        diag.residual_norms.append(res.norm)

    diag.converged = res.norm <= target
    if not diag.converged and not diag.message:
        diag.message = f"no convergence after {diag.iterations} Newton iterations"

    if clip:
        it = _clip_to_box(spec, it, m, diag)
        if diag.clipped:
            res = residuals(spec, it, m)
    diag.final_residual = res.norm
    return it, diag


def _clip_to_box(spec: OcpSpec, it: KktIterate, model: OperatorModel, diag: NewtonDiagnostics) -> KktIterate:
    u = spec.basis.to_inputs(it.coeffs)
    clipped = np.clip(u, spec.input_lo, spec.input_hi)
    if np.array_equal(clipped, u):
        return it
    diag.clipped = True
    coeffs = spec.basis.from_inputs(clipped)
    return KktIterate.from_inputs(spec, it.z[0], coeffs, model)
