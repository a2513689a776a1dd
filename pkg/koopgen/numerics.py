"""Dense linear-algebra and integration kernels shared by the other modules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator
from scipy.sparse.linalg import gmres as _scipy_gmres

from .errors import InvalidInputError


DEFAULT_PINV_RTOL = 1e-10
DEFAULT_GMRES_RESTART = 50
SCHEMES = ("euler", "rk4", "exact")


@dataclass(frozen=True)
class SvdFactorization:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    rtol: float

    @property
    def sigma_max(self) -> float:
        return float(self.s[0]) if self.s.size else 0.0

    @property
    def cutoff(self) -> float:
        return self.rtol * self.sigma_max

    @property
    def rank(self) -> int:
        if self.sigma_max == 0.0:
            return 0
        return int(np.count_nonzero(self.s > self.cutoff))

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt

    def pinv(self) -> np.ndarray:
        r = self.rank
        if r == 0:
            return np.zeros((self.vt.shape[1], self.u.shape[0]))
        return (self.vt[:r].T / self.s[:r]) @ self.u[:, :r].T


@dataclass(frozen=True)
class GmresResult:
    x: np.ndarray
    converged: bool
    residual_norm: float
    relative_residual: float
    iterations: int
    message: str = ""


def as_matrix(a: object, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2D array; got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def svd(a: object, rtol: float = DEFAULT_PINV_RTOL) -> SvdFactorization:
    """Thin SVD with a relative truncation tolerance attached."""
    arr = as_matrix(a)
    _check_rtol(rtol)
    u, s, vt = np.linalg.svd(arr, full_matrices=False)
    return SvdFactorization(u=u, s=s, vt=vt, rtol=float(rtol))


def pinv(a: object, rtol: float = DEFAULT_PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values below rtol * sigma_max are dropped."""
    return svd(a, rtol).pinv()


def lstsq(y: object, x: object, rtol: float = DEFAULT_PINV_RTOL) -> np.ndarray:
    """Minimum-Frobenius-norm minimiser M of ||Y - M X||_F, i.e. M = Y X^+."""
    y_arr = as_matrix(y, "Y")
    x_arr = as_matrix(x, "X")
    if y_arr.shape[1] != x_arr.shape[1]:
        raise InvalidInputError(
            f"Y and X must have the same number of columns; got {y_arr.shape[1]} and {x_arr.shape[1]}"
        )
    return y_arr @ pinv(x_arr, rtol)


def expm(a: object) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Pade approximants)."""
    arr = as_matrix(a)
    if arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(f"expm requires a square matrix; got shape {arr.shape}")
    return scipy.linalg.expm(arr)


def bilinear_generator(k0: np.ndarray, b: Sequence[np.ndarray], u: Sequence[float]) -> np.ndarray:
    """Return K0 + sum_i u_i B_i."""
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    if u_arr.shape[0] != len(b):
        raise InvalidInputError(f"input has {u_arr.shape[0]} entries but {len(b)} input matrices were given")
    out = np.array(k0, dtype=float, copy=True)
    for ui, bi in zip(u_arr, b):
        if ui != 0.0:
            out += ui * np.asarray(bi, dtype=float)
    return out


def integrate_bilinear(
    k0: object,
    b: Sequence[object],
    u: Sequence[float],
    z0: object,
    dt: float,
    scheme: str = "exact",
) -> np.ndarray:
    """Advance z' = (K0 + sum u_i B_i) z over one hold interval of length dt."""
    k0_arr = as_matrix(k0, "K0")
    n = k0_arr.shape[0]
    if k0_arr.shape != (n, n):
        raise InvalidInputError(f"K0 must be square; got shape {k0_arr.shape}")
    b_arrs = [as_matrix(bi, "B") for bi in b]
    for bi in b_arrs:
        if bi.shape != (n, n):
            raise InvalidInputError(f"input matrix shape {bi.shape} does not match K0 shape {k0_arr.shape}")
    z = np.asarray(z0, dtype=float)
    if z.shape != (n,):
        raise InvalidInputError(f"z0 must have length {n}; got shape {z.shape}")
    if not dt > 0.0:
        raise InvalidInputError(f"dt must be > 0; got {dt}")

    gen = bilinear_generator(k0_arr, b_arrs, u)
    if scheme == "exact":
        return expm(gen * dt) @ z
    if scheme == "euler":
        return z + dt * (gen @ z)
    if scheme == "rk4":
        k1 = gen @ z
        k2 = gen @ (z + 0.5 * dt * k1)
        k3 = gen @ (z + 0.5 * dt * k2)
        k4 = gen @ (z + dt * k3)
        return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    raise InvalidInputError(f"Unknown integration scheme '{scheme}'; expected one of {', '.join(SCHEMES)}")


def gmres(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs: object,
    tol: float = 1e-10,
    max_iter: int = 500,
    restart: int = DEFAULT_GMRES_RESTART,
    x0: object | None = None,
) -> GmresResult:
    """Matrix-free restarted GMRES.

    ``max_iter`` counts inner iterations. Non-convergence is reported through the
    result, never raised.
    """
    b = np.asarray(rhs, dtype=float)
    if b.ndim != 1:
        raise InvalidInputError("rhs must be a vector")
    if not tol > 0.0:
        raise InvalidInputError("tol must be > 0")
    if max_iter < 1 or restart < 1:
        raise InvalidInputError("max_iter and restart must be >= 1")

    n = b.shape[0]
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return GmresResult(
            x=np.zeros(n),
            converged=True,
            residual_norm=0.0,
            relative_residual=0.0,
            iterations=0,
            message="zero right-hand side",
        )

    op = LinearOperator((n, n), matvec=lambda v: np.asarray(apply(np.ravel(v)), dtype=float), dtype=float)
    restart_eff = min(restart, n)
    outer = max(1, -(-max_iter // restart_eff))
    inner_count = [0]

    def _count(_: object) -> None:
        inner_count[0] += 1

    x, info = _scipy_gmres(
        op,
        b,
        x0=None if x0 is None else np.asarray(x0, dtype=float),
        rtol=tol,
        atol=0.0,
        restart=restart_eff,
        maxiter=outer,
        callback=_count,
        callback_type="pr_norm",
    )
    residual = float(np.linalg.norm(np.asarray(apply(x), dtype=float) - b))
    rel = residual / b_norm
    converged = rel <= tol
    if info < 0:
        message = "breakdown or illegal input"
    elif info > 0:
        message = f"no convergence within {inner_count[0]} iterations"
    elif not converged:
        message = f"true relative residual {rel:.3g} exceeds tol {tol:.3g}"
    else:
        message = "converged"
    return GmresResult(
        x=np.asarray(x, dtype=float),
        converged=bool(converged),
        residual_norm=residual,
        relative_residual=rel,
        iterations=inner_count[0],
        message=message,
    )


def _check_rtol(rtol: float) -> None:
    if not (0.0 < rtol < 1.0):
        raise InvalidInputError(f"rtol must be in (0, 1); got {rtol}")
