"""Observable dictionaries with batch evaluation and analytic Jacobians."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from .errors import InvalidInputError, UnsupportedOperationError


MAX_HALTON_DIM = 32
RBF_KERNELS = ("gaussian", "inverse_quadratic", "multiquadric")


class Dictionary:
    """Observable map psi: R^n -> R^n_o.

    Subclasses implement ``_eval_batch`` (columns are states) and, when
    differentiable, ``_jacobian``.
    """

    kind: str = ""

    @property
    def n(self) -> int:
        raise NotImplementedError

    @property
    def n_o(self) -> int:
        raise NotImplementedError

    def eval(self, x: Sequence[float]) -> np.ndarray:
        xv = self._check_state(x)
        return self._eval_batch(xv[:, None])[:, 0]

    def eval_batch(self, states: object) -> np.ndarray:
        """Evaluate on a batch; ``states`` is a sequence of state vectors (rows)."""
        arr = np.asarray(states, dtype=float)
        if arr.size == 0:
            raise InvalidInputError("eval_batch requires at least one state")
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.n:
            raise InvalidInputError(f"states must have dimension {self.n}; got array of shape {arr.shape}")
        out = self._eval_batch(arr.T)
        if not np.all(np.isfinite(out)):
            raise InvalidInputError("dictionary evaluation produced non-finite values")
        return out

    def jacobian(self, x: Sequence[float]) -> np.ndarray:
        return self._jacobian(self._check_state(x))

    def state_estimate(self, z: Sequence[float]) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.kind} dictionary cannot recover the state from lifted coordinates")

    def descriptor(self) -> Dict[str, Any]:
        raise NotImplementedError

    def _eval_batch(self, xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _jacobian(self, x: np.ndarray) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.kind} dictionary has no analytic Jacobian")

    def _check_state(self, x: Sequence[float]) -> np.ndarray:
        xv = np.asarray(x, dtype=float).ravel()
        if xv.shape[0] != self.n:
            raise InvalidInputError(f"state must have dimension {self.n}; got {xv.shape[0]}")
        return xv

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Dictionary) and self.descriptor() == other.descriptor()

    def __hash__(self) -> int:
        return hash(repr(self.descriptor()))


class IdentityDictionary(Dictionary):
    """psi(x) = x; EDMD with this dictionary is plain DMD."""

    kind = "identity"

    def __init__(self, n: int) -> None:
        if n < 1:
            raise InvalidInputError("identity dictionary needs n >= 1")
        self._n = int(n)

    @property
    def n(self) -> int:
        return self._n

    @property
    def n_o(self) -> int:
        return self._n

    def _eval_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.array(xs, dtype=float, copy=True)

    def _jacobian(self, x: np.ndarray) -> np.ndarray:
        return np.eye(self._n)

    def state_estimate(self, z: Sequence[float]) -> np.ndarray:
        return np.asarray(z, dtype=float)[: self._n].copy()

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind, "n": self._n}


def monomial_exponents(n: int, degree: int) -> np.ndarray:
    """Exponent table in graded lexicographic order, constant term first."""
    rows: List[List[int]] = []
    for total in range(degree + 1):
        for combo in combinations_with_replacement(range(n), total):
            e = [0] * n
            for var in combo:
                e[var] += 1
            rows.append(e)
    return np.asarray(rows, dtype=int).reshape(len(rows), n)


class MonomialDictionary(Dictionary):
    """All monomials in n variables up to total degree d (C(n+d, d) of them)."""

    kind = "monomial"

    def __init__(self, n: int, degree: int) -> None:
        if n < 1 or degree < 0:
            raise InvalidInputError("monomial dictionary needs n >= 1 and degree >= 0")
        self._n = int(n)
        self.degree = int(degree)
        self.exponents = monomial_exponents(self._n, self.degree)

    @property
    def n(self) -> int:
        return self._n

    @property
    def n_o(self) -> int:
        return int(self.exponents.shape[0])

    def _eval_batch(self, xs: np.ndarray) -> np.ndarray:
        # xs: (n, m) -> (n_o, m)
        out = np.ones((self.n_o, xs.shape[1]))
        for var in range(self._n):
            powers = self.exponents[:, var]
            if np.any(powers):
                out *= xs[var][None, :] ** powers[:, None]
        return out

    def _jacobian(self, x: np.ndarray) -> np.ndarray:
        jac = np.zeros((self.n_o, self._n))
        for j in range(self._n):
            coeff = self.exponents[:, j].astype(float)
            reduced = self.exponents.copy()
            reduced[:, j] = np.maximum(reduced[:, j] - 1, 0)
            jac[:, j] = coeff * np.prod(x[None, :] ** reduced, axis=1)
        return jac

    def linear_indices(self) -> List[int]:
        """Rows holding x_1..x_n (degree >= 1 required)."""
        if self.degree < 1:
            raise UnsupportedOperationError("degree-0 monomial dictionary has no linear terms")
        return list(range(1, self._n + 1))

    def state_estimate(self, z: Sequence[float]) -> np.ndarray:
        return np.asarray(z, dtype=float)[self.linear_indices()].copy()

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind, "n": self._n, "degree": self.degree}


class FourierDictionary(Dictionary):
    """cos(k x_i), sin(k x_i) for k = 1..K per coordinate, optional constant first."""

    kind = "fourier"

    def __init__(self, n: int, max_frequency: int = 1, include_constant: bool = False) -> None:
        if n < 1 or max_frequency < 1:
            raise InvalidInputError("fourier dictionary needs n >= 1 and max_frequency >= 1")
        self._n = int(n)
        self.max_frequency = int(max_frequency)
        self.include_constant = bool(include_constant)

    @property
    def n(self) -> int:
        return self._n

    @property
    def n_o(self) -> int:
        return 2 * self._n * self.max_frequency + (1 if self.include_constant else 0)

    def _rows(self) -> List[Tuple[int, int, str]]:
        rows: List[Tuple[int, int, str]] = []
        for var in range(self._n):
            for k in range(1, self.max_frequency + 1):
                rows.append((var, k, "cos"))
                rows.append((var, k, "sin"))
        return rows

    def _eval_batch(self, xs: np.ndarray) -> np.ndarray:
        parts = [np.ones((1, xs.shape[1]))] if self.include_constant else []
        for var, k, fn in self._rows():
            arg = k * xs[var]
            parts.append((np.cos(arg) if fn == "cos" else np.sin(arg))[None, :])
        return np.vstack(parts)

    def _jacobian(self, x: np.ndarray) -> np.ndarray:
        jac = np.zeros((self.n_o, self._n))
        offset = 1 if self.include_constant else 0
        for row, (var, k, fn) in enumerate(self._rows(), start=offset):
            arg = k * x[var]
            jac[row, var] = -k * np.sin(arg) if fn == "cos" else k * np.cos(arg)
        return jac

    def state_estimate(self, z: Sequence[float]) -> np.ndarray:
        zv = np.asarray(z, dtype=float)
        offset = 1 if self.include_constant else 0
        step = 2 * self.max_frequency
        out = np.empty(self._n)
        for var in range(self._n):
            c = zv[offset + var * step]
            s = zv[offset + var * step + 1]
            out[var] = np.mod(np.arctan2(s, c), 2.0 * np.pi)
        return out

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "n": self._n,
            "max_frequency": self.max_frequency,
            "include_constant": self.include_constant,
        }


class RbfDictionary(Dictionary):
    """Radial basis functions around fixed centers, optional constant first."""

    kind = "rbf"

    def __init__(
        self,
        centers: object,
        shape: float,
        kernel: str = "gaussian",
        include_constant: bool = False,
    ) -> None:
        c = np.asarray(centers, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1:
            raise InvalidInputError("rbf centers must be a non-empty list of vectors")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("rbf centers must be finite")
        if not shape > 0.0:
            raise InvalidInputError("rbf shape parameter must be > 0")
        if kernel not in RBF_KERNELS:
            raise InvalidInputError(f"Unknown rbf kernel '{kernel}'; expected one of {', '.join(RBF_KERNELS)}")
        self.centers = c
        self.shape = float(shape)
        self.kernel = kernel
        self.include_constant = bool(include_constant)

    @property
    def n(self) -> int:
        return int(self.centers.shape[1])

    @property
    def n_o(self) -> int:
        return int(self.centers.shape[0]) + (1 if self.include_constant else 0)

    def _phi(self, r2: np.ndarray) -> np.ndarray:
        s2 = self.shape * self.shape
        if self.kernel == "gaussian":
            return np.exp(-r2 / (2.0 * s2))
        if self.kernel == "inverse_quadratic":
            return 1.0 / (1.0 + r2 / s2)
        return np.sqrt(1.0 + r2 / s2)

    def _dphi_dr2(self, r2: np.ndarray) -> np.ndarray:
        s2 = self.shape * self.shape
        if self.kernel == "gaussian":
            return -np.exp(-r2 / (2.0 * s2)) / (2.0 * s2)
        if self.kernel == "inverse_quadratic":
            return -1.0 / (s2 * (1.0 + r2 / s2) ** 2)
        return 0.5 / (s2 * np.sqrt(1.0 + r2 / s2))

    def _eval_batch(self, xs: np.ndarray) -> np.ndarray:
        diff = xs.T[None, :, :] - self.centers[:, None, :]
        vals = self._phi(np.sum(diff * diff, axis=2))
        if self.include_constant:
            vals = np.vstack([np.ones((1, xs.shape[1])), vals])
        return vals

    def _jacobian(self, x: np.ndarray) -> np.ndarray:
        diff = x[None, :] - self.centers
        r2 = np.sum(diff * diff, axis=1)
        jac = 2.0 * self._dphi_dr2(r2)[:, None] * diff
        if self.include_constant:
            jac = np.vstack([np.zeros((1, self.n)), jac])
        return jac

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "centers": self.centers.tolist(),
            "shape": self.shape,
            "rbf_kernel": self.kernel,
            "include_constant": self.include_constant,
        }


class ConcatDictionary(Dictionary):
    """Stacks several dictionaries over the same state (e.g. identity + RBFs)."""

    kind = "concat"

    def __init__(self, parts: Sequence[Dictionary]) -> None:
        if not parts:
            raise InvalidInputError("concat dictionary needs at least one part")
        n = parts[0].n
        if any(p.n != n for p in parts):
            raise InvalidInputError("all concatenated dictionaries must share the input dimension")
        self.parts = list(parts)

    @property
    def n(self) -> int:
        return self.parts[0].n

    @property
    def n_o(self) -> int:
        return sum(p.n_o for p in self.parts)

    def _eval_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.vstack([p._eval_batch(xs) for p in self.parts])

    def _jacobian(self, x: np.ndarray) -> np.ndarray:
        return np.vstack([p._jacobian(x) for p in self.parts])

    def state_estimate(self, z: Sequence[float]) -> np.ndarray:
        head = self.parts[0]
        return head.state_estimate(np.asarray(z, dtype=float)[: head.n_o])

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind, "parts": [p.descriptor() for p in self.parts]}


class DelayDictionary(Dictionary):
    """Base dictionary applied to q stacked raw observations, newest first."""

    kind = "delay"

    def __init__(self, base: Dictionary, depth: int) -> None:
        if depth < 1:
            raise InvalidInputError("delay depth must be >= 1")
        if base.n % depth != 0:
            raise InvalidInputError(
                f"base dictionary input dimension {base.n} is not a multiple of delay depth {depth}"
            )
        self.base = base
        self.depth = int(depth)

    @property
    def raw_dim(self) -> int:
        return self.base.n // self.depth

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def n_o(self) -> int:
        return self.base.n_o

    def _eval_batch(self, xs: np.ndarray) -> np.ndarray:
        return self.base._eval_batch(xs)

    def jacobian(self, x: Sequence[float]) -> np.ndarray:
        raise UnsupportedOperationError("delay-embedded dictionaries act on a discrete stream and have no Jacobian")

    def buffer(self) -> "DelayBuffer":
        return DelayBuffer(depth=self.depth, raw_dim=self.raw_dim)

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": self.kind, "depth": self.depth, "base": self.base.descriptor()}


@dataclass
class DelayBuffer:
    """Ring of the last q raw observations; single owner."""

    depth: int
    raw_dim: int
    _ring: Deque[np.ndarray] = field(default_factory=deque, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.depth < 1 or self.raw_dim < 1:
            raise InvalidInputError("delay buffer needs depth >= 1 and raw_dim >= 1")
        self._ring = deque(maxlen=self.depth)

    @property
    def ready(self) -> bool:
        return len(self._ring) == self.depth

    def push(self, obs: Sequence[float]) -> Optional[np.ndarray]:
        """Add an observation; return the stacked vector once q are held."""
        o = np.asarray(obs, dtype=float).ravel()
        if o.shape[0] != self.raw_dim:
            raise InvalidInputError(f"observation must have dimension {self.raw_dim}; got {o.shape[0]}")
        self._ring.appendleft(o.copy())
        return self.stacked() if self.ready else None

    def stacked(self) -> np.ndarray:
        if not self.ready:
            raise InvalidInputError(f"delay buffer holds {len(self._ring)} of {self.depth} observations")
        return np.concatenate(list(self._ring))

    def clear(self) -> None:
        self._ring.clear()


def halton_rbf_centers(dim: int, k: int, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
    """First k unscrambled Halton points (the origin skipped) mapped into the box."""
    if dim < 1 or dim > MAX_HALTON_DIM:
        raise InvalidInputError(f"halton dimension must be in [1, {MAX_HALTON_DIM}]; got {dim}")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    lo_a = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
    hi_a = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
    if not (np.all(np.isfinite(lo_a)) and np.all(np.isfinite(hi_a))) or np.any(hi_a <= lo_a):
        raise InvalidInputError("halton bounds must be finite with hi > lo")
    sampler = qmc.Halton(d=dim, scramble=False)
    sampler.fast_forward(1)
    unit = sampler.random(k)
    return lo_a + unit * (hi_a - lo_a)


def dictionary_from_descriptor(desc: Dict[str, Any]) -> Dictionary:
    kind = desc.get("kind")
    if kind == "identity":
        return IdentityDictionary(int(desc["n"]))
    if kind == "monomial":
        return MonomialDictionary(int(desc["n"]), int(desc["degree"]))
    if kind == "fourier":
        return FourierDictionary(
            int(desc["n"]),
            int(desc.get("max_frequency", 1)),
            bool(desc.get("include_constant", False)),
        )
    if kind == "rbf":
        return RbfDictionary(
            desc["centers"],
            float(desc["shape"]),
            str(desc.get("rbf_kernel", "gaussian")),
            bool(desc.get("include_constant", False)),
        )
    if kind == "concat":
        return ConcatDictionary([dictionary_from_descriptor(p) for p in desc["parts"]])
    if kind == "delay":
        return DelayDictionary(dictionary_from_descriptor(desc["base"]), int(desc["depth"]))
    raise InvalidInputError(f"Unknown dictionary kind '{kind}'")
