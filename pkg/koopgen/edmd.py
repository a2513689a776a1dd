"""Data-matrix assembly and least-squares fitting of Koopman operators and generators."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import numerics
from .dictionary import DelayDictionary, Dictionary
from .errors import FitFailureError, InvalidInputError, RankDeficiencyWarning


DERIVATIVE_METHODS = ("chain_rule", "forward", "central", "central5")


@dataclass(frozen=True)
class FiniteDifferenceStencil:
    """Offsets k and weights c_k of (1/dt) sum_k c_k psi(x(t + k dt))."""

    name: str
    offsets: Tuple[int, ...]
    coeffs: Tuple[float, ...]


STENCILS: Dict[str, FiniteDifferenceStencil] = {
    "forward": FiniteDifferenceStencil("forward", (0, 1), (-1.0, 1.0)),
    "central": FiniteDifferenceStencil("central", (-1, 0, 1), (-0.5, 0.0, 0.5)),
    "central5": FiniteDifferenceStencil(
        "central5", (-2, -1, 0, 1, 2), (1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0)
    ),
}


@dataclass(frozen=True)
class TrajectoryDataset:
    """Samples (x_j, u_j, xdot_j) and/or (x_j, u_j, x_next_j), one row per sample.

    ``dt`` holds the hold interval of each snapshot pair (NaN without successor);
    ``traj_id`` and ``step`` locate samples along trajectories for finite
    differences and delay embedding.
    """

    x: np.ndarray
    u: np.ndarray
    input_lo: np.ndarray
    input_hi: np.ndarray
    xdot: Optional[np.ndarray] = None
    x_next: Optional[np.ndarray] = None
    dt: Optional[np.ndarray] = None
    traj_id: Optional[np.ndarray] = None
    step: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        m = x.shape[0]
        u = np.asarray(self.u, dtype=float).reshape(m, -1)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "input_lo", np.asarray(self.input_lo, dtype=float).ravel())
        object.__setattr__(self, "input_hi", np.asarray(self.input_hi, dtype=float).ravel())
        if m < 1:
            raise InvalidInputError("dataset must hold at least one sample")
        if self.xdot is None and self.x_next is None:
            raise InvalidInputError("every sample needs a derivative or a successor state")
        for name in ("xdot", "x_next"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val, dtype=float).reshape(m, x.shape[1])
                object.__setattr__(self, name, arr)
        if self.x_next is not None:
            dt = np.broadcast_to(np.asarray(self.dt if self.dt is not None else np.nan, dtype=float), (m,)).copy()
            if np.any(~np.isfinite(dt)) or np.any(dt <= 0.0):
                raise InvalidInputError("snapshot pairs need a positive finite hold interval dt")
            object.__setattr__(self, "dt", dt)
        else:
            object.__setattr__(self, "dt", None)
        traj = np.arange(m) if self.traj_id is None else np.asarray(self.traj_id, dtype=int).reshape(m)
        step = np.zeros(m, dtype=int) if self.step is None else np.asarray(self.step, dtype=int).reshape(m)
        object.__setattr__(self, "traj_id", traj)
        object.__setattr__(self, "step", step)
        if self.input_lo.shape != (self.n_c,) or self.input_hi.shape != (self.n_c,):
            raise InvalidInputError("input box dimension does not match the input samples")
        tol = 1e-12 * (1.0 + np.abs(self.input_hi - self.input_lo))
        if np.any(u < self.input_lo - tol) or np.any(u > self.input_hi + tol):
            raise InvalidInputError("dataset inputs must lie inside the declared input box")

    @property
    def m(self) -> int:
        return int(self.x.shape[0])

    @property
    def n(self) -> int:
        return int(self.x.shape[1])

    @property
    def n_c(self) -> int:
        return int(self.u.shape[1])

    @property
    def has_successors(self) -> bool:
        return self.x_next is not None

    @property
    def has_derivatives(self) -> bool:
        return self.xdot is not None

    def hold_dt(self) -> float:
        """The common hold interval of all snapshot pairs."""
        if self.dt is None:
            raise InvalidInputError("dataset holds no snapshot pairs")
        values = np.unique(self.dt)
        if values.size != 1 and not np.allclose(values, values[0], rtol=1e-12, atol=0.0):
            preview = ", ".join(repr(float(v)) for v in values[:6])
            raise InvalidInputError(f"snapshot pairs use mixed hold intervals: {preview}")
        return float(values[0])

    def subset(self, indices: Sequence[int]) -> "TrajectoryDataset":
        idx = np.asarray(indices, dtype=int)
        if idx.size == 0:
            raise InvalidInputError("subset would leave an empty dataset")
        return replace(
            self,
            x=self.x[idx],
            u=self.u[idx],
            xdot=None if self.xdot is None else self.xdot[idx],
            x_next=None if self.x_next is None else self.x_next[idx],
            dt=None if self.dt is None else self.dt[idx],
            traj_id=self.traj_id[idx],
            step=self.step[idx],
            metadata=dict(self.metadata),
        )

    def fingerprint(self) -> str:
        """SHA-256 over the sample arrays."""
        h = hashlib.sha256()
        for arr in (self.x, self.u, self.xdot, self.x_next, self.dt, self.traj_id, self.step):
            if arr is None:
                h.update(b"-")
                continue
            h.update(str(arr.shape).encode("ascii"))
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def concat_datasets(datasets: Sequence[TrajectoryDataset]) -> TrajectoryDataset:
    """Stack datasets; trajectory ids are shifted so they stay distinct."""
    if not datasets:
        raise InvalidInputError("nothing to concatenate")
    first = datasets[0]
    for d in datasets[1:]:
        if d.n != first.n or d.n_c != first.n_c:
            raise InvalidInputError("datasets differ in state or input dimension")
        if d.has_successors != first.has_successors or d.has_derivatives != first.has_derivatives:
            raise InvalidInputError("datasets differ in available columns")
    offsets = np.cumsum([0] + [int(d.traj_id.max()) + 1 for d in datasets[:-1]])
    return TrajectoryDataset(
        x=np.vstack([d.x for d in datasets]),
        u=np.vstack([d.u for d in datasets]),
        input_lo=np.min([d.input_lo for d in datasets], axis=0),
        input_hi=np.max([d.input_hi for d in datasets], axis=0),
        xdot=np.vstack([d.xdot for d in datasets]) if first.has_derivatives else None,
        x_next=np.vstack([d.x_next for d in datasets]) if first.has_successors else None,
        dt=np.concatenate([d.dt for d in datasets]) if first.has_successors else None,
        traj_id=np.concatenate([d.traj_id + off for d, off in zip(datasets, offsets)]),
        step=np.concatenate([d.step for d in datasets]),
        metadata=dict(first.metadata),
    )


@dataclass(frozen=True)
class FitInfo:
    """Diagnostics of one least-squares fit."""

    method: str
    n_samples: int
    rank: int
    full_rank: int
    sigma_max: float
    sigma_min_retained: float
    residual: float
    rtol: float
    derivative: Optional[str] = None
    dataset_fingerprint: Optional[str] = None

    def as_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "n_samples": self.n_samples,
            "rank": self.rank,
            "full_rank": self.full_rank,
            "sigma_max": self.sigma_max,
            "sigma_min_retained": self.sigma_min_retained,
            "residual": self.residual,
            "rtol": self.rtol,
            "derivative": self.derivative,
            "dataset_fingerprint": self.dataset_fingerprint,
        }


@dataclass(frozen=True)
class _BilinearModel:
    k0: np.ndarray
    b: Tuple[np.ndarray, ...]
    dictionary: Dict[str, Any]
    input_lo: np.ndarray
    input_hi: np.ndarray
    fit: Optional[FitInfo] = None

    def __post_init__(self) -> None:
        k0 = numerics.as_matrix(self.k0, "K0")
        if k0.shape[0] != k0.shape[1]:
            raise InvalidInputError(f"K0 must be square; got shape {k0.shape}")
        bs = tuple(numerics.as_matrix(bi, "B") for bi in self.b)
        for bi in bs:
            if bi.shape != k0.shape:
                raise InvalidInputError(f"input matrix shape {bi.shape} differs from K0 shape {k0.shape}")
        lo = np.asarray(self.input_lo, dtype=float).ravel()
        hi = np.asarray(self.input_hi, dtype=float).ravel()
        if lo.shape != (len(bs),) or hi.shape != (len(bs),):
            raise InvalidInputError("input box dimension must equal the number of input matrices")
        if np.any(hi < lo):
            raise InvalidInputError("input box must be nonempty")
        object.__setattr__(self, "k0", k0)
        object.__setattr__(self, "b", bs)
        object.__setattr__(self, "input_lo", lo)
        object.__setattr__(self, "input_hi", hi)

    @property
    def n_o(self) -> int:
        return int(self.k0.shape[0])

    @property
    def n_c(self) -> int:
        return len(self.b)

    def matrix_at(self, u: Sequence[float]) -> np.ndarray:
        """K0 + sum_i u_i B_i."""
        return numerics.bilinear_generator(self.k0, self.b, u)


@dataclass(frozen=True)
class GeneratorModel(_BilinearModel):
    """Continuous bilinear model z' = (K0 + sum u_i B_i) z."""


@dataclass(frozen=True)
class OperatorModel(_BilinearModel):
    """Discrete bilinear model z_{k+1} = (K0dt + sum u_i Bdt_i) z_k over hold dt."""

    dt: float = 0.0

    def __post_init__(self) -> None:
        super().__post_init__()
        if not self.dt > 0.0:
            raise InvalidInputError(f"operator model needs dt > 0; got {self.dt}")


@dataclass(frozen=True)
class LiftedData:
    psi_xu: np.ndarray
    psi_next: Optional[np.ndarray]
    psi_dot: Optional[np.ndarray]
    columns: np.ndarray


@dataclass(frozen=True)
class DerivativeEstimate:
    psi_dot: np.ndarray
    columns: np.ndarray


def lift_inputs(psi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Columns [psi(x_j); u_j kron psi(x_j)] from psi (n_o, m) and u (m, n_c)."""
    blocks = [psi]
    for i in range(u.shape[1]):
        blocks.append(psi * u[:, i][None, :])
    return np.vstack(blocks)


def _check_dictionary(dictionary: Dictionary, data: TrajectoryDataset) -> None:
    if dictionary.n != data.n:
        raise InvalidInputError(
            f"dictionary input dimension {dictionary.n} does not match dataset state dimension {data.n}"
        )


def estimate_observable_derivatives(
    dictionary: Dictionary,
    data: TrajectoryDataset,
    method: str = "chain_rule",
    drop_incomplete: bool = False,
) -> DerivativeEstimate:
    """Estimate d/dt psi(x_j) by the chain rule or a finite-difference stencil."""
    _check_dictionary(dictionary, data)
    if method == "chain_rule":
        if data.xdot is None:
            raise InvalidInputError("chain-rule derivatives need state derivatives in the dataset")
        cols = np.empty((dictionary.n_o, data.m))
        for j in range(data.m):
            cols[:, j] = dictionary.jacobian(data.x[j]) @ data.xdot[j]
        return DerivativeEstimate(psi_dot=cols, columns=np.arange(data.m))

    stencil = STENCILS.get(method)
    if stencil is None:
        raise InvalidInputError(
            f"Unknown derivative method '{method}'; expected one of {', '.join(DERIVATIVE_METHODS)}"
        )
    if data.x_next is None:
        raise InvalidInputError(f"{method} differences need successor states in the dataset")

    psi_x = dictionary.eval_batch(data.x)
    psi_next = dictionary.eval_batch(data.x_next)
    index = {(int(t), int(s)): j for j, (t, s) in enumerate(zip(data.traj_id, data.step))}

    kept: List[int] = []
    out: List[np.ndarray] = []
    for j in range(data.m):
        acc = np.zeros(dictionary.n_o)
        missing = None
        for off, c in zip(stencil.offsets, stencil.coeffs):
            if c == 0.0:
                continue
            col = _neighbour_column(data, index, psi_x, psi_next, j, off)
            if col is None:
                missing = off
                break
            acc += c * col
        if missing is not None:
            if drop_incomplete:
                continue
            raise InvalidInputError(
                f"sample {j} (trajectory {int(data.traj_id[j])}, step {int(data.step[j])}) has no "
                f"neighbour at offset {missing:+d} under a constant input for the {method} stencil"
            )
        kept.append(j)
        out.append(acc / data.dt[j])
    if not kept:
        raise InvalidInputError(f"no sample has the neighbours required by the {method} stencil")
    return DerivativeEstimate(psi_dot=np.column_stack(out), columns=np.asarray(kept, dtype=int))


def _neighbour_column(
    data: TrajectoryDataset,
    index: Mapping[Tuple[int, int], int],
    psi_x: np.ndarray,
    psi_next: np.ndarray,
    j: int,
    offset: int,
) -> Optional[np.ndarray]:
    if offset == 0:
        return psi_x[:, j]
    if offset == 1:
        return psi_next[:, j]
    traj = int(data.traj_id[j])
    base = int(data.step[j])
    # walk along the trajectory; every sample on the way must share u_j
    if offset > 1:
        k = index.get((traj, base + offset - 1))
        if k is None or not _same_input(data, j, k) or not _chain_held(data, index, j, traj, base, offset - 1):
            return None
        return psi_next[:, k]
    k = index.get((traj, base + offset))
    if k is None or not _chain_held(data, index, j, traj, base + offset, -offset):
        return None
    return psi_x[:, k]


def _same_input(data: TrajectoryDataset, j: int, k: int) -> bool:
    return bool(np.array_equal(data.u[j], data.u[k])) and data.dt[j] == data.dt[k]


def _chain_held(
    data: TrajectoryDataset,
    index: Mapping[Tuple[int, int], int],
    j: int,
    traj: int,
    start: int,
    length: int,
) -> bool:
    for s in range(start, start + length + 1):
        k = index.get((traj, s))
        if k is None or not _same_input(data, j, k):
            return False
    return True


def assemble_lifted(
    dictionary: Dictionary,
    data: TrajectoryDataset,
    derivative: Optional[str] = None,
    drop_incomplete: bool = False,
) -> LiftedData:
    """Build Psi_{X,U}, Psi_{X~,U} (when successors exist) and Psi_dot (when requested)."""
    _check_dictionary(dictionary, data)
    columns = np.arange(data.m)
    psi_dot = None
    if derivative is not None:
        est = estimate_observable_derivatives(dictionary, data, derivative, drop_incomplete=drop_incomplete)
        psi_dot = est.psi_dot
        columns = est.columns
    psi_x = dictionary.eval_batch(data.x[columns])
    psi_xu = lift_inputs(psi_x, data.u[columns])
    psi_next = dictionary.eval_batch(data.x_next[columns]) if data.x_next is not None else None
    return LiftedData(psi_xu=psi_xu, psi_next=psi_next, psi_dot=psi_dot, columns=columns)


def _regress(
    target: np.ndarray,
    regressor: np.ndarray,
    n_o: int,
    rtol: float,
    method: str,
) -> Tuple[np.ndarray, numerics.SvdFactorization, float]:
    fac = numerics.svd(regressor, rtol)
    full = regressor.shape[0]
    rank = fac.rank
    if rank < n_o:
        raise FitFailureError(
            f"{method} fit failed: numerical rank {rank} of the lifted data is below the dictionary size {n_o}",
            {"rank": rank, "full_rank": full, "n_samples": regressor.shape[1], "sigma_max": fac.sigma_max},
        )
    if rank < full:
        warnings.warn(
            f"{method} fit: lifted data has numerical rank {rank} < {full} rows "
            f"({regressor.shape[1]} samples); using the truncated pseudoinverse",
            RankDeficiencyWarning,
            stacklevel=3,
        )
    m = target @ fac.pinv()
    residual = float(np.sum((target - m @ regressor) ** 2))
    return m, fac, residual


def _split_blocks(m: np.ndarray, n_o: int, n_c: int) -> Tuple[np.ndarray, Tuple[np.ndarray, ...]]:
    k0 = m[:, :n_o].copy()
    b = tuple(m[:, n_o * (i + 1) : n_o * (i + 2)].copy() for i in range(n_c))
    return k0, b


def _fit_info(
    method: str,
    fac: numerics.SvdFactorization,
    residual: float,
    n_samples: int,
    full: int,
    rtol: float,
    derivative: Optional[str],
    data: TrajectoryDataset,
) -> FitInfo:
    r = fac.rank
    return FitInfo(
        method=method,
        n_samples=n_samples,
        rank=r,
        full_rank=full,
        sigma_max=fac.sigma_max,
        sigma_min_retained=float(fac.s[r - 1]) if r else 0.0,
        residual=residual,
        rtol=rtol,
        derivative=derivative,
        dataset_fingerprint=data.fingerprint(),
    )


def fit_generator(
    dictionary: Dictionary,
    data: TrajectoryDataset,
    method: str = "chain_rule",
    rtol: float = numerics.DEFAULT_PINV_RTOL,
    drop_incomplete: bool = False,
) -> GeneratorModel:
    """[K0 B_1 .. B_nc] = Psi_dot (Psi_{X,U})^+."""
    lifted = assemble_lifted(dictionary, data, derivative=method, drop_incomplete=drop_incomplete)
    n_o = dictionary.n_o
    m, fac, residual = _regress(lifted.psi_dot, lifted.psi_xu, n_o, rtol, "generator")
    k0, b = _split_blocks(m, n_o, data.n_c)
    return GeneratorModel(
        k0=k0,
        b=b,
        dictionary=dictionary.descriptor(),
        input_lo=data.input_lo,
        input_hi=data.input_hi,
        fit=_fit_info("generator", fac, residual, lifted.columns.size, lifted.psi_xu.shape[0], rtol, method, data),
    )


def fit_operators(
    dictionary: Dictionary,
    data: TrajectoryDataset,
    rtol: float = numerics.DEFAULT_PINV_RTOL,
) -> OperatorModel:
    """[K0dt B1dt .. Bncdt] = Psi_{X~,U} (Psi_{X,U})^+."""
    if not data.has_successors:
        raise InvalidInputError("operator fitting needs snapshot pairs")
    dt = data.hold_dt()
    lifted = assemble_lifted(dictionary, data)
    n_o = dictionary.n_o
    m, fac, residual = _regress(lifted.psi_next, lifted.psi_xu, n_o, rtol, "operator")
    k0, b = _split_blocks(m, n_o, data.n_c)
    return OperatorModel(
        k0=k0,
        b=b,
        dictionary=dictionary.descriptor(),
        input_lo=data.input_lo,
        input_hi=data.input_hi,
        dt=dt,
        fit=_fit_info("operators", fac, residual, data.m, lifted.psi_xu.shape[0], rtol, None, data),
    )


def _level_key(level: object) -> Tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(level, dtype=float)))


def fit_switched_family(
    dictionary: Dictionary,
    datasets: Mapping[object, TrajectoryDataset],
    rtol: float = numerics.DEFAULT_PINV_RTOL,
    target: str = "operator",
    derivative: str = "chain_rule",
) -> Tuple[Dict[Tuple[float, ...], np.ndarray], Optional[GeneratorModel | OperatorModel]]:
    """Fit one autonomous model per fixed input level and derive a bilinear model.

    With symmetric levels +-ubar_j e_j for every channel j the derived model has
    K0 = mean_j (K_+ + K_-)/2 and B_j = (K_+ - K_-)/(2 ubar_j). Returns ``None`` for
    the derived model when the levels are not symmetric pairs.
    """
    if target not in ("operator", "generator"):
        raise InvalidInputError(f"Unknown switched-family target '{target}'")
    if not datasets:
        raise InvalidInputError("switched family needs at least one input level")

    per_level: Dict[Tuple[float, ...], np.ndarray] = {}
    dts: List[float] = []
    n_c = None
    box_lo = None
    box_hi = None
    for level, data in datasets.items():
        key = _level_key(level)
        if n_c is None:
            n_c = len(key)
            box_lo, box_hi = data.input_lo, data.input_hi
        if len(key) != n_c or data.n_c != n_c:
            raise InvalidInputError("all input levels must have the same dimension")
        if not np.allclose(data.u, np.asarray(key)[None, :], rtol=0.0, atol=1e-12):
            raise InvalidInputError(f"dataset for level {key} contains other input values")
        _check_dictionary(dictionary, data)
        psi_x = dictionary.eval_batch(data.x)
        if target == "operator":
            if not data.has_successors:
                raise InvalidInputError(f"dataset for level {key} holds no snapshot pairs")
            dts.append(data.hold_dt())
            tgt = dictionary.eval_batch(data.x_next)
        else:
            tgt = estimate_observable_derivatives(dictionary, data, derivative).psi_dot
        if tgt.shape[0] != dictionary.n_o or psi_x.shape[0] != dictionary.n_o:
            raise InvalidInputError("inconsistent dictionary dimensions across levels")
        mat, _, _ = _regress(tgt, psi_x, dictionary.n_o, rtol, f"level {key}")
        per_level[key] = mat
        box_lo = np.minimum(box_lo, data.input_lo)
        box_hi = np.maximum(box_hi, data.input_hi)

    if target == "operator" and not np.allclose(dts, dts[0], rtol=1e-12, atol=0.0):
        raise InvalidInputError("all levels must share the same hold interval")

    derived = _derive_symmetric(per_level, n_c or 0, dictionary.n_o)
    if derived is None:
        return per_level, None
    k0, b = derived
    if target == "operator":
        model: GeneratorModel | OperatorModel = OperatorModel(
            k0=k0, b=b, dictionary=dictionary.descriptor(), input_lo=box_lo, input_hi=box_hi, dt=dts[0]
        )
    else:
        model = GeneratorModel(k0=k0, b=b, dictionary=dictionary.descriptor(), input_lo=box_lo, input_hi=box_hi)
    return per_level, model


def _derive_symmetric(
    per_level: Mapping[Tuple[float, ...], np.ndarray],
    n_c: int,
    n_o: int,
) -> Optional[Tuple[np.ndarray, Tuple[np.ndarray, ...]]]:
    k0_parts: List[np.ndarray] = []
    b: List[np.ndarray] = []
    for j in range(n_c):
        plus = minus = None
        amp = 0.0
        for key, mat in per_level.items():
            others = [v for i, v in enumerate(key) if i != j]
            if any(v != 0.0 for v in others) or key[j] == 0.0:
                continue
            mirror = list(key)
            mirror[j] = -key[j]
            if tuple(mirror) in per_level and key[j] > 0.0:
                plus, minus, amp = mat, per_level[tuple(mirror)], key[j]
                break
        if plus is None or minus is None:
            return None
        k0_parts.append(0.5 * (plus + minus))
        b.append((plus - minus) / (2.0 * amp))
    if not k0_parts:
        return None
    return np.mean(k0_parts, axis=0), tuple(b)


def delay_embed_dataset(data: TrajectoryDataset, depth: int) -> TrajectoryDataset:
    """Stack the last ``depth`` observations (newest first) along each trajectory.

    Samples without ``depth - 1`` predecessors are dropped. Successors are stacked the
    same way so the result can be fitted with a delay dictionary.
    """
    if depth < 1:
        raise InvalidInputError("delay depth must be >= 1")
    if not data.has_successors:
        raise InvalidInputError("delay embedding needs trajectory snapshot pairs")
    index = {(int(t), int(s)): j for j, (t, s) in enumerate(zip(data.traj_id, data.step))}
    rows_x: List[np.ndarray] = []
    rows_next: List[np.ndarray] = []
    keep: List[int] = []
    for j in range(data.m):
        traj, s = int(data.traj_id[j]), int(data.step[j])
        hist = []
        for back in range(depth):
            k = index.get((traj, s - back))
            if k is None:
                break
            hist.append(k)
        if len(hist) < depth:
            continue
        rows_x.append(np.concatenate([data.x[k] for k in hist]))
        rows_next.append(np.concatenate([data.x_next[j]] + [data.x[k] for k in hist[:-1]]))
        keep.append(j)
    if not keep:
        raise InvalidInputError(f"no trajectory is long enough for delay depth {depth}")
    idx = np.asarray(keep, dtype=int)
    meta = dict(data.metadata)
    meta["delay_depth"] = depth
    return TrajectoryDataset(
        x=np.vstack(rows_x),
        u=data.u[idx],
        input_lo=data.input_lo,
        input_hi=data.input_hi,
        x_next=np.vstack(rows_next),
        dt=data.dt[idx],
        traj_id=data.traj_id[idx],
        step=data.step[idx],
        metadata=meta,
    )


def lifted_dimension(dictionary: Dictionary, n_c: int) -> int:
    return dictionary.n_o * (1 + n_c)


def is_delay(dictionary: Dictionary) -> bool:
    return isinstance(dictionary, DelayDictionary)
