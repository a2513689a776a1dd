"""File I/O: CSV tables, JSON summaries and dataset files."""

from __future__ import annotations

import csv
import gzip
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .edmd import TrajectoryDataset
from .errors import InvalidInputError


DATASET_FORMAT = "koopgen-dataset"
DATASET_VERSION = 1


def format_float(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path: str | Path, rows: Sequence[Dict[str, object]], fieldnames: Sequence[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_json(path: str | Path, obj: object) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(obj, handle, ensure_ascii=True, indent=2, sort_keys=True)
        handle.write("\n")


def read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if str(path).endswith(".gz"):
        with gzip.open(path, "rt", encoding="utf-8") as handle:
            return json.load(handle)
    with path.open("r", encoding="utf-8") as handle:
        return json.load(handle)


def trajectory_fieldnames(n_o: int, n: int = 0, n_c: int = 0, with_error: bool = False) -> List[str]:
    names = ["t"] + [f"z_{i}" for i in range(1, n_o + 1)]
    names += [f"x_{i}" for i in range(1, n + 1)]
    names += [f"u_{i}" for i in range(1, n_c + 1)]
    if with_error:
        names.append("err")
    return names


def write_trajectory_csv(
    path: str | Path,
    t: Sequence[float],
    z: np.ndarray,
    x: Optional[np.ndarray] = None,
    u: Optional[np.ndarray] = None,
    err: Optional[Sequence[float]] = None,
) -> None:
    """One row per time point; ``u`` may have one row fewer than ``t``, leaving the last input cells blank."""
    z = np.atleast_2d(z)
    n_rows = len(t)
    if z.shape[0] != n_rows:
        raise InvalidInputError(f"z has {z.shape[0]} rows for {n_rows} time points")
    n = 0 if x is None else x.shape[1]
    n_c = 0 if u is None else np.atleast_2d(u).shape[1]
    fields = trajectory_fieldnames(z.shape[1], n, n_c, err is not None)
    rows = []
    for k in range(n_rows):
        row: Dict[str, object] = {"t": format_float(t[k])}
        for i, v in enumerate(z[k], start=1):
            row[f"z_{i}"] = format_float(v)
        if x is not None:
            for i, v in enumerate(x[k], start=1):
                row[f"x_{i}"] = format_float(v)
        if u is not None:
            uu = np.atleast_2d(u)
            for i in range(1, n_c + 1):
                row[f"u_{i}"] = format_float(uu[k, i - 1]) if k < uu.shape[0] else ""
        if err is not None:
            row["err"] = format_float(err[k])
        rows.append(row)
    write_csv(path, rows, fields)


def read_trajectory_csv(path: str | Path) -> Dict[str, np.ndarray]:
    """Columns of a trajectory CSV keyed by header; blank cells read as NaN."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise InvalidInputError(f"Trajectory CSV has no header: {path}")
        cols: Dict[str, List[float]] = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in reader.fieldnames:
                cell = row.get(name, "")
                cols[name].append(float(cell) if cell not in ("", None) else float("nan"))
    return {k: np.asarray(v) for k, v in cols.items()}


def _encode(arr: Optional[np.ndarray]) -> Optional[List[Any]]:
    return None if arr is None else np.asarray(arr).tolist()


def save_dataset(path: str | Path, data: TrajectoryDataset) -> None:
    bundle = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "fingerprint": data.fingerprint(),
        "x": _encode(data.x),
        "u": _encode(data.u),
        "xdot": _encode(data.xdot),
        "x_next": _encode(data.x_next),
        "dt": _encode(data.dt),
        "traj_id": _encode(data.traj_id),
        "step": _encode(data.step),
        "input_lo": _encode(data.input_lo),
        "input_hi": _encode(data.input_hi),
        "metadata": data.metadata,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if str(path).endswith(".gz"):
        with gzip.open(path, "wt", encoding="utf-8") as handle:
            json.dump(bundle, handle, ensure_ascii=True, sort_keys=True)
            handle.write("\n")
        return
    with path.open("w", encoding="utf-8") as handle:
        json.dump(bundle, handle, ensure_ascii=True, sort_keys=True)
        handle.write("\n")


def load_dataset(path: str | Path) -> TrajectoryDataset:
    bundle = read_json(path)
    if not isinstance(bundle, dict) or bundle.get("format") != DATASET_FORMAT:
        raise InvalidInputError(f"{path} is not a koopgen dataset file")
    if int(bundle.get("version", -1)) != DATASET_VERSION:
        raise InvalidInputError(f"{path} has unsupported dataset version {bundle.get('version')}")

    def arr(name: str, dtype: type = float) -> Optional[np.ndarray]:
        raw = bundle.get(name)
        return None if raw is None else np.asarray(raw, dtype=dtype)

    data = TrajectoryDataset(
        x=arr("x"),
        u=arr("u"),
        input_lo=arr("input_lo"),
        input_hi=arr("input_hi"),
        xdot=arr("xdot"),
        x_next=arr("x_next"),
        dt=arr("dt"),
        traj_id=arr("traj_id", int),
        step=arr("step", int),
        metadata=dict(bundle.get("metadata") or {}),
    )
    if bundle.get("fingerprint") not in (None, data.fingerprint()):
        raise InvalidInputError(f"{path} fingerprint does not match its contents")
    return data
