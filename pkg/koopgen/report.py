"""Reporting helpers."""

from __future__ import annotations

from typing import Any, Dict, List, Sequence

import numpy as np

from .io import format_float
from .ocp import ClosedLoopRecord


def closed_loop_fieldnames(n: int, n_tracked: int, n_c: int) -> List[str]:
    base = ["t"]
    base.extend(f"x_{i}" for i in range(1, n + 1))
    base.extend(f"z_{i}" for i in range(1, n_tracked + 1))
    base.extend(f"ref_{i}" for i in range(1, n_tracked + 1))
    base.extend(f"u_{i}" for i in range(1, n_c + 1))
    base.extend(["objective", "solve_ms", "converged"])
    return base


def validation_fieldnames() -> List[str]:
    return ["check", "passed", "value", "threshold", "detail"]


def closed_loop_rows(record: ClosedLoopRecord, timings: bool = True) -> List[Dict[str, object]]:
    """One row per sample; the final sample has no input, objective or timing.

    With ``timings=False`` the wall-clock column stays blank so reruns compare byte for byte.
    """
    rows: List[Dict[str, object]] = []
    for k, t in enumerate(record.t):
        row: Dict[str, object] = {"t": format_float(t)}
        for i, v in enumerate(record.x[k], start=1):
            row[f"x_{i}"] = format_float(v)
        for i, v in enumerate(record.tracked[k], start=1):
            row[f"z_{i}"] = format_float(v)
        for i, v in enumerate(np.atleast_1d(record.reference[k]), start=1):
            row[f"ref_{i}"] = format_float(v)
        if k < len(record.u):
            for i, v in enumerate(record.u[k], start=1):
                row[f"u_{i}"] = format_float(v)
            row["objective"] = format_float(record.objective[k])
            row["solve_ms"] = format_float(record.solve_ms[k]) if timings else ""
            row["converged"] = int(record.converged[k])
        rows.append(row)
    return rows


def validation_rows(entries: Sequence[Dict[str, Any]]) -> List[Dict[str, object]]:
    rows = []
    for e in entries:
        rows.append(
            {
                "check": e["check"],
                "passed": int(bool(e["passed"])),
                "value": "" if e.get("value") is None else format_float(e["value"]),
                "threshold": "" if e.get("threshold") is None else format_float(e["threshold"]),
                "detail": e.get("detail", ""),
            }
        )
    return rows
