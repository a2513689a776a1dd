"""Companion plot scripts for the CSV outputs.

koopgen itself never imports matplotlib; the emitted scripts do, and need the
``plots`` extra.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List


PLOT_KINDS = ("prediction", "closed_loop")

_HEADER = '''"""Plot {csv_name} (written by koopgen {version})."""

import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
CSV_PATH = HERE / "{csv_name}"
OUT_PATH = HERE / "{pdf_name}"


def read_columns(path):
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        cols = {{name: [] for name in reader.fieldnames}}
        for row in reader:
            for name in reader.fieldnames:
                cell = row[name]
                cols[name].append(float(cell) if cell else float("nan"))
    return cols


cols = read_columns(CSV_PATH)
t = cols["t"]
'''

_PREDICTION_BODY = '''
z_names = [c for c in cols if c.startswith("z_")]
x_names = [c for c in cols if c.startswith("x_")]
has_err = "err" in cols
fig, axes = plt.subplots(2 if has_err else 1, 1, figsize=(7, 6 if has_err else 4), squeeze=False)
ax = axes[0][0]
for name in z_names[:6]:
    ax.plot(t, cols[name], label=name)
for name in x_names[:6]:
    ax.plot(t, cols[name], linestyle="--", label=name)
ax.set_xlabel("t")
ax.legend(loc="best", fontsize="small")
ax.set_title("surrogate prediction")
if has_err:
    axes[1][0].semilogy(t, [max(e, 1e-16) for e in cols["err"]], color="black")
    axes[1][0].set_xlabel("t")
    axes[1][0].set_ylabel("error")
'''

_CLOSED_LOOP_BODY = '''
z_names = [c for c in cols if c.startswith("z_")]
u_names = [c for c in cols if c.startswith("u_")]
fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
for name in z_names:
    ref = "ref_" + name[2:]
    line, = axes[0].plot(t, cols[name], label=name)
    axes[0].plot(t, cols[ref], linestyle="--", color=line.get_color())
axes[0].set_ylabel("tracked")
axes[0].legend(loc="best", fontsize="small")
for name in u_names:
    axes[1].step(t, cols[name], where="post", label=name)
axes[1].set_xlabel("t")
axes[1].set_ylabel("input")
'''

_FOOTER = '''
fig.tight_layout()
fig.savefig(OUT_PATH)
if "--show" in sys.argv:
    plt.show()
'''


def write_plot_script(csv_path: str | Path, kind: str, version: str = "") -> Path:
    """Write ``<csv stem>.plot.py`` next to ``csv_path`` and return its path."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"Unknown plot kind '{kind}'. Valid values: {', '.join(PLOT_KINDS)}")
    csv_path = Path(csv_path)
    body = _PREDICTION_BODY if kind == "prediction" else _CLOSED_LOOP_BODY
    text = _HEADER.format(csv_name=csv_path.name, pdf_name=csv_path.stem + ".pdf", version=version) + body + _FOOTER
    out = csv_path.with_name(csv_path.stem + ".plot.py")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    return out


def write_plot_scripts(csv_paths: Dict[str, str | Path], version: str = "") -> Dict[str, object]:
    """Scripts for several outputs keyed by plot kind; unknown kinds become warnings."""
    outputs: Dict[str, object] = {"plot_scripts": [], "plot_warnings": []}
    scripts: List[str] = outputs["plot_scripts"]  # type: ignore[assignment]
    warns: List[str] = outputs["plot_warnings"]  # type: ignore[assignment]
    for kind, path in csv_paths.items():
        if not Path(path).exists():
            warns.append(f"{path} does not exist; skipped {kind} plot script")
            continue
        try:
            scripts.append(str(write_plot_script(path, kind, version)))
        except ValueError as exc:
            warns.append(str(exc))
    return outputs
