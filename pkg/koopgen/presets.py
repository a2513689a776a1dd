"""Bundled example configurations written out by ``koopgen get-config``."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List

from .config import parse_config
from .io import write_json


PRESETS: Dict[str, Dict[str, Any]] = {
    "duffing_prediction": {
        "seed": 1,
        "plant": {"kind": "duffing", "delta": 0.5, "alpha": -1.0, "beta": 1.0},
        "dictionary": {"kind": "monomial", "degree": 5},
        "sampling": {
            "mode": "scattered",
            "n_initial": 100,
            "state_lo": [-2.0, -2.0],
            "state_hi": [2.0, 2.0],
            "input_levels": [[-1.0], [1.0]],
            "derivatives": True,
        },
        "fit": {"method": "generator", "derivative": "chain_rule"},
        "predict": {
            "x0": [0.5, 0.0],
            "n_steps": 20,
            "dt": 0.1,
            "scheme": "exact",
            "input": {"kind": "sine", "amplitude": 1.0, "frequency": 3.141592653589793},
        },
        "output": {"out_dir": "duffing_prediction_out"},
    },
    "duffing_mpc": {
        "seed": 2,
        "plant": {"kind": "duffing"},
        "dictionary": {"kind": "monomial", "degree": 5},
        "sampling": {
            "mode": "scattered",
            "n_initial": 100,
            "state_lo": [-2.0, -2.0],
            "state_hi": [2.0, 2.0],
            "input_levels": [[-1.0], [1.0]],
            "derivatives": True,
        },
        "fit": {"method": "generator"},
        "mpc": {
            "horizon": 5,
            "dt": 0.1,
            "t_final": 40.0,
            "x0": [0.0, 0.0],
            "tracked": [1],
            "q_weights": [1.0],
            "r": 0.01,
            "discretization": "expm_interpolated",
            "reference": {"kind": "setpoints", "times": [0.0, 13.3, 26.7], "values": [1.0, -0.5, 1.2]},
        },
        "output": {"out_dir": "duffing_mpc_out"},
    },
    "burgers_mpc": {
        "seed": 3,
        "plant": {"kind": "burgers1d", "nu": 0.01, "n_grid": 128},
        "dictionary": {"kind": "monomial", "degree": 2},
        "sampling": {
            "mode": "trajectories",
            "n_initial": 1,
            "n_steps": 400,
            "dt": 0.5,
            "input_levels": [[-0.025], [0.075]],
            "level_probabilities": [0.75, 0.25],
            "derivatives": False,
            "observe": True,
        },
        "fit": {"method": "operators"},
        "mpc": {
            "horizon": 3,
            "dt": 0.5,
            "t_final": 60.0,
            "tracked": [1, 2, 3, 4],
            "q_weights": [1.0, 1.0, 1.0, 1.0],
            "r": 0.001,
            "observe": True,
            "reference": {"kind": "sinusoid", "offset": 0.5, "amplitude": 0.05, "period": 60.0},
        },
        "output": {"out_dir": "burgers_mpc_out"},
    },
    "linear_exactness": {
        "seed": 4,
        "plant": {"kind": "linear", "n": 4, "n_c": 2, "plant_seed": 7},
        "dictionary": {"kind": "monomial", "degree": 1},
        "sampling": {
            "mode": "trajectories",
            "n_initial": 20,
            "n_steps": 10,
            "dt": 0.1,
            "state_lo": [-1.0, -1.0, -1.0, -1.0],
            "state_hi": [1.0, 1.0, 1.0, 1.0],
            "derivatives": False,
        },
        "fit": {"method": "operators"},
        "predict": {
            "x0": [0.1, -0.2, 0.3, 0.0],
            "n_steps": 10,
            "dt": 0.1,
            "input": {"kind": "sine", "amplitude": 0.8, "frequency": 2.0},
        },
        "output": {"out_dir": "linear_exactness_out"},
    },
    "circle_rotation": {
        "seed": 5,
        "plant": {"kind": "circle_rotation"},
        "dictionary": {"kind": "fourier", "max_frequency": 1, "include_constant": False},
        "sampling": {
            "mode": "scattered",
            "n_initial": 50,
            "dt": 0.1,
            "state_lo": [0.0],
            "state_hi": [6.283185307179586],
            "input_levels": [[0.0], [1.0]],
            "derivatives": False,
        },
        "fit": {"method": "operators"},
        "predict": {
            "x0": [0.3],
            "n_steps": 20,
            "dt": 0.1,
            "input": {"kind": "constant", "value": [0.5]},
        },
        "output": {"out_dir": "circle_rotation_out"},
    },
}


@dataclass(frozen=True)
class PresetWriteResult:
    out_dir: Path
    presets: tuple[str, ...]
    files: tuple[Path, ...]


def preset(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        valid = ", ".join(["all", *PRESETS.keys()])
        raise ValueError(f"Unknown preset '{name}'. Valid values: {valid}")
    return copy.deepcopy(PRESETS[name])


def _resolve_presets(name: str) -> List[str]:
    if name == "all":
        return list(PRESETS.keys())
    preset(name)
    return [name]


def write_presets(name: str = "all", out_dir: str | Path = ".", force: bool = False) -> PresetWriteResult:
    """Write ``<preset>.json`` files; existing files need ``force``."""
    names = _resolve_presets(name)
    out = Path(out_dir).expanduser().resolve()
    targets = [out / f"{n}.json" for n in names]
    existing = [t for t in targets if t.exists()]
    if existing and not force:
        preview = ", ".join(str(t) for t in existing)
        raise FileExistsError(f"Output already exists: {preview}. Use --force to overwrite.")

    out.mkdir(parents=True, exist_ok=True)
    for n, target in zip(names, targets):
        body = preset(n)
        parse_config(body)
        write_json(target, body)
    return PresetWriteResult(out_dir=out, presets=tuple(names), files=tuple(targets))
