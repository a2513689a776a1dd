"""Model file load/save utilities."""

from __future__ import annotations

import gzip
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .edmd import FitInfo, GeneratorModel, OperatorModel
from .errors import InvalidInputError
from .krom import BankRegion, ModelBank


MODEL_FORMAT = "koopgen-model"
MODEL_VERSION = 1

AnyModel = Union[GeneratorModel, OperatorModel, ModelBank]


def _matrix_rows(m: np.ndarray) -> List[List[float]]:
    # json writes floats with repr, which round-trips every double exactly
    return [[float(v) for v in row] for row in np.asarray(m)]


def _model_payload(model: Union[GeneratorModel, OperatorModel]) -> Dict[str, Any]:
    return {
        "kind": "generator" if isinstance(model, GeneratorModel) else "operator",
        "n_o": model.n_o,
        "n_c": model.n_c,
        "dt": model.dt if isinstance(model, OperatorModel) else None,
        "dictionary": model.dictionary,
        "input_lo": [float(v) for v in model.input_lo],
        "input_hi": [float(v) for v in model.input_hi],
        "k0": _matrix_rows(model.k0),
        "b": [_matrix_rows(bi) for bi in model.b],
        "fit": None if model.fit is None else model.fit.as_dict(),
    }


def model_bundle(model: AnyModel) -> Dict[str, Any]:
    if isinstance(model, ModelBank):
        body: Dict[str, Any] = {
            "kind": "bank",
            "input_lo": [float(v) for v in model.input_lo],
            "input_hi": [float(v) for v in model.input_hi],
            "regions": [
                {"lo": [float(v) for v in r.lo], "hi": [float(v) for v in r.hi], "model": _model_payload(r.model)}
                for r in model.regions
            ],
        }
    else:
        body = _model_payload(model)
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "model": body,
        "checksum": payload_checksum(body),
    }


def payload_checksum(body: Dict[str, Any]) -> str:
    text = json.dumps(body, ensure_ascii=True, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dataset_fingerprint_of(model: AnyModel) -> Optional[str]:
    first = model.regions[0].model if isinstance(model, ModelBank) else model
    return None if first.fit is None else first.fit.dataset_fingerprint


def save_model(path: str | Path, model: AnyModel) -> None:
    """Write a model file; a ``.gz`` suffix selects gzip compression."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bundle = model_bundle(model)

    if str(path).endswith(".gz"):
        with gzip.open(path, "wt", encoding="utf-8") as handle:
            json.dump(bundle, handle, ensure_ascii=True, sort_keys=True, indent=1)
            handle.write("\n")
        return

    with path.open("w", encoding="utf-8") as handle:
        json.dump(bundle, handle, ensure_ascii=True, sort_keys=True, indent=1)
        handle.write("\n")


def load_model_bundle(path: str | Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        if str(path).endswith(".gz"):
            with gzip.open(path, "rt", encoding="utf-8") as handle:
                bundle = json.load(handle)
        else:
            with path.open("r", encoding="utf-8") as handle:
                bundle = json.load(handle)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not a valid model file: {exc}") from exc
    if not isinstance(bundle, dict) or bundle.get("format") != MODEL_FORMAT:
        raise InvalidInputError(f"{path} is not a koopgen model file")
    if int(bundle.get("version", -1)) != MODEL_VERSION:
        raise InvalidInputError(f"{path} has unsupported model file version {bundle.get('version')}")
    if not isinstance(bundle.get("model"), dict):
        raise InvalidInputError(f"{path} holds no model")
    return bundle


def checksum_matches(bundle: Dict[str, Any]) -> bool:
    return bundle.get("checksum") == payload_checksum(bundle["model"])


def load_model(path: str | Path, verify: bool = True) -> AnyModel:
    """Read a model file; with ``verify`` a checksum mismatch is an error."""
    bundle = load_model_bundle(path)
    if verify and not checksum_matches(bundle):
        raise InvalidInputError(f"{path} checksum does not match its contents")
    return model_from_payload(bundle["model"])


def model_from_payload(body: Dict[str, Any]) -> AnyModel:
    kind = body.get("kind")
    if kind == "bank":
        regions = tuple(
            BankRegion(
                lo=np.asarray(r["lo"], dtype=float),
                hi=np.asarray(r["hi"], dtype=float),
                model=_single_model(r["model"]),
            )
            for r in body.get("regions", [])
        )
        return ModelBank(regions=regions, input_lo=body["input_lo"], input_hi=body["input_hi"])
    return _single_model(body)


def _single_model(body: Dict[str, Any]) -> Union[GeneratorModel, OperatorModel]:
    try:
        kind = body["kind"]
        k0 = np.asarray(body["k0"], dtype=float)
        b = tuple(np.asarray(bi, dtype=float) for bi in body["b"])
        fit_raw = body.get("fit")
        fit = FitInfo(**fit_raw) if isinstance(fit_raw, dict) else None
        common = dict(
            k0=k0,
            b=b,
            dictionary=body["dictionary"],
            input_lo=body["input_lo"],
            input_hi=body["input_hi"],
            fit=fit,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed model entry: {exc}") from exc
    if kind == "generator":
        return GeneratorModel(**common)
    if kind == "operator":
        return OperatorModel(dt=float(body["dt"]), **common)
    raise InvalidInputError(f"Unknown model kind '{kind}'")
