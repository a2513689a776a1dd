"""Command-line entrypoint for koopgen."""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import OUT_DIR_ENV, RunConfig, apply_overrides, config_to_dict, load_config
from .errors import FitFailureError, InvalidInputError, KoopgenError
from .io import load_dataset, save_dataset, write_csv, write_json, write_trajectory_csv
from .modelfile import checksum_matches, load_model, load_model_bundle, model_from_payload, save_model
from .pipeline import (
    AnyModel,
    build_dataset,
    build_dictionary,
    build_plant,
    fit_model,
    run_mpc,
    run_prediction,
    validate_model,
)
from .presets import PRESETS, write_presets
from .report import closed_loop_fieldnames, closed_loop_rows, validation_fieldnames, validation_rows
from .viz import write_plot_scripts


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument(
        "--config",
        required=config_required,
        default=None,
        help="Run configuration file (.json or .toml)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Override the configured random seed",
    )
    parser.add_argument(
        "--out",
        default=None,
        help=f"Output directory; overrides ${OUT_DIR_ENV} and output.out_dir",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopgen",
        description="Bilinear Koopman surrogate models: training, prediction and model predictive control",
        epilog="Example configurations: koopgen get-config --help",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    train = sub.add_parser(
        "train",
        help="Sample training data and fit a surrogate model",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_common(train)
    train.add_argument(
        "--dataset",
        default=None,
        help="Fit on a saved dataset file instead of sampling the plant",
    )
    train.add_argument(
        "--jobs",
        type=int,
        default=None,
        help="Worker processes for trajectory sampling (0 uses all CPUs); omitted uses sampling.jobs",
    )

    predict = sub.add_parser(
        "predict",
        help="Predict with a model file and write a trajectory CSV",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_common(predict)
    predict.add_argument(
        "--model",
        default=None,
        help="Model file; omitted uses model.json (or model.json.gz) in the output directory",
    )
    predict.add_argument(
        "--x0",
        default=None,
        help="Comma-separated initial state; overrides predict.x0",
    )
    predict.add_argument(
        "--no-plant",
        action="store_true",
        help="Skip the reference simulation and the x/err columns",
    )
    predict.add_argument(
        "--plot-scripts",
        action="store_true",
        help="Write a companion matplotlib script next to the CSV",
    )

    mpc = sub.add_parser(
        "mpc",
        help="Run closed-loop model predictive control against the configured plant",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_common(mpc)
    mpc.add_argument(
        "--model",
        default=None,
        help="Model file; omitted trains a model from the configuration first",
    )
    mpc.add_argument(
        "--plot-scripts",
        action="store_true",
        help="Write a companion matplotlib script next to the CSV",
    )

    validate = sub.add_parser(
        "validate",
        help="Run the invariant checks on a model file",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_common(validate, config_required=False)
    validate.add_argument(
        "--model",
        required=True,
        help="Model file to check",
    )
    validate.add_argument(
        "--dataset",
        default=None,
        help="Dataset file the model was fitted on; enables refit and identity checks",
    )
    validate.add_argument(
        "--strict",
        action="store_true",
        help="Exit with code 1 when any check fails; omitted always exits 0 and reports failures",
    )

    get_config = sub.add_parser(
        "get-config",
        help="Write bundled example configurations",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    get_config.add_argument(
        "--preset",
        choices=[*PRESETS.keys(), "all"],
        default="duffing_prediction",
        help="Preset to write",
    )
    get_config.add_argument(
        "--out-dir",
        default="configs",
        help="Directory where configuration files will be written",
    )
    get_config.add_argument(
        "--force",
        action="store_true",
        help="Overwrite existing files in --out-dir; omitted raises an error if targets already exist",
    )
    return parser


def _log_progress(message: str) -> None:
    print(f"[koopgen] {message}", file=sys.stderr, flush=True)


def _log_warning(message: str) -> None:
    print(f"[koopgen][warning] {message}", file=sys.stderr, flush=True)


def _validate_args(args: argparse.Namespace) -> None:
    if getattr(args, "seed", None) is not None and args.seed < 0:
        raise InvalidInputError("--seed must be >= 0")
    if getattr(args, "jobs", None) is not None and args.jobs < 0:
        raise InvalidInputError("--jobs must be >= 0")
    if getattr(args, "config", None) and not Path(args.config).exists():
        raise InvalidInputError(f"--config file does not exist: {args.config}")
    for flag in ("model", "dataset"):
        value = getattr(args, flag, None)
        if value and not Path(value).exists():
            raise InvalidInputError(f"--{flag} file does not exist: {value}")


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, seed=args.seed, out_dir=args.out)


def _model_path(cfg: RunConfig) -> Path:
    name = "model.json.gz" if cfg.output.compress_model else "model.json"
    return Path(cfg.output.out_dir) / name


def _dataset_path(cfg: RunConfig) -> Path:
    name = "dataset.json.gz" if cfg.output.compress_model else "dataset.json"
    return Path(cfg.output.out_dir) / name


def _default_model(cfg: RunConfig) -> Path:
    out = Path(cfg.output.out_dir)
    for name in ("model.json", "model.json.gz"):
        if (out / name).exists():
            return out / name
    raise InvalidInputError(f"no model file in {out}; run 'koopgen train' first or pass --model")


def _summary(command: str, cfg: RunConfig, extra: Dict[str, Any], results: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "tool": "koopgen",
        "version": __version__,
        "command": command,
        "parameters": {"config": config_to_dict(cfg), **extra},
        "results": results,
    }


def _fit_with_warnings(cfg: RunConfig, dictionary: Any, data: Any) -> Tuple[AnyModel, List[str]]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit_model(cfg, dictionary, data)
    messages = [str(w.message) for w in caught]
    for msg in messages:
        _log_warning(msg)
    return model, messages


def _train(cfg: RunConfig, args: argparse.Namespace, stages: int) -> Dict[str, Any]:
    _log_progress(f"[2/{stages}] Building plant '{cfg.plant.kind}' and {cfg.dictionary.kind} dictionary")
    plant = build_plant(cfg)
    dictionary = build_dictionary(cfg, plant)

    dataset_arg = getattr(args, "dataset", None)
    if dataset_arg:
        _log_progress(f"[3/{stages}] Loading dataset: {dataset_arg}")
        data = load_dataset(dataset_arg)
        source = str(dataset_arg)
    else:
        jobs = getattr(args, "jobs", None)
        _log_progress(f"[3/{stages}] Sampling training data ({cfg.sampling.mode}, n_initial={cfg.sampling.n_initial})")
        data = build_dataset(cfg, plant, jobs)
        source = "sampled"
    _log_progress(f"[3/{stages}] Dataset has {data.m} samples; fingerprint {data.fingerprint()[:12]}")

    _log_progress(f"[4/{stages}] Fitting {cfg.fit.method} model (lifted dimension {dictionary.n_o})")
    model, fit_warnings = _fit_with_warnings(cfg, dictionary, data)
    return {
        "plant": plant,
        "dictionary": dictionary,
        "data": data,
        "dataset_source": source,
        "model": model,
        "warnings": fit_warnings,
    }


def _model_results(model: AnyModel) -> Dict[str, Any]:
    singles = model.models if hasattr(model, "regions") else [model]
    return {
        "kind": type(model).__name__,
        "n_o": model.n_o,
        "n_c": model.n_c,
        "dt": getattr(model, "dt", None),
        "fits": [m.fit.as_dict() if m.fit is not None else None for m in singles],
    }


def run_train(args: argparse.Namespace) -> int:
    _log_progress("[1/5] Loading configuration")
    _validate_args(args)
    cfg = _load_run_config(args)
    out_dir = Path(cfg.output.out_dir)

    trained = _train(cfg, args, 5)
    model = trained["model"]
    data = trained["data"]

    _log_progress("[5/5] Writing model, dataset and summary")
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = _model_path(cfg)
    save_model(model_path, model)
    dataset_path = _dataset_path(cfg)
    if trained["dataset_source"] == "sampled":
        save_dataset(dataset_path, data)
    summary_path = out_dir / "train_summary.json"
    results = {
        **_model_results(model),
        "n_samples": data.m,
        "dataset_fingerprint": data.fingerprint(),
        "dataset_source": trained["dataset_source"],
        "model_file": str(model_path),
        "dataset_file": str(dataset_path) if trained["dataset_source"] == "sampled" else trained["dataset_source"],
        "warnings": trained["warnings"],
    }
    write_json(summary_path, _summary("train", cfg, {"jobs": getattr(args, "jobs", None)}, results))

    print(f"Wrote model: {model_path}")
    print(f"Wrote summary: {summary_path}")
    print(f"Lifted dimension: {model.n_o}")
    return 0


def _parse_x0(raw: Optional[str]) -> Optional[Tuple[float, ...]]:
    if raw is None:
        return None
    try:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise InvalidInputError(f"--x0 must be comma-separated numbers: {raw}") from exc


def run_predict(args: argparse.Namespace) -> int:
    _log_progress("[1/3] Loading configuration and model")
    _validate_args(args)
    cfg = _load_run_config(args)
    x0 = _parse_x0(args.x0)
    if x0 is not None:
        cfg = replace(cfg, predict=replace(cfg.predict, x0=x0))
    model_path = Path(args.model) if args.model else _default_model(cfg)
    model = load_model(model_path)
    plant = None if args.no_plant or not cfg.predict.compare_plant else build_plant(cfg)

    _log_progress(f"[2/3] Predicting {cfg.predict.n_steps} steps of dt={cfg.predict.dt:g} ({cfg.predict.scheme})")
    result = run_prediction(cfg, model, plant)

    _log_progress("[3/3] Writing trajectory CSV and summary")
    out_dir = Path(cfg.output.out_dir)
    csv_path = out_dir / "prediction.csv"
    write_trajectory_csv(csv_path, result.t, result.z, result.x, result.u, result.err)
    plot_outputs: Dict[str, object] = {}
    if args.plot_scripts or cfg.output.plot_scripts:
        plot_outputs = write_plot_scripts({"prediction": csv_path}, __version__)
        for w in plot_outputs.get("plot_warnings", []):  # type: ignore[union-attr]
            _log_warning(str(w))
    summary_path = out_dir / "predict_summary.json"
    results: Dict[str, Any] = {
        "model_file": str(model_path),
        "n_rows": int(result.z.shape[0]),
        "output_csv": str(csv_path),
        "compared_to_plant": result.err is not None,
        "visual_outputs": plot_outputs,
    }
    if result.err is not None:
        results["max_error"] = float(np.max(result.err))
        results["final_error"] = float(result.err[-1])
    write_json(summary_path, _summary("predict", cfg, {"model": str(model_path)}, results))

    print(f"Wrote trajectory: {csv_path}")
    print(f"Wrote summary: {summary_path}")
    return 0


def run_mpc_command(args: argparse.Namespace) -> int:
    _log_progress("[1/5] Loading configuration")
    _validate_args(args)
    cfg = _load_run_config(args)
    plant = build_plant(cfg)
    fit_warnings: List[str] = []
    if args.model:
        _log_progress(f"[2/5] Loading model: {args.model}")
        model = load_model(args.model)
        _log_progress("[3/5] Model loaded; skipping training")
        model_source = str(args.model)
    else:
        trained = _train(cfg, args, 5)
        model = trained["model"]
        fit_warnings = trained["warnings"]
        model_source = "trained"

    n_steps = int(round(cfg.mpc.t_final / cfg.mpc.dt))
    _log_progress(
        f"[5/5] Running closed loop: {n_steps} steps, horizon {cfg.mpc.horizon}, solver {cfg.mpc.solver}"
    )
    every = max(1, n_steps // 10)

    def on_step(k: int, total: int) -> None:
        if k % every == 0 or k == total:
            _log_progress(f"[5/5] Closed-loop step {k}/{total}")

    record = run_mpc(cfg, model, plant, on_step=on_step)
    if record.aborted:
        _log_warning(record.message)
    unconverged = sum(1 for c in record.converged if not c)
    if unconverged:
        _log_warning(f"{unconverged} horizon solves did not converge; best iterates were applied")

    out_dir = Path(cfg.output.out_dir)
    csv_path = out_dir / "closed_loop.csv"
    n_tracked = len(record.tracked[0]) if record.tracked else 0
    write_csv(csv_path, closed_loop_rows(record), closed_loop_fieldnames(plant.n, n_tracked, plant.n_c))
    plot_outputs: Dict[str, object] = {}
    if args.plot_scripts or cfg.output.plot_scripts:
        plot_outputs = write_plot_scripts({"closed_loop": csv_path}, __version__)
    summary_path = out_dir / "mpc_summary.json"
    results = {
        **record.summary(),
        "model_source": model_source,
        "model": _model_results(model),
        "output_csv": str(csv_path),
        "warnings": fit_warnings,
        "visual_outputs": plot_outputs,
    }
    write_json(summary_path, _summary("mpc", cfg, {"model": args.model}, results))

    print(f"Wrote closed loop: {csv_path}")
    print(f"Wrote summary: {summary_path}")
    print(f"Tracking error integral: {results['tracking_error_integral']:.6g}")
    if record.aborted:
        return 1
    return 0


def run_validate(args: argparse.Namespace) -> int:
    _log_progress("[1/3] Loading model and dataset")
    _validate_args(args)
    cfg = _load_run_config(args)
    if not args.out and not args.config and not os.environ.get(OUT_DIR_ENV):
        out_dir = Path(args.model).resolve().parent
    else:
        out_dir = Path(cfg.output.out_dir)
    bundle = load_model_bundle(args.model)
    checksum_ok = checksum_matches(bundle)
    if not checksum_ok:
        _log_warning(f"{args.model} checksum does not match its contents")
    model = model_from_payload(bundle["model"])
    data = load_dataset(args.dataset) if args.dataset else None

    _log_progress("[2/3] Running invariant checks")
    entries = validate_model(model, checksum_ok, data, seed=cfg.seed)
    failed = [e["check"] for e in entries if not e["passed"]]
    for name in failed:
        _log_warning(f"check failed: {name}")

    _log_progress("[3/3] Writing validation report")
    csv_path = out_dir / "validation.csv"
    write_csv(csv_path, validation_rows(entries), validation_fieldnames())
    summary_path = out_dir / "validate_summary.json"
    results = {
        "checks": entries,
        "n_checks": len(entries),
        "n_failed": len(failed),
        "all_passed": not failed,
        "output_csv": str(csv_path),
    }
    write_json(
        summary_path,
        _summary("validate", cfg, {"model": str(args.model), "dataset": args.dataset}, results),
    )

    print(f"Wrote validation report: {csv_path}")
    print(f"Checks passed: {len(entries) - len(failed)}/{len(entries)}")
    if failed and args.strict:
        return 1
    return 0


def run_get_config(args: argparse.Namespace) -> int:
    result = write_presets(args.preset, args.out_dir, args.force)
    print(f"Wrote configurations to: {result.out_dir}")
    print(f"Presets: {', '.join(result.presets)}")
    return 0


HANDLERS = {
    "train": run_train,
    "predict": run_predict,
    "mpc": run_mpc_command,
    "validate": run_validate,
    "get-config": run_get_config,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv_list = list(argv) if argv is not None else sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv_list)
    except SystemExit as exc:
        return int(exc.code or 0) if not isinstance(exc.code, str) else 2

    try:
        return HANDLERS[args.command](args)
    except FitFailureError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        for key, value in sorted(exc.diagnostics.items()):
            print(f"ERROR:   {key} = {value}", file=sys.stderr)
        return 1
    except (InvalidInputError, FileNotFoundError, FileExistsError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 2
    except KoopgenError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - top-level UX
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
