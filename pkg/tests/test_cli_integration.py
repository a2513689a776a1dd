import contextlib
import csv
import io
import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from koopgen.cli import main
from koopgen.config import OUT_DIR_ENV


TOY_CONFIG = {
    "seed": 11,
    "plant": {"kind": "linear", "n": 2, "n_c": 1, "plant_seed": 3},
    "dictionary": {"kind": "monomial", "degree": 1},
    "sampling": {
        "mode": "trajectories",
        "n_initial": 10,
        "n_steps": 5,
        "dt": 0.1,
        "state_lo": [-1.0, -1.0],
        "state_hi": [1.0, 1.0],
        "derivatives": False,
    },
    "fit": {"method": "operators"},
    "predict": {
        "x0": [0.1, -0.2],
        "n_steps": 5,
        "dt": 0.1,
        "input": {"kind": "sine", "amplitude": 0.5, "frequency": 2.0},
    },
    "mpc": {
        "horizon": 3,
        "dt": 0.1,
        "t_final": 0.5,
        "x0": [0.0, 0.0],
        "r": 0.01,
        "reference": {"kind": "setpoints", "times": [0.0], "values": [0.5]},
    },
}


class TestCliIntegration(unittest.TestCase):
    def _build_toy_config(self, overrides: dict | None = None) -> tuple[Path, Path]:
        td = Path(tempfile.mkdtemp(prefix="koopgen_cli_"))
        body = json.loads(json.dumps(TOY_CONFIG))
        body["output"] = {"out_dir": str(td / "out")}
        for key, value in (overrides or {}).items():
            body[key] = value
        config = td / "run.json"
        config.write_text(json.dumps(body), encoding="utf-8")
        return td, config

    def _run(self, argv: list[str]) -> tuple[int, str]:
        err = io.StringIO()
        with contextlib.redirect_stderr(err), contextlib.redirect_stdout(io.StringIO()):
            rc = main(argv)
        return rc, err.getvalue()

    def _train(self, config: Path, out: Path) -> None:
        rc, _ = self._run(["train", "--config", str(config), "--out", str(out)])
        self.assertEqual(rc, 0)

    def test_train_writes_model_dataset_and_summary(self) -> None:
        td, config = self._build_toy_config()
        out = td / "out"
        rc, log = self._run(["train", "--config", str(config)])
        self.assertEqual(rc, 0)
        for name in ("model.json", "dataset.json", "train_summary.json"):
            self.assertTrue((out / name).exists(), msg=name)

        self.assertIn("[koopgen] [1/5] Loading configuration", log)
        self.assertIn("[koopgen] [5/5] Writing model, dataset and summary", log)

        summary = json.loads((out / "train_summary.json").read_text(encoding="utf-8"))
        self.assertEqual(summary["tool"], "koopgen")
        self.assertEqual(summary["command"], "train")
        self.assertEqual(summary["parameters"]["config"]["seed"], 11)
        self.assertEqual(summary["results"]["kind"], "OperatorModel")
        self.assertEqual(summary["results"]["n_o"], 3)
        self.assertEqual(summary["results"]["n_samples"], 50)
        self.assertEqual(summary["results"]["dataset_source"], "sampled")

    def test_same_seed_gives_identical_prediction_files(self) -> None:
        td, config = self._build_toy_config()
        outputs = []
        for run in ("a", "b"):
            out = td / run
            self._train(config, out)
            rc, log = self._run(["predict", "--config", str(config), "--out", str(out)])
            self.assertEqual(rc, 0)
            self.assertIn("[koopgen] [2/3] Predicting 5 steps", log)
            outputs.append((out / "prediction.csv").read_bytes())
        self.assertEqual(outputs[0], outputs[1])

        with (td / "a" / "prediction.csv").open(encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual(len(rows), 6)
        self.assertEqual(list(rows[0].keys()), ["t", "z_1", "z_2", "z_3", "x_1", "x_2", "u_1", "err"])
        # the linear plant is reproduced exactly by a degree-1 dictionary
        self.assertLess(max(float(r["err"]) for r in rows), 1e-8)

        summary = json.loads((td / "a" / "predict_summary.json").read_text(encoding="utf-8"))
        self.assertTrue(summary["results"]["compared_to_plant"])
        self.assertEqual(summary["results"]["n_rows"], 6)

    def test_predict_without_plant_and_with_plot_script(self) -> None:
        td, config = self._build_toy_config()
        out = td / "out"
        self._train(config, out)
        rc, _ = self._run(
            ["predict", "--config", str(config), "--no-plant", "--x0", "0.3,0.3", "--plot-scripts"]
        )
        self.assertEqual(rc, 0)
        with (out / "prediction.csv").open(encoding="utf-8", newline="") as handle:
            header = next(csv.reader(handle))
        self.assertEqual(header, ["t", "z_1", "z_2", "z_3", "u_1"])
        self.assertTrue((out / "prediction.plot.py").exists())
        summary = json.loads((out / "predict_summary.json").read_text(encoding="utf-8"))
        self.assertFalse(summary["results"]["compared_to_plant"])
        self.assertEqual(summary["parameters"]["config"]["predict"]["x0"], [0.3, 0.3])

    def test_validate_reports_a_tampered_model_without_failing(self) -> None:
        td, config = self._build_toy_config()
        out = td / "out"
        self._train(config, out)
        model_path = out / "model.json"

        rc, _ = self._run(
            ["validate", "--model", str(model_path), "--dataset", str(out / "dataset.json")]
        )
        self.assertEqual(rc, 0)
        summary = json.loads((out / "validate_summary.json").read_text(encoding="utf-8"))
        checks = {e["check"]: e for e in summary["results"]["checks"]}
        for name in ("checksum", "model_affinity", "gradient_check", "dataset_fingerprint", "linear_exactness"):
            self.assertTrue(checks[name]["passed"], msg=name)
        self.assertTrue((out / "validation.csv").exists())

        bundle = json.loads(model_path.read_text(encoding="utf-8"))
        bundle["model"]["k0"][1][1] += 0.25
        model_path.write_text(json.dumps(bundle), encoding="utf-8")

        rc, log = self._run(["validate", "--model", str(model_path)])
        self.assertEqual(rc, 0)
        self.assertIn("[koopgen][warning] check failed: checksum", log)
        summary = json.loads((out / "validate_summary.json").read_text(encoding="utf-8"))
        self.assertFalse(summary["results"]["all_passed"])
        self.assertGreaterEqual(summary["results"]["n_failed"], 1)

        rc, _ = self._run(["validate", "--model", str(model_path), "--strict"])
        self.assertEqual(rc, 1)

    def test_tampered_model_is_refused_by_predict(self) -> None:
        td, config = self._build_toy_config()
        out = td / "out"
        self._train(config, out)
        model_path = out / "model.json"
        bundle = json.loads(model_path.read_text(encoding="utf-8"))
        bundle["model"]["k0"][0][0] += 1e-6
        model_path.write_text(json.dumps(bundle), encoding="utf-8")
        rc, log = self._run(["predict", "--config", str(config)])
        self.assertEqual(rc, 2)
        self.assertIn("ERROR:", log)
        self.assertFalse((out / "prediction.csv").exists())

    def test_mpc_writes_closed_loop_outputs(self) -> None:
        td, config = self._build_toy_config()
        out = td / "out"
        rc, log = self._run(["mpc", "--config", str(config)])
        self.assertEqual(rc, 0)
        self.assertIn("[koopgen] [5/5] Running closed loop: 5 steps, horizon 3, solver bfgs", log)

        with (out / "closed_loop.csv").open(encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual(len(rows), 6)
        self.assertIn("ref_1", rows[0])
        self.assertEqual(rows[-1]["u_1"], "")
        for row in rows[:-1]:
            self.assertLessEqual(abs(float(row["u_1"])), 1.0 + 1e-12)

        summary = json.loads((out / "mpc_summary.json").read_text(encoding="utf-8"))
        self.assertEqual(summary["command"], "mpc")
        self.assertEqual(summary["results"]["model_source"], "trained")
        self.assertFalse(summary["results"]["aborted"])
        steps = summary["results"]["solver_steps"]
        self.assertEqual(len(steps), 5)
        self.assertTrue(all(step["solver"] == "bfgs" for step in steps))

    def test_mpc_reuses_a_trained_model(self) -> None:
        td, config = self._build_toy_config()
        out = td / "out"
        self._train(config, out)
        rc, log = self._run(["mpc", "--config", str(config), "--model", str(out / "model.json")])
        self.assertEqual(rc, 0)
        self.assertIn("[3/5] Model loaded; skipping training", log)

    def test_unknown_config_key_is_rejected_before_writing(self) -> None:
        td, config = self._build_toy_config({"fit": {"methd": "operators"}})
        rc, log = self._run(["train", "--config", str(config)])
        self.assertEqual(rc, 2)
        self.assertIn("fit.methd", log)
        self.assertFalse((td / "out").exists())

    def test_argument_errors(self) -> None:
        td, config = self._build_toy_config()
        rc, _ = self._run(["train", "--config", str(config), "--seed", "-1"])
        self.assertEqual(rc, 2)
        rc, _ = self._run(["train", "--config", str(td / "absent.json")])
        self.assertEqual(rc, 2)
        rc, _ = self._run(["predict", "--config", str(config), "--x0", "a,b"])
        self.assertEqual(rc, 2)
        rc, _ = self._run(["train"])
        self.assertEqual(rc, 2)

    def test_environment_sets_the_output_directory(self) -> None:
        td, config = self._build_toy_config()
        env_out = td / "from_env"
        with mock.patch.dict(os.environ, {OUT_DIR_ENV: str(env_out)}):
            rc, _ = self._run(["train", "--config", str(config)])
        self.assertEqual(rc, 0)
        self.assertTrue((env_out / "model.json").exists())
        self.assertFalse((td / "out").exists())

    def test_get_config_refuses_to_overwrite(self) -> None:
        td = Path(tempfile.mkdtemp(prefix="koopgen_presets_"))
        rc, _ = self._run(["get-config", "--preset", "duffing_mpc", "--out-dir", str(td)])
        self.assertEqual(rc, 0)
        body = json.loads((td / "duffing_mpc.json").read_text(encoding="utf-8"))
        self.assertEqual(body["mpc"]["horizon"], 5)

        rc, log = self._run(["get-config", "--preset", "duffing_mpc", "--out-dir", str(td)])
        self.assertEqual(rc, 2)
        self.assertIn("--force", log)
        rc, _ = self._run(["get-config", "--preset", "duffing_mpc", "--out-dir", str(td), "--force"])
        self.assertEqual(rc, 0)


if __name__ == "__main__":
    unittest.main()
