import json
from pathlib import Path

import numpy as np
import pytest

from progresskit.cli import main
from progresskit.fileio import parse_annotations


def run(*argv):
    return main([str(a) for a in argv])


GEN_ARGS = [
    "gen-synth",
    "--classes", 2,
    "--videos-per-class", 3,
    "--length", "8:12",
    "--padding", "2:4",
    "--map-size", "4x4",
    "--channels", 1,
    "--det-dilate", 3,
    "--det-jitter", 0.3,
    "--det-score-sigma", 0.05,
    "--seed", 11,
]

TRAIN_ARGS = [
    "--epochs", 2,
    "--batch-size", 4,
    "--lr", "0.005",
    "--dropout", "0.0",
    "--fc7-dim", 8,
    "--rnn-dims", "6,4",
    "--pool", "2x2",
    "--levels", "1,2",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(*GEN_ARGS, "--out", root / "data") == 0
    assert (
        run(
            "train",
            "--annotations", root / "data" / "annotations.txt",
            "--features", root / "data" / "features",
            "--out", root / "model.ckpt",
            "--trace", root / "trace.csv",
            *TRAIN_ARGS,
        )
        == 0
    )
    return root


class TestPipeline:
    def test_predict_then_eval_mse(self, workspace, capsys):
        assert (
            run(
                "predict",
                "--annotations", workspace / "data" / "annotations.txt",
                "--features", workspace / "data" / "features",
                "--checkpoint", workspace / "model.ckpt",
                "--out", workspace / "pred_gt.txt",
                "--tubes", "gt",
                "--pool", "2x2",
                "--levels", "1,2",
            )
            == 0
        )
        assert run("eval", "mse", "--predictions", workspace / "pred_gt.txt",
                   "--out", workspace / "mse.json") == 0
        payload = json.loads((workspace / "mse.json").read_text())
        assert payload["metric"] == "mse"
        assert payload["mean"] >= 0

    def test_eval_vap_on_detections_equal_gt_is_one(self, tmp_path):
        assert run("gen-synth", "--out", tmp_path / "clean", "--classes", 1,
                   "--videos-per-class", 2, "--length", "6:8", "--map-size", "4x4",
                   "--channels", 1, "--seed", 3) == 0
        assert run("eval", "vap", "--predictions", tmp_path / "clean" / "annotations.txt",
                   "--out", tmp_path / "vap.json") == 0
        payload = json.loads((tmp_path / "vap.json").read_text())
        assert all(entry["mean"] == 1.0 for entry in payload.values())

    def test_baselines_constant_mse_near_one_twelfth(self, tmp_path, capsys):
        assert run("gen-synth", "--out", tmp_path / "d", "--classes", 1,
                   "--videos-per-class", 8, "--length", "60:90", "--map-size", "4x4",
                   "--channels", 1, "--seed", 5) == 0
        assert run("baselines", "--annotations", tmp_path / "d" / "annotations.txt",
                   "--method", "constant", "--out", tmp_path / "c.txt") == 0
        assert run("eval", "mse", "--predictions", tmp_path / "c.txt",
                   "--out", tmp_path / "mse.json") == 0
        payload = json.loads((tmp_path / "mse.json").read_text())
        assert 0.080 <= payload["mean"] <= 0.087

    def test_refine_and_dump_and_plots(self, workspace):
        assert (
            run(
                "predict",
                "--annotations", workspace / "data" / "annotations.txt",
                "--features", workspace / "data" / "features",
                "--checkpoint", workspace / "model.ckpt",
                "--out", workspace / "pred_det.txt",
                "--tubes", "det",
                "--pool", "2x2",
                "--levels", "1,2",
            )
            == 0
        )
        assert run("refine", "--predictions", workspace / "pred_det.txt",
                   "--out", workspace / "trimmed.txt") == 0
        trimmed = parse_annotations(workspace / "trimmed.txt")
        original = parse_annotations(workspace / "pred_det.txt")
        assert sum(t.n_frames for t in trimmed.detections) <= sum(
            t.n_frames for t in original.detections
        )
        assert run("dump-states",
                   "--annotations", workspace / "data" / "annotations.txt",
                   "--features", workspace / "data" / "features",
                   "--checkpoint", workspace / "model.ckpt",
                   "--out", workspace / "states.csv",
                   "--pool", "2x2", "--levels", "1,2") == 0
        header = Path(workspace / "states.csv").read_text().splitlines()[0]
        assert header.startswith("tube,video,class,frame,h0")
        # 4 hidden units in the last layer per TRAIN_ARGS
        assert header.endswith("h3")

    def test_eval_app_and_exports(self, workspace):
        assert run("eval", "app", "--predictions", workspace / "pred_det.txt",
                   "--margin", "0.5", "--out", workspace / "app.json") == 0
        assert run("export-plots", "mse-bins", "--predictions", workspace / "pred_gt.txt",
                   "--out", workspace / "bins.csv") == 0
        assert run("export-plots", "app-margins", "--predictions", workspace / "pred_det.txt",
                   "--out", workspace / "margins.csv") == 0
        assert len(Path(workspace / "bins.csv").read_text().splitlines()) == 11

    def test_eval_partial_grid(self, workspace):
        assert run("eval", "partial",
                   "--annotations", workspace / "data" / "annotations.txt",
                   "--features", workspace / "data" / "features",
                   "--checkpoint", workspace / "model.ckpt",
                   "--grid", "--out", workspace / "partial.json",
                   "--pool", "2x2", "--levels", "1,2") == 0
        payload = json.loads((workspace / "partial.json").read_text())
        assert len(payload) == 10


class TestDeterminism:
    def test_full_pipeline_rerun_is_byte_identical(self, tmp_path):
        outputs = []
        for run_dir in (tmp_path / "r1", tmp_path / "r2"):
            assert run(*GEN_ARGS, "--out", run_dir / "data") == 0
            assert run(
                "train",
                "--annotations", run_dir / "data" / "annotations.txt",
                "--features", run_dir / "data" / "features",
                "--out", run_dir / "model.ckpt",
                "--trace", run_dir / "trace.csv",
                *TRAIN_ARGS,
            ) == 0
            assert run(
                "predict",
                "--annotations", run_dir / "data" / "annotations.txt",
                "--features", run_dir / "data" / "features",
                "--checkpoint", run_dir / "model.ckpt",
                "--out", run_dir / "pred.txt",
                "--tubes", "gt",
                "--pool", "2x2", "--levels", "1,2",
            ) == 0
            assert run("baselines", "--annotations", run_dir / "data" / "annotations.txt",
                       "--method", "random", "--seed", 9,
                       "--out", run_dir / "rand.txt") == 0
            files = {}
            for name in ("data/annotations.txt", "model.ckpt", "trace.csv", "pred.txt", "rand.txt"):
                files[name] = (run_dir / name).read_bytes()
            for feat in sorted((run_dir / "data" / "features").iterdir()):
                files[f"features/{feat.name}"] = feat.read_bytes()
            outputs.append(files)
        assert outputs[0].keys() == outputs[1].keys()
        for name in outputs[0]:
            assert outputs[0][name] == outputs[1][name], name


class TestErrors:
    def test_unknown_subcommand(self, capsys):
        code = main(["frobnicate"])
        assert code != 0
        assert "usage" in capsys.readouterr().err

    def test_missing_file_single_line_error(self, capsys, tmp_path):
        code = main(["eval", "mse", "--predictions", str(tmp_path / "nope.txt")])
        assert code == 2
        err = capsys.readouterr().err.strip()
        assert err.startswith("error: ")
        assert "\n" not in err

    def test_refine_without_progress(self, capsys, tmp_path):
        assert run("gen-synth", "--out", tmp_path / "d", "--classes", 1,
                   "--videos-per-class", 1, "--length", "5:6", "--map-size", "4x4",
                   "--channels", 1, "--seed", 2) == 0
        code = run("refine", "--predictions", tmp_path / "d" / "annotations.txt",
                   "--out", tmp_path / "t.txt")
        assert code == 2
        assert "progress" in capsys.readouterr().err
