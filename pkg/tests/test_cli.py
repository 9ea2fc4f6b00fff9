import csv
import io
import json

import numpy as np
import pytest

from trustfuse.cli import EXIT_IO, EXIT_MODEL, EXIT_OK, EXIT_USAGE, main
from trustfuse.core import LABEL_NAMES, Channel, Modality, PoseLabel, SceneCondition
from trustfuse.fusion import load_model
from trustfuse.synthdata import MANIFEST, image_filename


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), out=buf)
    return code, buf.getvalue()


def tree_bytes(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small generated dataset and a resubstitution-trained MM model."""
    base = tmp_path_factory.mktemp("cli")
    code, text = run("--out-dir", str(base), "--threads", "2", "generate", "--out", "data",
                     "--actors", "1", "--sessions", "1", "--image-size", "64x48")
    assert code == EXIT_OK, text
    code, text = run("--out-dir", str(base), "train", "--data", "data", "--model", "mm.ccls",
                     "--trust-folds", "0")
    assert code == EXIT_OK, text
    return base


def image_args(base, scene, label, channels):
    return [x for c in channels
            for x in ("--image", f"{c.code}=data/{image_filename(0, 0, scene, label, c)}")]


class TestGenerate:
    def test_counts_printed(self, workspace):
        m = json.loads((workspace / "data" / MANIFEST).read_text())
        assert m["counts"]["points"] == 132 and m["seed"] == 7

    def test_factorial_count_and_rerun(self, tmp_path):
        def gen(dest):
            return run("--out-dir", str(tmp_path), "--seed", "7", "generate", "--out", dest,
                       "--actors", "2", "--sessions", "1", "--image-size", "32x24")
        assert gen("a")[0] == EXIT_OK
        code, text = gen("b")
        assert code == EXIT_OK and "wrote 264 points" in text
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_missing_out_is_usage_error(self, capsys):
        assert run("generate")[0] == EXIT_USAGE
        assert "usage:" in capsys.readouterr().err

    def test_bad_size(self):
        assert run("generate", "--out", "x", "--image-size", "big")[0] == EXIT_USAGE


class TestTrain:
    def test_trust_table_rows_on_simplex(self, workspace):
        model = load_model(workspace / "mm.ccls")
        assert len(model.trust_table) == 12
        for tv in model.trust_table.values():
            assert np.all(tv.w >= 0) and tv.w.sum() == pytest.approx(1.0, abs=1e-8)

    def test_svc_and_custom(self, workspace):
        code, text = run("--out-dir", str(workspace), "train", "--data", "data", "--model", "rd.ccls",
                         "--config", "custom", "--modalities", "R,D", "--views", "t", "--clf", "svc")
        assert code == EXIT_OK
        assert text.splitlines()[1].split() == ["scene", "R", "D"]
        assert load_model(workspace / "rd.ccls").clf_kind == "svc"

    def test_nonexistent_dataset(self, tmp_path):
        assert run("--out-dir", str(tmp_path), "train", "--data", "nope", "--model", "m")[0] == EXIT_IO

    def test_unknown_config(self, workspace):
        assert run("--out-dir", str(workspace), "train", "--data", "data", "--model", "m",
                   "--config", "XM")[0] == EXIT_USAGE


class TestEval:
    def test_four_configurations(self, workspace):
        code, _ = run("--out-dir", str(workspace), "eval", "--data", "data", "--report", "r4", "--folds", "3")
        assert code == EXIT_OK
        with open(workspace / "r4" / "accuracy_by_scene.csv", newline="") as f:
            header = next(csv.reader(f))
        assert header == ["scene", "MM", "MpM", "PMM", "PMpM"]

    def test_missing_tag(self, workspace):
        code, text = run("--out-dir", str(workspace), "eval", "--data", "data", "--report", "rm",
                         "--config", "MpM", "--missing", "P", "--folds", "3")
        assert code == EXIT_OK and "MpM missing=P" in text
        meta = json.loads((workspace / "rm" / "report.json").read_text())
        assert meta["missing"] == {"MpM missing=P": ["P"]}

    def test_deterministic_csvs(self, workspace):
        for d in ("e1", "e2"):
            code, _ = run("--out-dir", str(workspace), "--seed", "1", "--threads", "1", "eval", "--data", "data",
                          "--report", d, "--config", "PMpM", "--folds", "5")
            assert code == EXIT_OK
        a, b = tree_bytes(workspace / "e1"), tree_bytes(workspace / "e2")
        assert {k: v for k, v in a.items() if k.endswith(".csv")} == \
            {k: v for k, v in b.items() if k.endswith(".csv")}

    def test_thread_count_does_not_change_csvs(self, workspace):
        for d, t in (("t1", "1"), ("t3", "3")):
            run("--out-dir", str(workspace), "--threads", t, "eval", "--data", "data", "--report", d,
                "--config", "PMpM", "--folds", "3")
        a, b = tree_bytes(workspace / "t1"), tree_bytes(workspace / "t3")
        assert a["accuracy_by_scene.csv"] == b["accuracy_by_scene.csv"]


class TestPredict:
    def test_resubstitution_point(self, workspace):
        scene = SceneCondition.from_name("Bright-Clear")
        model = load_model(workspace / "mm.ccls")
        for label in (PoseLabel.SOLDIER_D, PoseLabel.FETAL_L):
            code, text = run("--out-dir", str(workspace), "predict", "--model", "mm.ccls", "--scene", scene.name,
                             *image_args(workspace, scene, label, model.channels))
            assert code == EXIT_OK, text
            assert text.splitlines()[0] == f"label: {LABEL_NAMES[label]}"

    def test_pressure_only_path(self, workspace):
        scene = SceneCondition.from_name("Dark-Blanket")
        code, text = run("--out-dir", str(workspace), "predict", "--model", "mm.ccls", "--scene", scene.name,
                         *image_args(workspace, scene, PoseLabel.LOG_R, [Channel(Modality.P)]),
                         "--missing", "R", "D")
        assert code == EXIT_OK, text
        assert text.splitlines()[-1] == "trust: R=0.0000 D=0.0000 P=1.0000"

    def test_missing_image_is_usage_error(self, workspace):
        assert run("--out-dir", str(workspace), "predict", "--model", "mm.ccls",
                   "--scene", "Bright-Clear")[0] == EXIT_USAGE

    def test_unknown_scene(self, workspace):
        assert run("--out-dir", str(workspace), "predict", "--model", "mm.ccls",
                   "--scene", "Dim-Clear")[0] == EXIT_USAGE

    def test_corrupt_model(self, workspace, capsys):
        buf = (workspace / "mm.ccls").read_bytes()
        (workspace / "bad.ccls").write_bytes(buf[: len(buf) // 2])
        scene = SceneCondition.from_name("Bright-Clear")
        code, _ = run("--out-dir", str(workspace), "predict", "--model", "bad.ccls", "--scene", scene.name,
                      *image_args(workspace, scene, PoseLabel.LOG_R, [Channel(Modality.P)]))
        assert code == EXIT_MODEL
        assert "CorruptModel" in capsys.readouterr().err

    def test_missing_model_file(self, workspace):
        assert run("--out-dir", str(workspace), "predict", "--model", "none.ccls",
                   "--scene", "Bright-Clear")[0] == EXIT_IO
