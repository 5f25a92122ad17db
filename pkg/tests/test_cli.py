import hashlib
import json

import pytest
import torch
import yaml

from viewpose import config as C
from viewpose.cli import main
from viewpose.data import datasets_equal, load_manifest
from viewpose.model import load_checkpoint, save_checkpoint

TINY = [
    "--set", "data.resolution=16", "--set", "data.n_sequences=4", "--set", "data.frames_per_sequence=16",
    "--set", "data.n_subjects=2",
    "--set", "model.width_divisor=16", "--set", "model.n_features=4",
    "--set", "pretext.epochs=1", "--set", "downstream.hidden_size=16", "--set", "downstream.epochs=1",
    "--set", "downstream.test_subjects=[0]",
]


def run(*args):
    return main([str(a) for a in args])


def tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def data3(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert run("generate", "--out", out, "--views", 3, *TINY) == 0
    return out


@pytest.fixture(scope="module")
def pretext(data3):
    out = data3.parent / "pretext"
    assert run("train-pretext", "--dataset", data3, "--out", out, "--set", "pretext.views=[0,1]", *TINY) == 0
    return out


class TestConfig:
    def test_precedence(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 3\ndata: {n_sequences: 7}\n")
        env = {"VIEWPOSE_DATA__N_SEQUENCES": "9", "VIEWPOSE_PRETEXT__EPOCHS": "4"}
        cfg = C.load_config(path, ["pretext.epochs=5"], environ=env)
        assert cfg["seed"] == 3 and cfg["data"]["n_sequences"] == 9 and cfg["pretext"]["epochs"] == 5
        assert cfg["data"]["resolution"] == 64

    def test_bad_override(self):
        with pytest.raises(ValueError):
            C.load_config(None, ["no-equals-sign"])

    def test_builders(self):
        cfg = C.load_config(None, [])
        assert C.model_config(cfg).n_features == 16
        assert C.pretext_config(cfg).weights.beta == cfg["pretext"]["weights"]["beta"]
        assert C.head_config(cfg).hidden_size == 512
        assert C.scene_spec(cfg).azimuths == (0.0, 90.0)


class TestGenerate:
    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run("generate", "--out", tmp_path / d, "--seed", 5, *TINY) == 0
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")
        assert run("generate", "--out", tmp_path / "c", "--seed", 6, *TINY) == 0
        assert tree_hash(tmp_path / "a") != tree_hash(tmp_path / "c")

    def test_views(self, data3):
        ds = load_manifest(data3)
        assert ds.views_per_scene == 3 and len(ds) == 4
        assert ds.azimuths == [0.0, 90.0, 45.0]

    def test_force(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run("generate", "--out", out, *TINY) == 0
        assert run("generate", "--out", out, *TINY) == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["command"] == "generate" and "--force" in err["message"]
        assert run("generate", "--out", out, "--force", *TINY) == 0

    def test_bad_view_count(self, tmp_path):
        assert run("generate", "--out", tmp_path / "x", "--views", 1, *TINY) == 1

    def test_resolved_config_reproduces(self, tmp_path):
        assert run("generate", "--out", tmp_path / "a", "--seed", 2, *TINY) == 0
        assert run("generate", "--out", tmp_path / "b", "--config", tmp_path / "a" / "config.yaml") == 0
        assert datasets_equal(load_manifest(tmp_path / "a"), load_manifest(tmp_path / "b"))


class TestPretext:
    def test_outputs(self, pretext):
        assert (pretext / "final.pt").exists() and (pretext / "metrics.jsonl").exists()
        model, _ = load_checkpoint(pretext / "final.pt")
        assert model.cfg.n_features == 4
        cfg = yaml.safe_load((pretext / "config.yaml").read_text())
        assert cfg["pretext"]["views"] == [0, 1]
        # 4 scenes x 1 view pair, batch 5 -> one step
        assert len((pretext / "metrics.jsonl").read_text().splitlines()) == 1

    def test_rec_only_preset(self, data3, tmp_path):
        out = tmp_path / "rec"
        assert run("train-pretext", "--dataset", data3, "--out", out, "--loss-preset", "rec-only", *TINY) == 0
        rec = json.loads((out / "metrics.jsonl").read_text().splitlines()[0])
        assert rec["invar"] == 0.0
        assert rec["total"] == pytest.approx(rec["rec1"] + rec["rec2"])

    def test_nan_checkpoint_aborts(self, data3, pretext, tmp_path, capsys):
        model, _ = load_checkpoint(pretext / "final.pt")
        with torch.no_grad():
            model.decoder.fc[0].weight.fill_(float("nan"))
        opt = torch.optim.Adam(model.parameters())
        bad = save_checkpoint(tmp_path / "bad.pt", model, opt, epoch=0)
        out = tmp_path / "resumed"
        assert run("train-pretext", "--dataset", data3, "--out", out, "--resume", bad, *TINY) == 1
        assert "NonFiniteLossError" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path):
        assert run("train-pretext", "--dataset", tmp_path / "none", "--out", tmp_path / "o", *TINY) == 1


class TestDownstreamAndEval:
    def test_frozen_needs_checkpoint(self, data3, tmp_path):
        assert run("train-downstream", "--dataset", data3, "--out", tmp_path / "h", *TINY) == 1

    def test_cv_pipeline(self, data3, pretext, tmp_path):
        head = tmp_path / "head"
        assert run("train-downstream", "--dataset", data3, "--out", head,
                   "--checkpoint", pretext / "final.pt", *TINY) == 0
        rep = json.loads((head / "reports" / "epoch_001.json").read_text())
        assert rep["metric"] == "accuracy" and rep["protocol"] == "CV" and rep["n_samples"] == 4
        ev = tmp_path / "eval"
        assert run("eval", "--dataset", data3, "--out", ev, "--head", head / "head.pt",
                   "--checkpoint", pretext / "final.pt", "--diagnostics", *TINY) == 0
        report = json.loads((ev / "report.json").read_text())
        assert set(report["extra"]["diagnostics"]) == {"cross_view_invariance", "equivariance_residual"}

    def test_scratch_mode(self, data3, tmp_path):
        assert run("train-downstream", "--dataset", data3, "--out", tmp_path / "s", "--mode", "scratch", *TINY) == 0

    def test_cv_needs_test_view(self, pretext, tmp_path):
        two = tmp_path / "two"
        assert run("generate", "--out", two, *TINY) == 0
        assert run("train-downstream", "--dataset", two, "--out", tmp_path / "h",
                   "--checkpoint", pretext / "final.pt", *TINY) == 1

    def test_quality_cs_layout(self, pretext, tmp_path):
        q = ["--set", "data.amplitude_levels=5", "--set", "data.n_sequences=20",
             "--set", "downstream.task=score", "--set", "downstream.n_classes=5"]
        assert run("generate", "--out", tmp_path / "q", *TINY, *q) == 0
        assert run("train-downstream", "--dataset", tmp_path / "q", "--out", tmp_path / "qh", "--protocol", "cs",
                   "--checkpoint", pretext / "final.pt", *TINY, *q) == 0
        assert run("eval", "--dataset", tmp_path / "q", "--out", tmp_path / "qe", "--protocol", "cs",
                   "--head", tmp_path / "qh" / "head.pt", *TINY, *q) == 0
        report = json.loads((tmp_path / "qe" / "report.json").read_text())
        assert report["metric"] == "src" and report["protocol"] == "CS"
        layout = report["extra"]["layout"]
        order = ["W-P", "W-S", "SS-P", "SS-S"]
        assert layout[-1] == "Average" and layout[:-1] == [n for n in order if n in layout]
        assert set(layout) == set(report["breakdown"])


class TestSweepAndDiagnose:
    def test_sweep(self, data3, tmp_path):
        assert run("sweep", "--dataset", data3, "--out", tmp_path / "sw", "--sizes", "2,4", "--folds", 1,
                   "--set", "sweep.epochs=1", *TINY) == 0
        doc = json.loads((tmp_path / "sw" / "sweep.json").read_text())
        assert doc["sizes"] == [2, 4] and doc["argmin"] in (2, 4)
        assert "argmin N" in (tmp_path / "sw" / "sweep.md").read_text()

    def test_diagnose(self, data3, pretext, tmp_path):
        assert run("diagnose", "--dataset", data3, "--out", tmp_path / "dg", "--checkpoint", pretext / "final.pt",
                   *TINY) == 0
        doc = json.loads((tmp_path / "dg" / "diagnostics.json").read_text())
        assert {"cross_view_invariance", "untrained_cross_view_invariance"} <= set(doc)
