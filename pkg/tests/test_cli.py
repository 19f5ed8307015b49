"""End-to-end tests of the command-line interface (in-process)."""

import json

import numpy as np
import pytest

import segkit.cli as cli
from segkit.cli import main, max_threads, read_config, save_csec_checkpoint
from segkit.csec import CsecConfig, init_csec
from segkit.dataio import load_manifest, read_pnm, write_pnm
from segkit.errors import ConfigInvalidError
from segkit.segnet import predict
from segkit.tensor import Tensor


SPEC = """
seed = 5
n_samples = 12
n_val = 4
image_size = 16, 16
n_classes = 3
"""

TRAIN = """
patch_size = 4
embed_dim = 16
n_blocks = 1
n_heads = 2
n_classes = 3
image_size = 16, 16
epochs = 2
learning_rate = 0.001
seed = 0
"""


@pytest.fixture()
def dataset(tmp_path):
    spec = tmp_path / "spec.cfg"
    spec.write_text(SPEC)
    out = tmp_path / "data"
    assert main(["synth", "--spec", str(spec), "--out", str(out)]) == 0
    return out


@pytest.fixture()
def trained(tmp_path, dataset):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(TRAIN)
    out = tmp_path / "run"
    code = main(["train", "--config", str(cfg), "--data", str(dataset / "manifest.tsv"),
                 "--out", str(out)])
    assert code == 0
    return out


class TestSynth:
    def test_outputs_and_provenance(self, tmp_path, dataset):
        records = load_manifest(dataset / "manifest.tsv")
        assert len(records) == 12
        run = json.loads((dataset / "run.json").read_text())
        assert run["command"] == "synth"
        assert run["config"]["n_samples"] == 12
        assert run["version"]

    def test_determinism(self, tmp_path, dataset):
        spec = tmp_path / "spec.cfg"
        out2 = tmp_path / "data2"
        assert main(["synth", "--spec", str(spec), "--out", str(out2)]) == 0
        a = (dataset / "images" / "s0000.ppm").read_bytes()
        b = (out2 / "images" / "s0000.ppm").read_bytes()
        assert a == b

    def test_missing_out_is_usage_error(self, tmp_path, capsys):
        spec = tmp_path / "spec.cfg"
        spec.write_text(SPEC)
        assert main(["synth", "--spec", str(spec)]) == 2
        capsys.readouterr()

    def test_bad_spec_key(self, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("bogus_key = 3\n")
        assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "x")]) == 2

    def test_malformed_line(self, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("no equals sign here\n")
        assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "x")]) == 2


class TestTrain:
    def test_checkpoint_and_reports(self, trained):
        blob = (trained / "checkpoint.smk").read_bytes()
        assert blob[:4] == b"SMK1"
        metrics = (trained / "metrics.tsv").read_text().strip().splitlines()
        assert len(metrics) == 3  # header + 2 epochs
        run = json.loads((trained / "run.json").read_text())
        assert run["config"]["train"]["epochs"] == 2

    def test_denoise_emits_filter_report(self, tmp_path, dataset):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(TRAIN + "quantile = 0.9\n")
        out = tmp_path / "run_dn"
        code = main(["train", "--config", str(cfg),
                     "--data", str(dataset / "manifest.tsv"),
                     "--out", str(out), "--denoise"])
        assert code == 0
        lines = (out / "filter_report.tsv").read_text().strip().splitlines()
        assert len(lines) == 9  # header + 8 train samples
        assert all(line.split("\t")[2] in ("kept", "dropped") for line in lines[1:])

    def test_divergence_exit_code(self, tmp_path, dataset, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(TRAIN.replace("learning_rate = 0.001", "learning_rate = 1e20"))
        with np.errstate(all="ignore"):
            code = main(["train", "--config", str(cfg),
                         "--data", str(dataset / "manifest.tsv"),
                         "--out", str(tmp_path / "boom")])
        assert code == 4
        assert "error" in capsys.readouterr().err

    def test_missing_config_is_io_error(self, tmp_path, dataset, capsys):
        code = main(["train", "--config", str(tmp_path / "none.cfg"),
                     "--data", str(dataset / "manifest.tsv"),
                     "--out", str(tmp_path / "x")])
        assert code == 3
        capsys.readouterr()

    def test_svg_emission(self, tmp_path, dataset):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(TRAIN)
        out = tmp_path / "run_svg"
        assert main(["train", "--config", str(cfg),
                     "--data", str(dataset / "manifest.tsv"),
                     "--out", str(out), "--svg"]) == 0
        svg = (out / "curves.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_use_csec_flag(self, tmp_path, dataset):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(TRAIN.replace("epochs = 2", "epochs = 1"))
        out = tmp_path / "run_csec"
        assert main(["train", "--config", str(cfg),
                     "--data", str(dataset / "manifest.tsv"),
                     "--out", str(out), "--use-csec"]) == 0
        model = cli.load_model_checkpoint(out / "checkpoint.smk")
        assert model.config.use_csec and model.csec_params is not None


class TestEval:
    def test_report_and_weighting(self, tmp_path, dataset, trained, capsys):
        out = tmp_path / "eval"
        code = main(["eval", "--checkpoint", str(trained / "checkpoint.smk"),
                     "--data", str(dataset / "manifest.tsv"),
                     "--weights", "goose", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "eval_report.json").read_text())
        assert report["weighting"] == "goose"
        assert 0.0 <= report["weighted_miou"] <= 1.0
        assert len(report["class_iou"]) == 3
        assert "weighted mIoU" in capsys.readouterr().out

    def test_uniform_weighting_is_mean(self, tmp_path, dataset, trained):
        out = tmp_path / "eval_u"
        assert main(["eval", "--checkpoint", str(trained / "checkpoint.smk"),
                     "--data", str(dataset / "manifest.tsv"),
                     "--weights", "uniform", "--out", str(out)]) == 0
        report = json.loads((out / "eval_report.json").read_text())
        mean = np.mean(list(report["per_robot_miou"].values()))
        assert abs(report["weighted_miou"] - mean) < 1e-12

    def test_missing_robot_exit_5(self, tmp_path, trained, dataset, capsys):
        # a val manifest with fewer than all four robots under goose weighting
        records = load_manifest(dataset / "manifest.tsv")
        val = [r for r in records if r.split == "val"][:1]
        small = tmp_path / "small.tsv"
        from segkit.dataio import save_manifest
        save_manifest(small, val)
        code = main(["eval", "--checkpoint", str(trained / "checkpoint.smk"),
                     "--data", str(small), "--weights", "goose",
                     "--out", str(tmp_path / "e5")])
        assert code == 5
        capsys.readouterr()


class TestCorrect:
    def test_identity_checkpoint_near_noop(self, tmp_path, dataset, capsys):
        ckpt = tmp_path / "csec.smk"
        save_csec_checkpoint(ckpt, init_csec(CsecConfig(), seed=0), CsecConfig())
        src = next((dataset / "images").iterdir())
        dst = tmp_path / "corrected.ppm"
        code = main(["correct", "--checkpoint", str(ckpt), "--in", str(src),
                     "--out", str(dst), "--reference", str(src)])
        assert code == 0
        original = read_pnm(src).data
        corrected = read_pnm(dst).data
        assert float(np.max(np.abs(original - corrected))) < 1e-3
        assert dst.read_bytes()[:2] == b"P6"
        assert "PSNR improvement" in capsys.readouterr().err

    def test_p5_input_rejected(self, tmp_path, dataset):
        ckpt = tmp_path / "csec.smk"
        save_csec_checkpoint(ckpt, init_csec(CsecConfig(), seed=0), CsecConfig())
        mask = next((dataset / "masks").iterdir())
        code = main(["correct", "--checkpoint", str(ckpt), "--in", str(mask),
                     "--out", str(tmp_path / "o.ppm")])
        assert code == 2


class TestFilter:
    def test_filter_writes_manifest_and_report(self, tmp_path, dataset, trained, capsys):
        model = cli.load_model_checkpoint(trained / "checkpoint.smk")
        pred_dir = tmp_path / "preds"
        pred_dir.mkdir()
        records = load_manifest(dataset / "manifest.tsv")
        for r in records:
            if r.split != "train":
                continue
            img = read_pnm(r.image_path)
            write_pnm(pred_dir / (r.sample_id + ".pgm"),
                      predict(model, img).astype(np.uint8))
        out = tmp_path / "filtered"
        code = main(["filter", "--data", str(dataset / "manifest.tsv"),
                     "--pred", str(pred_dir), "--out", str(out),
                     "--quantile", "0.6"])
        assert code == 0
        capsys.readouterr()
        filtered = load_manifest(out / "manifest.tsv")
        n_train_before = sum(r.split == "train" for r in records)
        n_train_after = sum(r.split == "train" for r in filtered)
        assert n_train_after <= n_train_before
        # non-train records pass through untouched
        assert sum(r.split != "train" for r in filtered) == sum(
            r.split != "train" for r in records)
        report = (out / "filter_report.tsv").read_text().strip().splitlines()[1:]
        statuses = {line.split("\t")[2] for line in report}
        assert statuses <= {"kept", "dropped"}


class TestGradcheck:
    def test_single_module_passes(self, tmp_path, capsys):
        assert main(["gradcheck", "--module", "tensor", "--trials", "3",
                     "--out", str(tmp_path / "gc")]) == 0
        assert (tmp_path / "gc" / "run.json").exists()
        assert "ok" in capsys.readouterr().out

    def test_unknown_module_is_usage_error(self, capsys):
        assert main(["gradcheck", "--module", "bogus"]) == 2
        capsys.readouterr()

    def test_broken_gradient_negative_control(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "run_suite", lambda *a, **k: {"broken_op": 1.0})
        assert main(["gradcheck", "--module", "tensor"]) == 1
        assert "broken_op" in capsys.readouterr().err


class TestConfigPlumbing:
    def test_read_config_comments_and_spacing(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\n a = 1 \nb=two # trailing\n\n")
        assert read_config(p) == {"a": "1", "b": "two"}

    def test_max_threads_env(self, monkeypatch):
        monkeypatch.setenv("SEGKIT_THREADS", "4")
        assert max_threads() == 4
        monkeypatch.setenv("SEGKIT_THREADS", "zero")
        with pytest.raises(ConfigInvalidError):
            max_threads()
        monkeypatch.delenv("SEGKIT_THREADS")
        assert max_threads() == 1
