"""Command line: subcommands, configuration layering, artefacts and exit codes."""

import csv
import json

import numpy as np
import pytest

from depthseed.cli import DEFAULTS, EXIT_IO, EXIT_OK, EXIT_USAGE, run
from depthseed.config import load_config
from depthseed.data.formats import load_manifest, load_tensor
from depthseed.models import load_model, load_model_meta

SMALL = ["--widths", "4,6,8,8", "--hidden", "16", "--batch-size", "8"]


def ok(argv):
    code = run([str(a) for a in argv])
    assert code == EXIT_OK, f"{argv} exited {code}"


def metrics(out):
    return [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Synthetic data plus a trained depth and RGB model shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    ok(["synth", "--out", root / "data", "--categories", 3, "--per-class", 6, "--test-per-class", 2,
        "--size", 32, "--seed", 1])
    manifest = root / "data" / "manifest.csv"
    ok(["train", "--out", root / "depth", "--manifest", manifest, "--epochs", 2, *SMALL])
    ok(["train", "--out", root / "rgb", "--manifest", manifest, "--modality", "rgb", "--epochs", 1, *SMALL])
    return root


class TestSynth:
    def test_row_count_and_layout(self, tmp_path):
        ok(["synth", "--out", tmp_path, "--categories", 8, "--per-class", 40, "--test-per-class", 10,
            "--size", 16])
        manifest = load_manifest(tmp_path / "manifest.csv")
        assert len(manifest.records) == 320
        assert len(manifest.split("test")) == 80 and manifest.num_classes == 8
        assert len((tmp_path / "classes.txt").read_text().splitlines()) == 8

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            ok(["synth", "--out", tmp_path / name, "--categories", 2, "--per-class", 3, "--size", 24,
                "--test-per-class", 1])
        for rel in ("manifest.csv", "depth/01_0002.pgm", "rgb/00_0000.ppm", "camera.json"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    @pytest.mark.parametrize("extra", [["--categories", 9], ["--per-class", 2, "--test-per-class", 3]])
    def test_invalid_parameters(self, tmp_path, extra):
        assert run(["synth", "--out", str(tmp_path), *map(str, extra)]) == EXIT_USAGE


class TestConfiguration:
    def test_snapshot_records_resolved_settings(self, tmp_path):
        (tmp_path / "my.cfg").write_text("size=20\nper_class=2\ncategories=3\n")
        ok(["synth", "--out", tmp_path / "o", "--config", tmp_path / "my.cfg", "--per-class", 3,
            "--set", "test_per_class=1", "--set", "categories=2"])
        snap = load_config(tmp_path / "o" / "run.cfg")
        assert snap["size"] == "20"  # file beats default
        assert snap["per_class"] == "3"  # flag beats file
        assert snap["categories"] == "2"  # --set beats everything
        assert snap["seed"] == str(DEFAULTS["synth"]["seed"])
        assert len(load_manifest(tmp_path / "o" / "manifest.csv").records) == 6

    @pytest.mark.parametrize("argv", [[], ["bogus", "--out", "x"], ["train", "--out", "x"],
                                      ["synth", "--out", "x", "--size", "big"]])
    def test_usage_errors(self, tmp_path, argv, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run(argv) == EXIT_USAGE

    def test_bad_set_syntax(self, tmp_path):
        assert run(["synth", "--out", str(tmp_path), "--set", "novalue"]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert run(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "none.cfg")]) == EXIT_IO

    def test_thread_variable_validated(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DEPTHSEED_THREADS", "many")
        assert run(["synth", "--out", str(tmp_path), "--per-class", "1", "--test-per-class", "0",
                    "--categories", "1", "--size", "16"]) == EXIT_USAGE


class TestPipeline:
    def test_train_artefacts(self, workdir):
        out = workdir / "depth"
        assert {"model.dtns", "trainlog.csv", "run.cfg", "metrics.jsonl"} <= {p.name for p in out.iterdir()}
        (record,) = metrics(out)
        assert record["command"] == "train" and record["epochs"] == 2
        assert 0 <= record["test_mean_class_acc"] <= 1
        assert load_model_meta(out / "model.dtns")["modality"] == "depth"
        with open(out / "trainlog.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 2

    def test_encode_hha(self, workdir, tmp_path):
        ok(["encode-hha", "--out", tmp_path, "--manifest", workdir / "data" / "manifest.csv"])
        manifest = load_manifest(tmp_path / "manifest.csv")
        assert len(manifest.records) == 18
        hha = load_tensor(manifest.records[0].depth_path)
        assert hha.shape == (3, 32, 32) and hha.min() >= 0 and hha.max() <= 255

    def test_encode_hha_reports_broken_rows(self, workdir, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        (data / "bad.pgm").write_bytes(b"P5\n2 2\n65535\n\x00")
        (data / "manifest.csv").write_text("rgb_path,depth_path,label,split\n,bad.pgm,0,train\n")
        assert run(["encode-hha", "--out", str(tmp_path / "o"), "--manifest", str(data / "manifest.csv")]) == EXIT_IO
        assert "row" in (tmp_path / "o" / "errors.txt").read_text()

    def test_fine_tune_with_freeze_plan(self, workdir, tmp_path):
        ok(["train", "--out", tmp_path, "--manifest", workdir / "data" / "manifest.csv", "--epochs", 1,
            "--init", workdir / "depth" / "model.dtns", "--strategy", "ft-bottom", "--split", "conv3", *SMALL])
        (record,) = metrics(tmp_path)
        assert record["strategy"] == "ft-bottom" and "conv4" in record["frozen"]
        before = load_model(workdir / "depth" / "model.dtns")
        after = load_model(tmp_path / "model.dtns")
        np.testing.assert_array_equal(before.params["conv4.weight"].data, after.params["conv4.weight"].data)
        assert not np.array_equal(before.params["conv1.weight"].data, after.params["conv1.weight"].data)

    def test_split_required_for_partial_strategies(self, workdir, tmp_path):
        code = run(["train", "--out", str(tmp_path), "--manifest", str(workdir / "data" / "manifest.csv"),
                    "--strategy", "ft-top"])
        assert code == EXIT_USAGE

    @pytest.mark.parametrize("extra, classifier", [([], "softmax"),
                                                   (["--feature-layer", "fc7"], "svm"),
                                                   (["--feature-layer", "fc7", "--wsvm"], "wsvm")])
    def test_eval(self, workdir, tmp_path, extra, classifier):
        ok(["eval", "--out", tmp_path, "--manifest", workdir / "data" / "manifest.csv",
            "--model", workdir / "depth" / "model.dtns", *extra])
        (record,) = metrics(tmp_path)
        assert record["classifier"] == classifier and record["samples"] == 6
        assert 0 <= record["mean_class_acc"] <= 1
        if classifier != "softmax":
            assert record["feature_dim"] == 16
        lines = (tmp_path / "predictions.csv").read_text().splitlines()
        assert lines[0] == "sample_id,label,prediction" and len(lines) == 7

    def test_eval_missing_checkpoint(self, workdir, tmp_path):
        code = run(["eval", "--out", str(tmp_path), "--manifest", str(workdir / "data" / "manifest.csv"),
                    "--model", str(tmp_path / "absent.dtns")])
        assert code == EXIT_IO

    def test_eval_missing_manifest(self, workdir, tmp_path):
        code = run(["eval", "--out", str(tmp_path), "--manifest", str(tmp_path / "absent.csv"),
                    "--model", str(workdir / "depth" / "model.dtns")])
        assert code == EXIT_IO

    def test_rgbd_diagnose_and_export(self, workdir, tmp_path):
        manifest = workdir / "data" / "manifest.csv"
        ok(["train-rgbd", "--out", tmp_path / "f", "--manifest", manifest, "--rgb", workdir / "rgb" / "model.dtns",
            "--depth", workdir / "depth" / "model.dtns", "--epochs", 1, "--hidden", 8, "--batch-size", 8])
        model = tmp_path / "f" / "model.dtns"
        assert metrics(tmp_path / "f")[0]["head_params"] == 8 * 32 + 8 + 3 * 8 + 3
        ok(["eval", "--out", tmp_path / "e", "--manifest", manifest, "--model", model])
        ok(["diagnose", "--out", tmp_path / "d", "--manifest", manifest, "--model", model, "--branch", "rgb"])
        record = metrics(tmp_path / "d")[0]
        assert record["filters"] == 4 and record["samples"] == 12
        assert len((tmp_path / "d" / "profile.csv").read_text().splitlines()) == 5
        ok(["export-filters", "--out", tmp_path / "x", "--model", model])
        assert (tmp_path / "x" / "filters_conv1.ppm").exists()

    def test_export_rejects_non_conv(self, workdir, tmp_path):
        code = run(["export-filters", "--out", str(tmp_path), "--model", str(workdir / "depth" / "model.dtns"),
                    "--layer", "fc7"])
        assert code == 3

    def test_pretrain_then_transfer(self, workdir, tmp_path):
        manifest = workdir / "data" / "manifest.csv"
        ok(["pretrain-wsp", "--out", tmp_path / "w", "--manifest", manifest, "--epochs", 1, "--grid", 3,
            "--patch", 16, "--widths", "4,6,8", "--batch-size", 16])
        assert metrics(tmp_path / "w")[0]["patches"] == 12 * 9
        ok(["train", "--out", tmp_path / "t", "--manifest", manifest, "--init", tmp_path / "w" / "model.dtns",
            "--epochs", 1, *SMALL])
        wsp = load_model(tmp_path / "w" / "model.dtns")
        assert load_model_meta(tmp_path / "t" / "model.dtns")["init"] == "checkpoint"
        assert wsp.params["conv1.weight"].shape == (4, 3, 5, 5)
