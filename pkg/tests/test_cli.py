import csv
import json

import pytest

from pournet import cli, config, io
from pournet.config import Option


def run(out, *argv):
    return cli.main(list(argv) + ["--out", str(out)])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert run(out, "synth", "--suite", "train", "--count", "1", "--seed", "3") == 0
    assert run(out, "synth", "--suite", "holdout", "--count", "1", "--seed", "4") == 0
    assert run(out, "build-dataset", "--snr-grid", "clean,0:20:5", "--clips-per-second", "0.05",
               "--seed", "3") == 0
    assert run(out, "train", "--epochs", "1", "--seed", "3", "--variant", "ap") == 0
    return out


def test_resolution_order(tmp_path):
    opts = (Option("seed", int, 0), Option("lr", float, 1.0), Option("name", str, "a"))
    ini = tmp_path / "c.ini"
    ini.write_text("[common]\nseed = 5\nunrelated = 1\n[train]\nlr = 0.5\n")
    got = config.resolve("train", opts, {"seed": None, "lr": None, "name": "b"}, ini)
    assert got == {"seed": 5, "lr": 0.5, "name": "b"}
    got = config.resolve("train", opts, {"seed": "9"}, ini)
    assert got["seed"] == 9
    ini.write_text("[train]\nbogus = 1\n")
    with pytest.raises(ValueError, match="unknown option"):
        config.resolve("train", opts, {}, ini)


def test_bool_and_choice_conversion():
    assert config.convert(Option("x", bool, False), "yes") is True
    with pytest.raises(ValueError):
        config.convert(Option("x", bool, False), "maybe")
    with pytest.raises(ValueError):
        config.convert(Option("v", str, "mp", choices=("mp", "ap")), "zz")


def test_env_sets_default_root(tmp_path, monkeypatch):
    monkeypatch.setenv(config.ENV_OUT, str(tmp_path / "env"))
    assert cli.main(["pour", "--estimator", "oracle", "--containers", "c2-ceramic",
                     "--episodes", "1"]) == 0
    assert (tmp_path / "env" / "pour" / "results.csv").exists()


def test_synth_manifest_and_resolved_config(workspace):
    d = workspace / "synth" / "train"
    doc = json.loads((d / "manifest.json").read_text())
    assert doc["n_recordings"] == 3 and doc["seed"] == 3
    assert "seed = 3" in (d / "config.ini").read_text()
    ev_suite = json.loads((workspace / "synth" / "holdout" / "manifest.json").read_text())
    assert set(ev_suite["containers"]) == set(doc["containers"])


def test_eval_suite_disjoint(tmp_path):
    assert run(tmp_path, "synth", "--suite", "eval", "--count", "1") == 0
    doc = json.loads((tmp_path / "synth" / "eval" / "manifest.json").read_text())
    assert not set(doc["containers"]) & {"c1-glass", "c2-ceramic", "c3-steel"}


def test_dataset_manifest_lists_grid(workspace):
    _, _, man = io.read_clip_arrays(workspace / "build-dataset" / "train" / "clips.bin")
    assert man["seed"] == 3 and man["snr_grid"] == "clean,0:20:5"
    counts = man["counts"]
    assert set(counts) == {"clean", "0", "5", "10", "15", "20"}
    assert len(set(counts.values())) == 1


def test_clean_grid_applies_no_mixing(workspace):
    assert run(workspace, "build-dataset", "--snr-grid", "clean", "--clips-per-second", "0.05",
               "--name", "clean") == 0
    _, _, man = io.read_clip_arrays(workspace / "build-dataset" / "clean" / "clips.bin")
    assert all(c["snr_db"] is None and c["noise_name"] is None for c in man["clips"])


def test_eval_writes_curves(workspace):
    assert run(workspace, "eval", "--models", "ap", "--snr-grid", "clean,-5",
               "--clips-per-second", "0.05") == 0
    with open(workspace / "eval" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["snr_db"] for r in rows} == {"clean", "-5"}
    assert (workspace / "eval" / "snr_curve.svg").exists()
    assert not (workspace / "eval" / "error.json").exists()


def test_variant_mismatch_is_an_error(workspace):
    assert run(workspace, "eval", "--models", "ap", "--variant", "mp", "--snr-grid", "clean") == 1
    err = json.loads((workspace / "eval" / "error.json").read_text())
    assert "'ap' model" in err["error"]


def test_missing_inputs_report_errors(tmp_path):
    assert run(tmp_path, "train") == 1
    assert "dataset not found" in json.loads((tmp_path / "train" / "mp" / "error.json").read_text())["error"]
    assert run(tmp_path, "build-dataset") == 1
    assert run(tmp_path, "pour", "--containers", "nope") == 1


def test_missing_calibration_names_container(workspace, tmp_path):
    import shutil

    src = workspace / "synth" / "train" / "train-c2-ceramic-000"
    shutil.copytree(src, tmp_path / "b" / src.name)
    shutil.rmtree(tmp_path / "b" / src.name / "calibration")
    assert run(tmp_path, "build-dataset", "--bundles", str(tmp_path / "b")) == 1
    assert "c2-ceramic" in json.loads((tmp_path / "build-dataset" / "train" / "error.json").read_text())["error"]


def test_pour_oracle_within_one_mm(tmp_path):
    assert run(tmp_path, "pour", "--estimator", "oracle", "--containers", "c1-glass,c3-steel",
               "--episodes", "2", "--seed", "1") == 0
    with open(tmp_path / "pour" / "results.csv") as fh:
        errs = [abs(float(r["error_mm"])) for r in csv.DictReader(fh)]
    assert len(errs) == 4 and max(errs) < 1.0


def test_shape_oracle_cylinder(tmp_path):
    assert run(tmp_path, "shape", "--estimator", "oracle", "--trials", "2") == 0
    with open(tmp_path / "shape" / "cylinder" / "errors.csv") as fh:
        errs = [float(r["mean_abs_error_mm"]) for r in csv.DictReader(fh)]
    assert errs and sum(errs) / len(errs) < 0.5


def test_pour_model_runs(workspace):
    assert run(workspace, "pour", "--models", "ap", "--containers", "c2-ceramic", "--episodes", "1") in (0, 2)
    assert (workspace / "pour" / "results.csv").exists()


def test_stale_error_report_removed(tmp_path):
    assert run(tmp_path, "pour", "--containers", "nope") == 1
    assert (tmp_path / "pour" / "error.json").exists()
    assert run(tmp_path, "pour", "--estimator", "oracle", "--containers", "c1-glass", "--episodes", "1") == 0
    assert not (tmp_path / "pour" / "error.json").exists()


def test_noise_bank_export(tmp_path):
    assert run(tmp_path, "noise-bank", "--seconds", "1") == 0
    d = tmp_path / "noise-bank"
    assert (d / "manifest.csv").exists()
    assert run(tmp_path, "noise-bank", "--source", str(d), "--out", str(tmp_path / "again")) == 0
