"""Command-line interface: exit codes, error lines and an end-to-end chain."""
import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from spdvae import checkpoint, dataio
from spdvae.cli import main

TINY = ["--set", "latent_dim=4", "--set", "encoder_dims=[8,8,4,8,8]",
        "--set", "decoder_dims=[8,8,4,8,8]", "--set", "epochs=3", "--set", "batch_size=16"]


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "synth"
    assert main(["synth-data", "--subjects", "3", "--trials", "30", "--dim", "4",
                 "--seed", "2", "--out", str(out)]) == 0
    return out


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    line = error_line(capsys)
    assert line["error"] == "usage" and line["exit_code"] == 2


def test_unknown_flag_is_usage_error(capsys):
    assert main(["train", "--class", "0", "--bogus"]) == 2
    assert "unrecognized" in error_line(capsys)["message"]


def test_missing_data_key_is_usage_error(capsys):
    assert main(["evaluate"]) == 2
    assert error_line(capsys)["message"] == "missing config key: data"


def test_unknown_override_key(capsys):
    assert main(["evaluate", "--set", "epoch=3"]) == 2
    assert "unknown config key: epoch" in error_line(capsys)["message"]


def test_runtime_error_exits_one(tmp_path, capsys):
    assert main(["evaluate", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    line = error_line(capsys)
    assert line["error"] == "ContainerError" and line["exit_code"] == 1


def test_bad_class_index(data, tmp_path, capsys):
    assert main(["train", "--data", str(data), "--class", "5", "--out", str(tmp_path / "m")]) == 2


def test_config_file_with_flag_precedence(data, tmp_path, capsys):
    conf = tmp_path / "run.toml"
    conf.write_text(f'data = "{tmp_path / "nowhere"}"\nscramble_permutations = 2\n'
                    'classifiers = ["mdm"]\n')
    out = tmp_path / "scr.json"
    rc = main(["scramble-check", "--config", str(conf), "--data", str(data), "--subject", "2",
               "--out", str(out)])
    assert rc == 0
    res = json.loads(out.read_text())
    assert res["test_subject"] == 2
    assert list(res["classifiers"]) == ["mdm"]
    assert len(res["classifiers"]["mdm"]["scrambled"]) == 2


def test_train_generate_fidelity_export_chain(data, tmp_path):
    model = tmp_path / "m0.ckpt"
    curve = tmp_path / "curve.csv"
    assert main(["train", "--data", str(data), "--class", "0", "--holdout", "1",
                 "--out", str(model), "--curve", str(curve), *TINY]) == 0
    _, header = checkpoint.load_checkpoint(model)
    assert header["hyperparameters"]["holdout"] == 1 and header["hyperparameters"]["epochs"] == 3
    with open(curve) as fh:
        assert len(list(csv.DictReader(fh))) == 3

    prior = tmp_path / "prior"
    assert main(["generate", "--model", str(model), "--mode", "prior", "--set", "prior_count=50",
                 "--out", str(prior)]) == 0
    ds = dataio.read_covariances(prior)
    assert ds.matrices.shape == (50, 4, 4)
    assert np.all(np.linalg.eigvalsh(ds.matrices) > 0)
    assert ds.metadata["provenance"]["checkpoint_sha256"] == checkpoint.checkpoint_hash(model)

    post = tmp_path / "post"
    assert main(["generate", "--model", str(model), "--mode", "posterior", "--data", str(data),
                 "--set", "posterior_ratio=2", "--out", str(post)]) == 0
    assert len(dataio.read_covariances(post)) == 2 * int(np.sum(dataio.read_covariances(data).labels == 0))

    fid = tmp_path / "fid.json"
    assert main(["fidelity", "--real", str(data), "--synthetic", str(prior), "--out", str(fid)]) == 0
    metrics = json.loads(fid.read_text())
    assert set(metrics) >= {"variance_ratio", "diversity_real", "diversity_synthetic"}

    lat = tmp_path / "lat.csv"
    assert main(["export-latents", "--model", str(model), "--data", str(data), "--out", str(lat)]) == 0
    with open(lat) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 90 and set(rows[0]) == {"index", "subject_id", "label", "z0", "z1", "z2", "z3"}


def test_generation_is_reproducible(data, tmp_path):
    model = tmp_path / "m.ckpt"
    assert main(["train", "--data", str(data), "--class", "1", "--out", str(model), *TINY]) == 0
    for name in ("a", "b"):
        assert main(["generate", "--model", str(model), "--set", "prior_count=10", "--set", "seed=4",
                     "--out", str(tmp_path / name)]) == 0
    a = dataio.read_covariances(tmp_path / "a").matrices
    b = dataio.read_covariances(tmp_path / "b").matrices
    assert np.array_equal(a, b)


def test_evaluate_writes_report(data, tmp_path):
    out = tmp_path / "report"
    assert main(["evaluate", "--data", str(data), "--out", str(out), "--no-figures",
                 "--set", "prior_count=20", "--set", "posterior_ratio=1", *TINY]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["bonferroni_threshold"] == pytest.approx(0.05 / 6)
    assert len(report["folds"]) == 3
    assert (out / "table1_fidelity.csv").exists() or list(out.glob("*.csv"))


def test_preprocess_subcommand(tmp_path):
    trials = dataio.write_trials(tmp_path / "raw", dataio.synth_trials(2, 6, 4, 256))
    out = tmp_path / "cov"
    assert main(["preprocess", "--data", str(trials), "--out", str(out)]) == 0
    ds = dataio.read_covariances(out)
    assert ds.matrices.shape == (12, 4, 4)
    assert np.all(np.linalg.eigvalsh(ds.matrices) > 0)


def test_module_entry_point_reports_json_error(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spdvae", "fidelity"], capture_output=True, text=True)
    assert proc.returncode == 2
    line = json.loads(proc.stderr.strip().splitlines()[-1])
    assert line["exit_code"] == 2
