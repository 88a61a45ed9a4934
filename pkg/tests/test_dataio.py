"""Containers, configuration and checkpoints."""
import json

import numpy as np
import pytest

from spdvae import checkpoint, dataio, manifold
from spdvae.dataio import RunConfig
from spdvae.errors import InvalidInput
from spdvae.vae import RgpVae, VaeConfig

from conftest import random_spd


# trial containers ---------------------------------------------------------------

def test_trial_round_trip_ragged(tmp_path, rng):
    data = [rng.standard_normal((3, n)).astype(np.float32).astype(float) for n in (5, 8, 2)]
    ts = dataio.TrialSet(data, [0, 1, 0], [4, 4, 7], 250.0, "uV")
    path = dataio.write_trials(tmp_path / "t", ts)
    back = dataio.read_trials(path)
    assert back.sampling_rate == 250.0 and back.units == "uV"
    assert back.labels.tolist() == [0, 1, 0] and back.subject_ids.tolist() == [4, 4, 7]
    for a, b in zip(data, back.data):
        assert np.array_equal(a, b)


def test_trial_payload_truncation_reported(tmp_path):
    path = dataio.write_trials(tmp_path / "t", dataio.synth_trials(1, 4, 3, 16))
    bin_path = path.with_suffix(".bin")
    bin_path.write_bytes(bin_path.read_bytes()[:-4])
    with pytest.raises(dataio.ContainerError, match="payload size mismatch"):
        dataio.read_trials(path)


@pytest.mark.parametrize("field,value,match", [
    ("schema_version", 99, "schema_version"),
    ("kind", "covariance", "kind"),
    ("units", "mV", "units"),
    ("labels", [0], "labels"),
    ("labels", [0, 5, 0, 1], "unknown class"),
])
def test_trial_manifest_errors_name_field(tmp_path, field, value, match):
    path = dataio.write_trials(tmp_path / "t", dataio.synth_trials(1, 4, 3, 16))
    manifest = json.loads(path.read_text())
    manifest[field] = value
    path.write_text(json.dumps(manifest))
    with pytest.raises(dataio.ContainerError, match=match):
        dataio.read_trials(path)


def test_missing_manifest_field(tmp_path):
    path = dataio.write_trials(tmp_path / "t", dataio.synth_trials(1, 4, 3, 16))
    manifest = json.loads(path.read_text())
    del manifest["sampling_rate"]
    path.write_text(json.dumps(manifest))
    with pytest.raises(dataio.ContainerError, match="missing field 'sampling_rate'"):
        dataio.read_trials(path)


def test_trialset_consistency_checks():
    with pytest.raises(InvalidInput, match="channel"):
        dataio.TrialSet([np.zeros((3, 4)), np.zeros((2, 4))], [0, 1], [1, 1], 100.0)
    with pytest.raises(InvalidInput, match="counts differ"):
        dataio.TrialSet([np.zeros((3, 4))], [0, 1], [1], 100.0)


# covariance containers ------------------------------------------------------------

def test_covariance_round_trip_is_bit_exact(tmp_path):
    ds = dataio.synth_dataset(2, 10, 4, seed=1)
    path = dataio.write_covariances(tmp_path / "c.json", ds)
    back = dataio.read_covariances(tmp_path / "c.bin")  # either suffix resolves
    assert np.array_equal(back.matrices, ds.matrices)
    assert back.labels.tolist() == ds.labels.tolist()
    assert back.class_names == ds.class_names
    assert back.metadata["provenance"]["seed"] == 1
    assert not list(tmp_path.glob(".*"))  # no temporary files left behind
    assert path.exists()


def test_covariance_truncation(tmp_path):
    path = dataio.write_covariances(tmp_path / "c", dataio.synth_dataset(2, 4, 3, seed=0))
    b = path.with_suffix(".bin")
    b.write_bytes(b.read_bytes()[:100])
    with pytest.raises(dataio.ContainerError, match="payload size mismatch: expected 576 bytes, found 100"):
        dataio.read_covariances(path)


def test_missing_container(tmp_path):
    with pytest.raises(dataio.ContainerError, match="manifest not found"):
        dataio.read_covariances(tmp_path / "nothing")


# synthetic oracle ---------------------------------------------------------------------

def test_synth_dataset_shape_and_balance():
    ds = dataio.synth_dataset(4, 200, 8, seed=0)
    assert ds.matrices.shape == (800, 8, 8)
    assert np.bincount(ds.labels).tolist() == [400, 400]
    assert np.unique(ds.subject_ids).tolist() == [1, 2, 3, 4]
    assert np.all(np.linalg.eigvalsh(ds.matrices) > 0)


def test_synth_class_centers_separated():
    ds = dataio.synth_dataset(2, 4, 5, separation=1.5, seed=2)
    c = np.asarray(ds.metadata["ground_truth"]["class_centers"])
    assert manifold.airm_distance(c[0], c[1]) == pytest.approx(1.5, rel=1e-8)


def test_synth_dataset_deterministic():
    a = dataio.synth_dataset(2, 6, 3, seed=5)
    b = dataio.synth_dataset(2, 6, 3, seed=5)
    assert np.array_equal(a.matrices, b.matrices)


def test_synth_dataset_rejects_bad_arguments():
    with pytest.raises(InvalidInput):
        dataio.synth_dataset(dim=1)


# configuration -----------------------------------------------------------------------------

def test_defaults_are_reference_settings():
    cfg = RunConfig()
    assert cfg.latent_dim == 64
    assert cfg.encoder_dims == (32, 64, 16, 32, 64)
    assert cfg.batch_size == 128 and cfg.epochs == 100
    assert cfg.lr == 1e-4 and cfg.weight_decay == 1e-6
    assert cfg.gamma == 0.035 and cfg.beta_start == 1e-4 and cfg.beta_end == 0.2
    assert cfg.clip_norm == 1.0 and cfg.plateau_patience == 20 and cfg.plateau_factor == 0.5
    assert cfg.noise_scale == 2.2 and cfg.prior_count == 5000 and cfg.posterior_ratio == 5
    assert cfg.knn_k == 5 and cfg.svc_c == 1.0
    assert cfg.band_low == 8.0 and cfg.band_high == 30.0
    assert cfg.ems_decay == 0.999 and cfg.ems_eps == 1e-4
    assert cfg.alpha / cfg.bonferroni_family == pytest.approx(0.05 / 6)
    assert cfg.scramble_permutations == 20


def test_load_config_toml_sections_and_overrides(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('[training]\nepochs = 7\nlr = 0.001\n[generation]\nnoise_scale = 1.5\n')
    cfg = dataio.load_config(p, {"epochs": 9})
    assert cfg.epochs == 9 and cfg.lr == 0.001 and cfg.noise_scale == 1.5


def test_load_config_json(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({"encoder_dims": [4, 4, 4, 4, 4]}))
    assert dataio.load_config(p).encoder_dims == (4, 4, 4, 4, 4)


def test_unknown_config_key_rejected(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("epoch = 3\n")
    with pytest.raises(InvalidInput, match="unknown config key: epoch"):
        dataio.load_config(p)
    with pytest.raises(InvalidInput, match="unknown config key: bogus"):
        RunConfig().replace(bogus=1)


def test_config_invariants():
    with pytest.raises(InvalidInput):
        RunConfig(noise_scale=0.0)
    with pytest.raises(InvalidInput):
        RunConfig(prior_count=0)


@pytest.mark.parametrize("text,expected", [
    ("epochs=5", ("epochs", 5)),
    ("lr=1e-3", ("lr", 1e-3)),
    ("geometry=euclidean", ("geometry", "euclidean")),
    ("classifiers=[\"mdm\"]", ("classifiers", ["mdm"])),
    ("out=a=b", ("out", "a=b")),
])
def test_parse_override(text, expected):
    assert dataio.parse_override(text) == expected


def test_parse_override_requires_equals():
    with pytest.raises(InvalidInput):
        dataio.parse_override("epochs")


def test_config_dict_round_trip():
    cfg = RunConfig(epochs=3, classifiers=("mdm",))
    assert RunConfig.from_mapping(json.loads(json.dumps(cfg.to_dict()))) == cfg


# checkpoints ----------------------------------------------------------------------------

def _model(geometry="riemannian", seed=4):
    rng = np.random.default_rng(seed)
    x = random_spd(rng, 3, size=6)
    cfg = VaeConfig(n_channels=3, latent_dim=4, encoder_dims=(8, 8, 4, 8, 8),
                    decoder_dims=(8, 8, 4, 8, 8), geometry=geometry)
    ref = manifold.ReferencePoint.from_point(manifold.frechet_mean(x)) if geometry == "riemannian" \
        else manifold.ReferencePoint.identity(3)
    model = RgpVae(cfg, ref, rng=seed)
    model.forward_losses(x, rng.standard_normal((6, 4)))  # moves batch-norm running stats
    model.set_training(False)
    return model, x


@pytest.mark.parametrize("geometry", ["riemannian", "euclidean"])
def test_checkpoint_round_trip(tmp_path, geometry):
    model, x = _model(geometry)
    path = checkpoint.save_checkpoint(tmp_path / "m.ckpt", model, {"epochs": 3})
    back, header = checkpoint.load_checkpoint(path)
    assert header["hyperparameters"] == {"epochs": 3}
    assert np.array_equal(back.ref.point, model.ref.point)
    for (na, pa), (nb, pb) in zip(model.named_parameters(), back.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    for (na, ba), (nb, bb) in zip(model.named_buffers(), back.named_buffers()):
        assert na == nb and np.array_equal(ba, bb)
    z = np.random.default_rng(0).standard_normal((5, 4))
    assert np.array_equal(model.decode(z), back.decode(z))


def test_checkpoint_bytes_deterministic(tmp_path):
    model, _ = _model()
    a = checkpoint.save_checkpoint(tmp_path / "a", model)
    b = checkpoint.save_checkpoint(tmp_path / "b", model)
    assert checkpoint.checkpoint_hash(a) == checkpoint.checkpoint_hash(b)
    other, _ = _model(seed=5)
    c = checkpoint.save_checkpoint(tmp_path / "c", other)
    assert checkpoint.checkpoint_hash(a) != checkpoint.checkpoint_hash(c)


def test_checkpoint_corruption_detected(tmp_path):
    model, _ = _model()
    raw = checkpoint.to_bytes(model)
    with pytest.raises(InvalidInput, match="magic"):
        checkpoint.from_bytes(b"X" + raw[1:])
    with pytest.raises(InvalidInput, match="truncated"):
        checkpoint.from_bytes(raw[:-8])
