"""Dataset containers, the synthetic Wishart oracle and run configuration.

Containers are a JSON manifest next to a little-endian binary payload:

* trial containers store float32 EEG samples, trials concatenated and each
  trial laid out channel-major (``channels x samples``, row-major);
* covariance containers store float64 ``N x N`` matrices, row-major.

A container is addressed by either file; ``data.json`` and ``data.bin``
name the same container.
"""
from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from .errors import InvalidInput
from .preprocess import CovarianceDataset

SCHEMA_VERSION = 1
CLASS_NAMES = ("right_hand", "both_feet")


class ContainerError(InvalidInput):
    """Malformed manifest or payload; the message names the offending field."""


@dataclass
class TrialSet:
    """Pre-epoched multichannel trials with labels and subject IDs."""

    data: list
    labels: np.ndarray
    subject_ids: np.ndarray
    sampling_rate: float
    units: str = "V"
    class_names: tuple = CLASS_NAMES

    def __post_init__(self):
        self.data = [np.asarray(d, dtype=float) for d in self.data]
        self.labels = np.asarray(self.labels, dtype=int)
        self.subject_ids = np.asarray(self.subject_ids, dtype=int)
        if not (len(self.data) == len(self.labels) == len(self.subject_ids)):
            raise InvalidInput("trial, label and subject counts differ")
        chans = {d.shape[0] for d in self.data}
        if len(chans) > 1:
            raise InvalidInput(f"inconsistent channel counts {sorted(chans)}")
        self.class_names = tuple(self.class_names)

    @property
    def n_channels(self) -> int:
        return self.data[0].shape[0] if self.data else 0

    def __len__(self):
        return len(self.data)


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def atomic_write_bytes(path, payload: bytes):
    """Write to a temporary sibling and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _require(manifest: dict, key: str, kind=None):
    if key not in manifest:
        raise ContainerError(f"manifest missing field '{key}'")
    value = manifest[key]
    if kind is not None and not isinstance(value, kind):
        raise ContainerError(f"manifest field '{key}' has type {type(value).__name__}")
    return value


def _read_manifest(path, expected_kind: str) -> tuple[dict, Path]:
    mpath, bpath = _paths(path)
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise ContainerError(f"manifest not found: {mpath}") from None
    except json.JSONDecodeError as exc:
        raise ContainerError(f"manifest is not valid JSON: {exc}") from None
    version = _require(manifest, "schema_version", int)
    if version != SCHEMA_VERSION:
        raise ContainerError(f"manifest field 'schema_version' = {version} not recognized (expected {SCHEMA_VERSION})")
    kind = _require(manifest, "kind", str)
    if kind != expected_kind:
        raise ContainerError(f"manifest field 'kind' = {kind!r}, expected {expected_kind!r}")
    payload = manifest.get("payload")
    if payload:
        bpath = mpath.parent / payload
    return manifest, bpath


def _check_lengths(manifest: dict, n: int, *fields):
    for name in fields:
        value = _require(manifest, name, list)
        if len(value) != n:
            raise ContainerError(f"manifest field '{name}' has {len(value)} entries, 'n_trials' is {n}")


def _read_payload(bpath: Path, expected: int) -> bytes:
    try:
        raw = bpath.read_bytes()
    except FileNotFoundError:
        raise ContainerError(f"payload not found: {bpath}") from None
    if len(raw) != expected:
        raise ContainerError(f"payload size mismatch: expected {expected} bytes, found {len(raw)}")
    return raw


def write_trials(path, trials: TrialSet) -> Path:
    mpath, bpath = _paths(path)
    counts = [int(d.shape[1]) for d in trials.data]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "trials",
        "payload": bpath.name,
        "dtype": "<f4",
        "n_channels": trials.n_channels,
        "sampling_rate": float(trials.sampling_rate),
        "units": trials.units,
        "n_trials": len(trials),
        "sample_counts": counts,
        "subject_ids": trials.subject_ids.tolist(),
        "labels": trials.labels.tolist(),
        "class_names": list(trials.class_names),
    }
    blob = b"".join(np.ascontiguousarray(d, dtype="<f4").tobytes() for d in trials.data)
    atomic_write_bytes(bpath, blob)
    atomic_write_text(mpath, json.dumps(manifest, indent=1))
    return mpath


def read_trials(path) -> TrialSet:
    manifest, bpath = _read_manifest(path, "trials")
    n = _require(manifest, "n_trials", int)
    n_ch = _require(manifest, "n_channels", int)
    fs = _require(manifest, "sampling_rate", (int, float))
    units = _require(manifest, "units", str)
    if units not in ("V", "uV"):
        raise ContainerError(f"manifest field 'units' = {units!r}, expected 'V' or 'uV'")
    _check_lengths(manifest, n, "sample_counts", "subject_ids", "labels")
    counts = manifest["sample_counts"]
    raw = _read_payload(bpath, 4 * n_ch * int(sum(counts)))
    flat = np.frombuffer(raw, dtype="<f4")
    data, offset = [], 0
    for c in counts:
        data.append(flat[offset:offset + n_ch * c].reshape(n_ch, c).astype(float))
        offset += n_ch * c
    class_names = tuple(manifest.get("class_names", CLASS_NAMES))
    labels = np.asarray(manifest["labels"], dtype=int)
    if len(labels) and (labels.min() < 0 or labels.max() >= len(class_names)):
        raise ContainerError("manifest field 'labels' contains unknown class indices")
    return TrialSet(data, labels, manifest["subject_ids"], float(fs), units, class_names)


def write_covariances(path, dataset: CovarianceDataset, provenance: dict | None = None) -> Path:
    mpath, bpath = _paths(path)
    n = len(dataset)
    dim = dataset.dim if n else 0
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "covariance",
        "payload": bpath.name,
        "dtype": "<f8",
        "n_channels": int(dim),
        "n_trials": n,
        "subject_ids": dataset.subject_ids.tolist(),
        "labels": dataset.labels.tolist(),
        "class_names": list(dataset.class_names),
        "provenance": provenance if provenance is not None else dataset.metadata.get("provenance", {}),
    }
    atomic_write_bytes(bpath, np.ascontiguousarray(dataset.matrices, dtype="<f8").tobytes())
    atomic_write_text(mpath, json.dumps(manifest, indent=1, sort_keys=True))
    return mpath


def read_covariances(path) -> CovarianceDataset:
    manifest, bpath = _read_manifest(path, "covariance")
    n = _require(manifest, "n_trials", int)
    dim = _require(manifest, "n_channels", int)
    _check_lengths(manifest, n, "subject_ids", "labels")
    raw = _read_payload(bpath, 8 * n * dim * dim)
    mats = np.frombuffer(raw, dtype="<f8").reshape(n, dim, dim).copy()
    ds = CovarianceDataset(mats, manifest["labels"], manifest["subject_ids"],
                           tuple(manifest.get("class_names", CLASS_NAMES)))
    ds.metadata["provenance"] = manifest.get("provenance", {})
    return ds


# synthetic oracle -------------------------------------------------------------

def _random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    s = (a + a.T) / 2
    return s / np.linalg.norm(s)


def synth_dataset(n_subjects: int = 4, trials_per_subject: int = 200, dim: int = 8,
                  separation: float = 1.0, subject_spread: float = 0.5, n_classes: int = 2,
                  df: int | None = None, seed: int = 0) -> CovarianceDataset:
    """Wishart draws around subject-perturbed class centers.

    Class centers sit on a geodesic through a random base point, spaced so
    that neighbouring classes are ``separation`` apart in AIRM distance.
    Each subject applies a random congruence ``exp(subject_spread * A)``
    (``A`` symmetric, unit Frobenius norm) to all class centers. Trials are
    scaled Wishart matrices with ``df`` degrees of freedom (default
    ``4 * dim``) and mean equal to the subject-class center.
    """
    if dim < 2:
        raise InvalidInput("dim must be at least 2")
    if n_classes < 2 or n_subjects < 1 or trials_per_subject < n_classes:
        raise InvalidInput("need >= 2 classes, >= 1 subject and >= 1 trial per class")
    rng = np.random.default_rng(seed)
    df = 4 * dim if df is None else int(df)
    base = linalg.matrix_exp(0.5 * _random_symmetric(rng, dim) * np.sqrt(dim))
    base_sqrt = linalg.matrix_sqrt(base)
    direction = _random_symmetric(rng, dim)
    offsets = (np.arange(n_classes) - (n_classes - 1) / 2) * separation
    centers = np.stack([base_sqrt @ linalg.matrix_exp(o * direction) @ base_sqrt for o in offsets])
    mats, labels, subjects, subj_centers = [], [], [], []
    for s in range(n_subjects):
        congr = linalg.matrix_exp(subject_spread * _random_symmetric(rng, dim))
        sc = np.stack([congr @ c @ congr.T for c in centers])
        subj_centers.append(sc)
        lab = np.arange(trials_per_subject) % n_classes
        rng.shuffle(lab)
        for k in lab:
            chol = np.linalg.cholesky(linalg.symmetrize(sc[k]))
            x = chol @ rng.standard_normal((dim, df))
            mats.append(x @ x.T / df)
            labels.append(k)
            subjects.append(s + 1)
    mats = linalg.ensure_spd(np.stack(mats))
    names = CLASS_NAMES if n_classes == 2 else tuple(f"class_{k}" for k in range(n_classes))
    ds = CovarianceDataset(mats, labels, subjects, names)
    ds.metadata["ground_truth"] = {
        "class_centers": centers.tolist(),
        "subject_centers": np.stack(subj_centers).tolist(),
        "df": df,
    }
    ds.metadata["provenance"] = {
        "source": "synth_dataset", "seed": seed, "n_subjects": n_subjects,
        "trials_per_subject": trials_per_subject, "dim": dim, "separation": separation,
        "subject_spread": subject_spread, "df": df,
    }
    return ds


def synth_trials(n_subjects: int = 2, trials_per_subject: int = 20, n_channels: int = 13,
                 n_samples: int = 512, fs: float = 256.0, seed: int = 0) -> TrialSet:
    """Raw multichannel noise with a class-dependent 12 Hz spatial source,
    in volts; a stand-in for real recordings when exercising ingestion."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / fs
    patterns = rng.standard_normal((2, n_channels))
    data, labels, subjects = [], [], []
    for s in range(n_subjects):
        mix = np.eye(n_channels) + 0.3 * rng.standard_normal((n_channels, n_channels))
        for i in range(trials_per_subject):
            k = i % 2
            src = np.sin(2 * np.pi * 12 * t + rng.uniform(0, 2 * np.pi))
            x = mix @ rng.standard_normal((n_channels, n_samples)) + 2.0 * np.outer(patterns[k], src)
            data.append(20e-6 * x + 1e-5)
            labels.append(k)
            subjects.append(s + 1)
    return TrialSet(data, labels, subjects, fs, "V")


# run configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    """Every tunable of the pipeline; defaults are the reference settings."""

    # model
    latent_dim: int = 64
    encoder_dims: tuple = (32, 64, 16, 32, 64)
    decoder_dims: tuple = (64, 32, 16, 64, 32)
    leaky_slope: float = 0.01
    geometry: str = "riemannian"
    # training
    batch_size: int = 128
    epochs: int = 100
    lr: float = 1e-4
    weight_decay: float = 1e-6
    gamma: float = 0.035
    beta_start: float = 1e-4
    beta_end: float = 0.2
    clip_norm: float = 1.0
    plateau_patience: int = 20
    plateau_factor: float = 0.5
    # generation
    noise_scale: float = 2.2
    prior_count: int = 5000
    posterior_ratio: int = 5
    # classifiers
    knn_k: int = 5
    svc_c: float = 1.0
    svc_tol: float = 1e-5
    # geometry
    frechet_tol: float = 1e-8
    frechet_max_iter: int = 50
    # preprocessing
    band_low: float = 8.0
    band_high: float = 30.0
    ems_decay: float = 0.999
    ems_eps: float = 1e-4
    # evaluation
    alpha: float = 0.05
    bonferroni_family: int = 6
    scramble_permutations: int = 20
    fidelity_max_pairs: int = 2000
    classifiers: tuple = ("mdm", "knn", "svc")
    generators: tuple = ("prior", "posterior")
    seed: int = 0
    n_jobs: int = 1
    # paths, optional in files; required by some subcommands
    data: str | None = None
    out: str | None = None

    def __post_init__(self):
        for name in ("encoder_dims", "decoder_dims", "classifiers", "generators"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.noise_scale <= 0:
            raise InvalidInput("noise_scale must be positive")
        if self.prior_count < 1 or self.posterior_ratio < 1:
            raise InvalidInput("prior_count and posterior_ratio must be at least 1")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        flat = {}
        for key, value in mapping.items():
            if isinstance(value, dict):
                flat.update(value)  # sections are cosmetic
            else:
                flat[key] = value
        unknown = sorted(set(flat) - set(cls.field_names()))
        if unknown:
            raise InvalidInput(f"unknown config key: {unknown[0]}")
        return cls(**flat)

    def replace(self, **changes) -> "RunConfig":
        unknown = sorted(set(changes) - set(self.field_names()))
        if unknown:
            raise InvalidInput(f"unknown config key: {unknown[0]}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def vae_config(self, n_channels: int):
        from .vae import VaeConfig
        return VaeConfig(n_channels=n_channels, latent_dim=self.latent_dim,
                         encoder_dims=self.encoder_dims, decoder_dims=self.decoder_dims,
                         leaky_slope=self.leaky_slope, geometry=self.geometry)

    def train_config(self):
        from .vae import TrainConfig
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, lr=self.lr,
                           weight_decay=self.weight_decay, gamma=self.gamma,
                           beta_start=self.beta_start, beta_end=self.beta_end,
                           clip_norm=self.clip_norm, plateau_patience=self.plateau_patience,
                           plateau_factor=self.plateau_factor, frechet_tol=self.frechet_tol,
                           frechet_max_iter=self.frechet_max_iter)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a TOML (or JSON) run configuration and apply overrides."""
    mapping: dict = {}
    if path is not None:
        p = Path(path)
        text = p.read_text()
        if p.suffix == ".json":
            mapping = json.loads(text)
        else:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            try:
                mapping = tomllib.loads(text)
            except tomllib.TOMLDecodeError:
                mapping = json.loads(text)
    cfg = RunConfig.from_mapping(mapping)
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as JSON when possible."""
    if "=" not in text:
        raise InvalidInput(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value
