"""Raw EEG trials to shrunk spatial covariance matrices.

The chain runs band-pass filtering, microvolt scaling, exponential moving
standardization and oracle approximating shrinkage, in that order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import linalg
from .errors import InvalidInput

MICROVOLTS_PER_VOLT = 1e6


@dataclass
class CovarianceDataset:
    """Parallel sequences of SPD matrices, integer labels and subject IDs."""

    matrices: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray
    class_names: tuple = ("right_hand", "both_feet")
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.matrices.size == 0 and self.matrices.ndim != 3:
            self.matrices = self.matrices.reshape((0, 0, 0))
        self.labels = np.asarray(self.labels, dtype=int)
        self.subject_ids = np.asarray(self.subject_ids, dtype=int)
        if not (len(self.matrices) == len(self.labels) == len(self.subject_ids)):
            raise InvalidInput(
                f"length mismatch: {len(self.matrices)} matrices, "
                f"{len(self.labels)} labels, {len(self.subject_ids)} subject ids"
            )
        self.class_names = tuple(self.class_names)

    def __len__(self):
        return len(self.matrices)

    @property
    def dim(self) -> int:
        return self.matrices.shape[-1]

    @property
    def subjects(self) -> np.ndarray:
        return np.unique(self.subject_ids)

    def subset(self, mask) -> "CovarianceDataset":
        mask = np.asarray(mask)
        return CovarianceDataset(
            self.matrices[mask], self.labels[mask], self.subject_ids[mask],
            self.class_names, dict(self.metadata),
        )

    def with_matrices(self, matrices) -> "CovarianceDataset":
        return CovarianceDataset(matrices, self.labels.copy(), self.subject_ids.copy(),
                                 self.class_names, dict(self.metadata))


def bandpass(data: np.ndarray, fs: float, low_hz: float = 8.0, high_hz: float = 30.0,
             order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis."""
    if fs <= 2 * high_hz:
        raise InvalidInput(f"sampling rate {fs} Hz must exceed twice the upper edge {high_hz} Hz")
    if not 0 < low_hz < high_hz:
        raise InvalidInput(f"invalid band [{low_hz}, {high_hz}] Hz")
    sos = signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, np.asarray(data, dtype=float), axis=-1)


def scale_microvolts(data: np.ndarray) -> np.ndarray:
    return np.asarray(data, dtype=float) * MICROVOLTS_PER_VOLT


def ems_standardize(data: np.ndarray, decay: float = 0.999, eps: float = 1e-4) -> np.ndarray:
    """Exponential moving standardization per channel (rows are channels).

    mean_t = decay * mean_{t-1} + (1 - decay) * x_t
    var_t  = decay * var_{t-1}  + (1 - decay) * (x_t - mean_t)^2
    out_t  = (x_t - mean_t) / sqrt(var_t + eps)

    Both recursions start from the first sample (mean_0 = x_0, var_0 = 0).
    """
    if not 0.0 < decay < 1.0:
        raise InvalidInput(f"decay must lie in (0, 1), got {decay}")
    x = np.atleast_2d(np.asarray(data, dtype=float))
    b, a = [1.0 - decay], [1.0, -decay]
    zi = decay * x[:, :1]
    mean, _ = signal.lfilter(b, a, x, axis=-1, zi=zi)
    centered = x - mean
    var = signal.lfilter(b, a, centered**2, axis=-1)
    out = centered / np.sqrt(var + eps)
    return out.reshape(np.shape(data))


def oas_shrinkage(emp_cov: np.ndarray, n_samples: int) -> float:
    """Shrinkage coefficient of the oracle approximating estimator, in [0, 1]."""
    p = emp_cov.shape[0]
    tr_s2 = float(np.sum(emp_cov * emp_cov))
    tr2_s = float(np.trace(emp_cov)) ** 2
    num = (1.0 - 2.0 / p) * tr_s2 + tr2_s
    den = (n_samples + 1.0 - 2.0 / p) * (tr_s2 - tr2_s / p)
    if den <= 0.0:
        return 1.0
    return float(min(max(num / den, 0.0), 1.0))


def oas_covariance(data: np.ndarray, return_shrinkage: bool = False):
    """Oracle approximating shrinkage covariance of a channels x samples trial.

    The sample covariance uses centered data and 1/T normalization. The
    shrunk estimate ``(1 - rho) S + rho tr(S)/N I`` goes through
    :func:`linalg.ensure_spd` so it always satisfies the eigenvalue floor.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise InvalidInput(f"trial must be 2-D (channels, samples), got shape {x.shape}")
    n_ch, n_t = x.shape
    if n_t < 2:
        raise InvalidInput(f"need at least 2 samples, got {n_t}")
    if not np.any(x):
        raise InvalidInput("trial is identically zero")
    xc = x - x.mean(axis=1, keepdims=True)
    emp = xc @ xc.T / n_t
    # zero variance up to rounding of the centering: full shrinkage
    flat = np.trace(emp) <= 1e-24 * float(np.mean(x * x)) * n_ch
    rho = 1.0 if flat else oas_shrinkage(emp, n_t)
    mu = np.trace(emp) / n_ch
    shrunk = (1.0 - rho) * emp + rho * mu * np.eye(n_ch)
    out = linalg.ensure_spd(shrunk)
    return (out, rho) if return_shrinkage else out


def _process_one(data, fs, band, units, ems_decay, ems_eps):
    x = bandpass(data, fs, *band)
    if units == "V":
        x = scale_microvolts(x)
    x = ems_standardize(x, ems_decay, ems_eps)
    return oas_covariance(x)


def preprocess_pipeline(trials, fs: float, band=(8.0, 30.0), units: str = "V",
                        ems_decay: float = 0.999, ems_eps: float = 1e-4) -> CovarianceDataset:
    """Run the full chain over a :class:`~spdvae.dataio.TrialSet`.

    ``units`` is ``"V"`` for raw volts (scaled by 1e6) or ``"uV"`` for
    trials that are already in microvolts.
    """
    if units not in ("V", "uV"):
        raise InvalidInput(f"units must be 'V' or 'uV', got {units!r}")
    mats = []
    for i, data in enumerate(trials.data):
        try:
            mats.append(_process_one(data, fs, band, units, ems_decay, ems_eps))
        except InvalidInput as exc:
            raise InvalidInput(f"trial {i}: {exc}") from exc
    n = trials.n_channels
    matrices = np.stack(mats) if mats else np.zeros((0, n, n))
    return CovarianceDataset(matrices, trials.labels, trials.subject_ids, trials.class_names)
