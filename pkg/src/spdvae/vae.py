"""Geometry-preserving VAE over SPD matrices: model, losses and trainer.

Inputs are projected to the tangent space at a class reference point,
encoded by an MLP into a Gaussian latent, decoded back to tangent vectors
and returned to the manifold by the exponential map. Training minimizes

    total = manifold + tangent + beta * kl + gamma * diversity

with ``beta`` annealed linearly over epochs.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg, manifold
from .errors import InvalidInput, NumericalFailure
from .manifold import ReferencePoint
from .nn import autograd as ag
from .nn.autograd import Tensor, no_grad
from .nn.layers import Block, Linear, Module, Sequential, reparameterize
from .nn.optim import AdamW, ReduceLROnPlateau, clip_gradients

log = logging.getLogger(__name__)

TANGENT_EPS = 1e-6
COV_EPS = 1e-6
GEOMETRIES = ("riemannian", "euclidean")


@dataclass
class VaeConfig:
    n_channels: int
    latent_dim: int = 64
    encoder_dims: tuple = (32, 64, 16, 32, 64)
    decoder_dims: tuple = (64, 32, 16, 64, 32)
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    geometry: str = "riemannian"

    def __post_init__(self):
        self.encoder_dims = tuple(int(d) for d in self.encoder_dims)
        self.decoder_dims = tuple(int(d) for d in self.decoder_dims)
        if self.geometry not in GEOMETRIES:
            raise InvalidInput(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.n_channels < 1:
            raise InvalidInput("n_channels must be positive")

    @property
    def d_spd(self) -> int:
        return self.n_channels * (self.n_channels + 1) // 2


@dataclass
class TrainConfig:
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
    plateau_threshold: float = 1e-4
    frechet_tol: float = 1e-8
    frechet_max_iter: int = 50
    # test hooks: freeze beta, disable terms
    beta_fixed: float | None = None


@dataclass
class LossBreakdown:
    manifold: float
    tangent: float
    kl: float
    diversity: float
    total: float
    beta: float

    def recomposed(self, gamma: float) -> float:
        return self.manifold + self.tangent + self.beta * self.kl + gamma * self.diversity


# losses ---------------------------------------------------------------------

def airm_to(x_inv_sqrt: np.ndarray, x_hat: Tensor) -> Tensor:
    """Per-sample AIRM distance from fixed matrices (given by their inverse
    square roots) to differentiable matrices ``x_hat``."""
    m = ag.symmetrize(Tensor(x_inv_sqrt) @ x_hat @ Tensor(x_inv_sqrt))
    logm = ag.matrix_log(m)
    return ag.sqrt((logm * logm).sum(axis=(-1, -2)))


def loss_manifold(x, x_hat) -> Tensor:
    """Batch mean of AIRM distances (not squared) between ``x`` and ``x_hat``."""
    x = np.asarray(x, dtype=float)
    x_hat = ag.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise InvalidInput(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return airm_to(linalg.matrix_inv_sqrt(x), x_hat).mean()


def loss_tangent(h_decoded, h_tangent) -> Tensor:
    h_decoded = ag.as_tensor(h_decoded)
    h_tangent = np.asarray(ag.as_tensor(h_tangent).data)
    diff = h_decoded - h_tangent
    denom = np.sum(h_tangent**2, axis=1) + TANGENT_EPS
    return ((diff * diff).sum(axis=1) * (1.0 / denom)).mean()


def loss_kl(mu, log_var) -> Tensor:
    mu, log_var = ag.as_tensor(mu), ag.as_tensor(log_var)
    terms = 1.0 + log_var - mu * mu - ag.exp(log_var)
    return (terms.sum(axis=1) * -0.5).mean()


def loss_diversity(h_decoded) -> Tensor:
    """Negative log-determinant of the regularized batch covariance."""
    h = ag.as_tensor(h_decoded)
    b, d = h.shape
    if b < 2:
        raise InvalidInput("diversity loss needs at least 2 rows")
    centered = h - h.mean(axis=0, keepdims=True)
    cov = centered.mT @ centered * (1.0 / (b - 1)) + COV_EPS * np.eye(d)
    return -ag.logdet_spd(cov)


def beta_schedule(epoch: int, total_epochs: int = 100, start: float = 1e-4, end: float = 0.2) -> float:
    if not 0 <= epoch < total_epochs:
        raise InvalidInput(f"epoch {epoch} outside [0, {total_epochs})")
    if total_epochs == 1:
        return end
    return start + (end - start) * epoch / (total_epochs - 1)


# model ----------------------------------------------------------------------

def _mlp(dims, rng, cfg: VaeConfig):
    return Sequential(*[
        Block(a, b, rng, cfg.leaky_slope, cfg.bn_momentum, cfg.bn_eps)
        for a, b in zip(dims[:-1], dims[1:])
    ])


class RgpVae(Module):
    """Encoder/decoder pair attached to a fixed reference point.

    With ``geometry="euclidean"`` the log/exp maps are replaced by the
    identity: raw upper-triangular entries go in and decoded vectors are
    unvectorized as-is.
    """

    def __init__(self, config: VaeConfig, ref: ReferencePoint | None = None, rng=None):
        rng = np.random.default_rng(rng)
        self.config = config
        n = config.n_channels
        self.ref = ref if ref is not None else ReferencePoint.identity(n)
        if self.ref.dim != n:
            raise InvalidInput(f"reference point has dim {self.ref.dim}, expected {n}")
        enc = (config.d_spd,) + config.encoder_dims
        self.encoder = _mlp(enc, rng, config)
        self.mu_head = Linear(enc[-1], config.latent_dim, rng)
        self.logvar_head = Linear(enc[-1], config.latent_dim, rng)
        dec = (config.latent_dim,) + config.decoder_dims
        self.decoder = _mlp(dec, rng, config)
        self.out_head = Linear(dec[-1], config.d_spd, rng)

    @property
    def riemannian(self) -> bool:
        return self.config.geometry == "riemannian"

    # tangent representation
    def tangent_vectors(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.config.n_channels:
            raise InvalidInput(f"expected {self.config.n_channels}x{self.config.n_channels} matrices")
        if not self.riemannian:
            return manifold.vectorize(x)
        return manifold.vectorize(manifold.log_map(x, self.ref))

    def encode(self, h) -> tuple[Tensor, Tensor]:
        feats = self.encoder(ag.as_tensor(h))
        return self.mu_head(feats), self.logvar_head(feats)

    def decode_vectors(self, z) -> Tensor:
        return self.out_head(self.decoder(ag.as_tensor(z)))

    def whitened_output(self, h_decoded: Tensor) -> Tensor:
        """``exp(P^{-1/2} S P^{-1/2})`` with the overflow rescale and
        eigenvalue floor, kept differentiable."""
        n = self.config.n_channels
        s = ag.symmetrize(ag.sym_from_triu(h_decoded, n))
        isq = Tensor(self.ref.inv_sqrt)
        w = ag.symmetrize(isq @ s @ isq)
        lam_max = ag.eigvalsh_extreme(w, "max")
        over = lam_max.data > linalg.EXP_THRESHOLD
        safe = ag.where(over, lam_max, 1.0)
        scale = ag.where(over, linalg.EXP_THRESHOLD * ag.power(safe, -1.0), 1.0)
        e = ag.matrix_exp(w * scale.reshape(scale.shape + (1, 1)))
        lam_min = ag.eigvalsh_extreme(e, "min")
        low = lam_min.data < linalg.EPS
        shift = ag.where(low, linalg.EPS - lam_min, 0.0)
        return e + shift.reshape(shift.shape + (1, 1)) * np.eye(n)

    def to_manifold(self, whitened: np.ndarray) -> np.ndarray:
        sq = self.ref.sqrt
        return linalg.ensure_spd(sq @ whitened @ sq)

    def decode(self, z) -> np.ndarray:
        """Latent codes to matrices (numpy, no graph)."""
        with no_grad():
            h = self.decode_vectors(z)
            if not self.riemannian:
                return manifold.unvectorize(h.data, self.config.n_channels)
            return self.to_manifold(self.whitened_output(h).data)

    def forward_losses(self, x, noise, h_tangent=None, x_white_isqrt=None):
        """Forward pass for a training batch; returns the four loss tensors
        and the decoded matrices."""
        x = np.asarray(x, dtype=float)
        if h_tangent is None:
            h_tangent = self.tangent_vectors(x)
        mu, log_var = self.encode(h_tangent)
        z = reparameterize(mu, log_var, noise)
        h_dec = self.decode_vectors(z)
        if self.riemannian:
            e = self.whitened_output(h_dec)
            if x_white_isqrt is None:
                xw = manifold._whiten(x, self.ref.inv_sqrt)
                x_white_isqrt = linalg.matrix_inv_sqrt(xw)
            l_man = airm_to(x_white_isqrt, e).mean()
            x_hat = self.to_manifold(e.data)
        else:
            l_man = Tensor(0.0)
            x_hat = manifold.unvectorize(h_dec.data, self.config.n_channels)
        losses = {
            "manifold": l_man,
            "tangent": loss_tangent(h_dec, h_tangent),
            "kl": loss_kl(mu, log_var),
            "diversity": loss_diversity(h_dec),
        }
        return losses, x_hat


def total_loss(losses: dict, beta: float, gamma: float) -> Tensor:
    return losses["manifold"] + losses["tangent"] + losses["kl"] * beta + losses["diversity"] * gamma


# training -------------------------------------------------------------------

@dataclass
class TrainResult:
    model: RgpVae
    history: list = field(default_factory=list)
    invalid_reconstructions: int = 0

    def losses(self, key: str) -> np.ndarray:
        return np.array([row[key] for row in self.history])


def train(matrices, vae_config: VaeConfig | None = None, train_config: TrainConfig | None = None,
          seed: int = 0, ref: ReferencePoint | None = None) -> TrainResult:
    """Train a class-specific model on aligned SPD matrices.

    The reference point defaults to the Frechet mean of ``matrices``. Batches
    smaller than two samples are dropped; all others are used.
    """
    x_all = np.asarray(matrices, dtype=float)
    if x_all.ndim != 3 or len(x_all) < 2:
        raise InvalidInput("training needs at least 2 matrices")
    vae_config = vae_config or VaeConfig(n_channels=x_all.shape[-1])
    tc = train_config or TrainConfig()
    rng = np.random.default_rng(seed)
    if ref is None:
        if vae_config.geometry == "riemannian":
            ref = ReferencePoint.from_point(
                manifold.frechet_mean(x_all, tc.frechet_tol, tc.frechet_max_iter))
        else:
            ref = ReferencePoint.identity(x_all.shape[-1])
    model = RgpVae(vae_config, ref, rng)
    model.set_training(True)

    h_all = model.tangent_vectors(x_all)
    isqrt_all = None
    if model.riemannian:
        isqrt_all = linalg.matrix_inv_sqrt(manifold._whiten(x_all, ref.inv_sqrt))

    names = [n for n, _ in model.named_parameters()]
    params = model.parameters()
    opt = AdamW(params, lr=tc.lr, weight_decay=tc.weight_decay, names=names)
    sched = ReduceLROnPlateau(opt, tc.plateau_factor, tc.plateau_patience, tc.plateau_threshold)
    result = TrainResult(model)
    n = len(x_all)
    for epoch in range(tc.epochs):
        beta = tc.beta_fixed if tc.beta_fixed is not None else beta_schedule(
            epoch, tc.epochs, tc.beta_start, tc.beta_end)
        perm = rng.permutation(n)
        sums = dict.fromkeys(("manifold", "tangent", "kl", "diversity", "total"), 0.0)
        n_batches = 0
        lr_used = opt.lr
        for bi, start in enumerate(range(0, n, tc.batch_size)):
            idx = perm[start:start + tc.batch_size]
            if len(idx) < 2:
                continue
            noise = rng.standard_normal((len(idx), vae_config.latent_dim))
            try:
                losses, x_hat = model.forward_losses(
                    x_all[idx], noise, h_all[idx], None if isqrt_all is None else isqrt_all[idx])
                total = total_loss(losses, beta, tc.gamma)
                opt.zero_grad()
                total.backward()
                clip_gradients(params, tc.clip_norm)
                opt.step()
            except NumericalFailure as exc:
                raise NumericalFailure(f"epoch {epoch}, batch {bi}: {exc}") from exc
            if model.riemannian:
                result.invalid_reconstructions += int(np.sum(~linalg.is_spd(x_hat)))
            for key, t in losses.items():
                sums[key] += float(t.data)
            sums["total"] += float(total.data)
            n_batches += 1
        row = {k: v / n_batches for k, v in sums.items()}
        row.update(epoch=epoch, beta=beta, lr=lr_used)
        result.history.append(row)
        sched.step(row["total"])
        log.debug("epoch %d total %.5f manifold %.5f", epoch, row["total"], row["manifold"])
    model.set_training(False)
    return result


def encode_batch(model: RgpVae, x) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode latent parameters for a batch of matrices."""
    mode = model.training
    model.set_training(False)
    try:
        with no_grad():
            mu, log_var = model.encode(model.tangent_vectors(x))
    finally:
        model.set_training(mode)
    return mu.data, log_var.data


def decode_batch(model: RgpVae, z) -> np.ndarray:
    mode = model.training
    model.set_training(False)
    try:
        return model.decode(np.asarray(z, dtype=float))
    finally:
        model.set_training(mode)


def config_dict(vae_config: VaeConfig, train_config: TrainConfig) -> dict:
    return {"vae": asdict(vae_config), "train": asdict(train_config)}
