"""Shared fixtures for the model-level tests and the acceptance suite."""
import numpy as np

from spdvae import manifold
from spdvae.vae import RgpVae, VaeConfig, total_loss

LOSS_KEYS = ("manifold", "tangent", "kl", "diversity", "total")
TINY_HIDDEN = (8, 8, 4, 8, 8)


def tiny_model(seed=0, n=3, latent=4, batch=8):
    """N=3, D_lat=4, B=8 model with a fixed batch and fixed noise."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((batch, n, n))
    x = a @ a.transpose(0, 2, 1) / n + 0.5 * np.eye(n)
    ref = manifold.ReferencePoint.from_point(manifold.frechet_mean(x))
    cfg = VaeConfig(n_channels=n, latent_dim=latent, encoder_dims=TINY_HIDDEN, decoder_dims=TINY_HIDDEN)
    model = RgpVae(cfg, ref, seed + 1)
    noise = rng.standard_normal((batch, latent))
    return model, x, noise


def loss_of(model, x, noise, key, beta=0.1, gamma=0.035):
    losses, _ = model.forward_losses(x, noise)
    return total_loss(losses, beta, gamma) if key == "total" else losses[key]


def gradient_errors(model, x, noise, key, h=1e-5, floor=1e-3, sample=None, seed=0):
    """Elementwise ``|analytic - central| / max(|analytic|, |central|, floor)``
    over all (or ``sample`` randomly chosen) parameter entries."""
    model.zero_grad()
    loss_of(model, x, noise, key).backward()
    entries = [(p, i) for p in model.parameters() for i in np.ndindex(p.data.shape)]
    if sample is not None and sample < len(entries):
        pick = np.random.default_rng(seed).choice(len(entries), sample, replace=False)
        entries = [entries[j] for j in pick]
    errs = []
    for p, i in entries:
        analytic = 0.0 if p.grad is None else p.grad[i]
        old = p.data[i]
        p.data[i] = old + h
        up = float(loss_of(model, x, noise, key).data)
        p.data[i] = old - h
        down = float(loss_of(model, x, noise, key).data)
        p.data[i] = old
        num = (up - down) / (2 * h)
        errs.append(abs(analytic - num) / max(abs(analytic), abs(num), floor))
    return np.array(errs)


ACCEPTANCE = []


def record(criterion, passed, detail, status=None):
    """Log one acceptance line for the terminal summary and echo it."""
    status = status or ("PASS" if passed else "FAIL")
    line = f"{status} {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed
