"""Training objectives. All functions are pure in their tensor inputs."""
from __future__ import annotations

import torch
import torch.nn.functional as F

from .config import RECON_MODES, LossWeights
from .errors import ConfigError
from .networks import GeneratedQuad


def identity_loss(logits: torch.Tensor, labels: torch.Tensor, smoothing: float = 0.1):
    """Cross-entropy against label-smoothed targets, averaged over the batch.

    The true class gets ``1 - eps + eps/K`` and every other class ``eps/K``.
    """
    if logits.dim() != 2:
        raise ValueError(f"logits must be [N, K], got {tuple(logits.shape)}")
    n, k = logits.shape
    if k < 2:
        raise ValueError("identity loss needs at least two classes")
    labels = torch.as_tensor(labels, device=logits.device).long()
    if labels.shape != (n,):
        raise ValueError(f"labels must be [N]={n}, got {tuple(labels.shape)}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{int(labels.min())}, {int(labels.max())}]")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    logp = F.log_softmax(logits, dim=1)
    target = torch.full_like(logp, smoothing / k)
    target.scatter_(1, labels[:, None], 1.0 - smoothing + smoothing / k)
    return -(target * logp).sum(dim=1).mean()


def kl_loss(mu: torch.Tensor, logvar: torch.Tensor):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over dims and averaged over the batch."""
    if mu.shape != logvar.shape:
        raise ValueError(f"mu {tuple(mu.shape)} and logvar {tuple(logvar.shape)} differ")
    if not (torch.isfinite(mu).all() and torch.isfinite(logvar).all()):
        raise ValueError("kl_loss received non-finite inputs")
    mu = mu.reshape(mu.shape[0], -1) if mu.dim() > 1 else mu[None]
    logvar = logvar.reshape(mu.shape)
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(dim=1).mean()


def adversarial_loss_D(real_logits: torch.Tensor, fake_logits: torch.Tensor):
    """Discriminator BCE: real patches toward 1, generated patches toward 0.

    Each term is a mean over batch and patch locations; ``fake_logits`` should
    come from detached generator outputs.
    """
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def adversarial_loss_G(fake_logits: torch.Tensor):
    """Non-saturating generator loss, mean of ``-log D`` over patches."""
    return F.softplus(-fake_logits).mean()


def reconstruction_loss(quad: GeneratedQuad, x1: torch.Tensor, x2: torch.Tensor,
                        target_mode: str = "content_source"):
    """Sum over the four swaps of the per-image mean absolute error.

    ``content_source`` compares ``x[i][j]`` with ``x_j`` (the image whose
    content it carries); ``identity_source`` compares it with ``x_i``.
    """
    if target_mode not in RECON_MODES:
        raise ValueError(f"target_mode must be one of {RECON_MODES}, got {target_mode!r}")
    if x1.shape != x2.shape:
        raise ValueError(f"x1 {tuple(x1.shape)} and x2 {tuple(x2.shape)} differ")
    originals = {1: x1, 2: x2}
    total = 0.0
    for (i, j), img in quad.items():
        target = originals[j] if target_mode == "content_source" else originals[i]
        if img.shape != target.shape:
            raise ValueError(f"generated image {i}{j} has shape {tuple(img.shape)}, "
                             f"expected {tuple(target.shape)}")
        total = total + (img - target).abs().mean()
    return total


def target_loss(rec, kl, adv_g, weights: LossWeights = None):
    weights = weights or LossWeights()
    for name in ("rec", "kl", "adv"):
        if getattr(weights, name) < 0:
            raise ConfigError(f"loss weight {name} must be >= 0")
    return weights.rec * rec + weights.kl * kl + weights.adv * adv_g
