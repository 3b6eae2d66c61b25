"""Reconstruction and adversarial losses with their gradients.

Each ``*_grad`` function returns ``(value, gradient w.r.t. the first
argument)``. Batch variants average per-sample losses over the leading axis.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError


def l1_loss(denoised, target):
    d, t = np.asarray(denoised, dtype=float), np.asarray(target, dtype=float)
    if d.shape != t.shape:
        raise DataError(f"shape mismatch {d.shape} vs {t.shape}")
    return float(np.mean(np.abs(d - t)))


def l1_loss_grad(denoised, target):
    diff = np.asarray(denoised, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def cosine_loss(denoised, target):
    """1 - cos(angle) between the flattened arguments, in [0, 2]."""
    d = np.ravel(np.asarray(denoised, dtype=float))
    t = np.ravel(np.asarray(target, dtype=float))
    if d.shape != t.shape:
        raise DataError(f"shape mismatch {d.shape} vs {t.shape}")
    nd, nt = np.linalg.norm(d), np.linalg.norm(t)
    if nd == 0.0 or nt == 0.0:
        raise DataError("cosine loss of a zero vector")
    return float(1.0 - d @ t / (nd * nt))


def cosine_loss_grad(denoised, target):
    d = np.asarray(denoised, dtype=float)
    t = np.asarray(target, dtype=float)
    nd, nt = np.linalg.norm(d), np.linalg.norm(t)
    if nd == 0.0 or nt == 0.0:
        raise DataError("cosine loss of a zero vector")
    cos = float(np.sum(d * t)) / (nd * nt)
    grad = -(t / (nd * nt) - cos * d / (nd * nd))
    return 1.0 - cos, grad


def batch_cosine_grad(denoised, target):
    """Mean per-sample cosine loss over axis 0, with its gradient."""
    n = denoised.shape[0]
    vals, grads = zip(*(cosine_loss_grad(denoised[i], target[i]) for i in range(n)))
    return float(np.mean(vals)), np.stack(grads) / n


def reconstruction_grad(pred, target, lambda_cos=1.0):
    """L1 + lambda_cos * cosine; returns (l1, cos, gradient of the total)."""
    l1, g1 = l1_loss_grad(pred, target)
    cos, gc = batch_cosine_grad(pred, target)
    return l1, cos, g1 + lambda_cos * gc


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def generator_adv_grad(fake_logits):
    """Non-saturating generator loss mean(-log D(G(x))) and d/dlogits."""
    n = fake_logits.shape[0]
    return float(np.mean(softplus(-fake_logits))), -sigmoid(-fake_logits) / n


def discriminator_grad(real_logits, fake_logits):
    """mean(-log D(real)) + mean(-log(1 - D(fake))) and its logit gradients."""
    n_r, n_f = real_logits.shape[0], fake_logits.shape[0]
    loss = float(np.mean(softplus(-real_logits)) + np.mean(softplus(fake_logits)))
    return loss, -sigmoid(-real_logits) / n_r, sigmoid(fake_logits) / n_f
