"""Angular-margin softmax and cosine triplet losses with analytic gradients."""

from __future__ import annotations

from typing import Literal

import numpy as np

MarginForm = Literal["additive", "multiplicative"]

# floor on sin(theta) so the margin derivative stays finite at theta = 0
_SIN_FLOOR = 1e-6


def _additive_margin(cos_t: np.ndarray, margin: float):
    """``cos(theta + m)`` extended monotonically past ``theta + m = pi``.

    Returns the target logit (before scaling) and its derivative with respect
    to ``cos(theta)``.
    """
    if margin == 0:
        return cos_t.copy(), np.ones_like(cos_t)
    c = np.clip(cos_t, -1.0, 1.0)
    theta = np.arccos(c)
    sin_t = np.maximum(np.sqrt(np.maximum(1.0 - c * c, 0.0)), _SIN_FLOOR)
    shifted = theta + margin
    k = np.floor(shifted / np.pi)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    value = sign * np.cos(shifted) - 2.0 * k
    deriv = sign * np.sin(shifted) / sin_t
    return value, deriv


def _multiplicative_margin(cos_t: np.ndarray, margin: float):
    """``cos(m * theta)`` with the piecewise monotone extension ``(-1)^k cos(m theta) - 2k``."""
    if margin == 1:
        return cos_t.copy(), np.ones_like(cos_t)
    c = np.clip(cos_t, -1.0, 1.0)
    theta = np.arccos(c)
    sin_t = np.maximum(np.sqrt(np.maximum(1.0 - c * c, 0.0)), _SIN_FLOOR)
    scaled = margin * theta
    k = np.floor(scaled / np.pi)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    value = sign * np.cos(scaled) - 2.0 * k
    deriv = sign * margin * np.sin(scaled) / sin_t
    return value, deriv


def margin_target(cos_t: np.ndarray, margin: float, form: MarginForm = "additive"):
    if form == "additive":
        return _additive_margin(cos_t, margin)
    if form == "multiplicative":
        if margin < 1:
            raise ValueError("multiplicative margin must be >= 1")
        return _multiplicative_margin(cos_t, margin)
    raise ValueError(f"unknown margin form {form!r}")


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logsum - z[np.arange(len(labels)), labels]))


def angular_margin_loss(embeddings: np.ndarray, labels, weights: np.ndarray, scale: float = 30.0,
                        margin: float = 0.3, form: MarginForm = "additive"):
    """Margin softmax over scaled cosines between embeddings and class columns.

    ``embeddings`` is (N, d), ``weights`` is (d, C) with unit columns. Cosines
    are taken as plain dot products, so both inputs are assumed normalised.
    Returns ``(loss, grad_embeddings, grad_weights, logits)``.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n = len(embeddings)
    n_classes = weights.shape[1]
    if labels.shape != (n,):
        raise ValueError("one label per embedding required")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")
    rows = np.arange(n)
    cos = embeddings @ weights
    target, dtarget = margin_target(cos[rows, labels], margin, form)
    logits = scale * cos
    logits[rows, labels] = scale * target

    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    total = ez.sum(axis=1)
    loss = float(np.mean(np.log(total) - z[rows, labels]))

    dlogits = ez / total[:, None]
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    dcos = scale * dlogits
    dcos[rows, labels] *= dtarget
    return loss, dcos @ weights.T, embeddings.T @ dcos, logits


def _cosine_and_grads(a: np.ndarray, b: np.ndarray):
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    cos = (a * b).sum(axis=1, keepdims=True) / (na * nb)
    ga = b / (na * nb) - cos * a / (na * na)
    gb = a / (na * nb) - cos * b / (nb * nb)
    return cos[:, 0], ga, gb


def triplet_loss_cosine(anchor, positive, negative, margin: float = 0.5):
    """Hinged triplet loss on cosine distance ``1 - cos``, averaged over the batch.

    Accepts single vectors or (N, d) batches. Returns
    ``(loss, (grad_anchor, grad_positive, grad_negative))`` shaped like the inputs.
    """
    a = np.asarray(anchor, dtype=np.float64)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    p = np.atleast_2d(np.asarray(positive, dtype=np.float64))
    n_ = np.atleast_2d(np.asarray(negative, dtype=np.float64))
    cos_ap, ga_p, gp = _cosine_and_grads(a, p)
    cos_an, ga_n, gn = _cosine_and_grads(a, n_)
    hinge = (1.0 - cos_ap) - (1.0 - cos_an) + margin
    active = (hinge > 0).astype(np.float64)[:, None] / len(a)
    loss = float(np.maximum(hinge, 0.0).mean())
    grads = (active * (ga_n - ga_p), -active * gp, active * gn)
    if single:
        grads = tuple(g[0] for g in grads)
    return loss, grads
