"""Training objectives with exact gradients.

- :func:`cross_entropy` -- located-town classification.
- :func:`supcon_loss` -- supervised contrastive loss; positives are batch
  members from the same town.
- :func:`pretrain_loss` -- ``alpha * CE + (1 - alpha) * SupCon``.
- :func:`mse_loss` -- price regression on the support set.

Each function returns the scalar loss together with its gradient with respect
to the tensor the model produced (logits, embeddings, or predictions).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

LOG_CLAMP = 1e-12
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class PretextLossConfig:
    """Weights of the pre-training objective.

    Parameters
    ----------
    alpha : float
        Weight of cross-entropy; the contrastive term gets ``1 - alpha``.
    tau : float
        Temperature dividing embedding similarities.
    normalize_embeddings : bool
        L2-normalize rows of Z before taking dot products.
    """

    alpha: float = 0.7
    tau: float = 0.1
    normalize_embeddings: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


def cross_entropy(probs: Array, labels: NDArray[np.int64]) -> tuple[float, Array]:
    """Mean negative log-likelihood and its gradient w.r.t. the pre-softmax logits.

    The gradient is ``(probs - onehot) / B``.

    Raises
    ------
    ValueError
        A label lies outside ``[0, N_Y)``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b, n_classes = probs.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if b and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    rows = np.arange(b)
    picked = np.maximum(probs[rows, labels], LOG_CLAMP)
    loss = float(-np.log(picked).mean()) if b else 0.0
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    grad /= max(b, 1)
    return loss, grad


def supcon_loss(
    Z: Array, labels: NDArray[np.int64], cfg: PretextLossConfig = PretextLossConfig()
) -> tuple[float, Array]:
    """Supervised contrastive loss summed over anchors, and dL/dZ.

    For anchor ``i`` with positives ``P(i)`` (same label, excluding ``i``) and
    contrast set ``A(i)`` (every index but ``i``)::

        L_i = -1/|P(i)| * sum_p log( exp(s_ip) / sum_a exp(s_ia) ),  s = z_i . z_j / tau

    Anchors without positives contribute nothing. The total is a sum, not a
    mean, so it grows with the batch size.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    b = Z.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")

    if cfg.normalize_embeddings:
        norms = np.maximum(np.linalg.norm(Z, axis=1, keepdims=True), _NORM_EPS)
        U = Z / norms
    else:
        U = Z

    same = labels[:, None] == labels[None, :]
    not_self = ~np.eye(b, dtype=bool)
    positives = same & not_self
    n_pos = positives.sum(axis=1)
    anchors = n_pos > 0
    if not anchors.any():
        return 0.0, np.zeros_like(Z)

    S = (U @ U.T) / cfg.tau
    masked = np.where(not_self, S, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    exp = np.exp(masked - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    log_denom = row_max + np.log(denom)
    log_prob = S - log_denom

    pos_weight = np.where(anchors, 1.0 / np.maximum(n_pos, 1), 0.0)[:, None]
    loss = float(-(pos_weight * np.where(positives, log_prob, 0.0)).sum())

    # dL/dS_ia = softmax_i(a) - [a in P(i)] / |P(i)| for contributing anchors.
    G = (exp / denom) * anchors[:, None] - positives * pos_weight
    dU = (G + G.T) @ U / cfg.tau

    if cfg.normalize_embeddings:
        dZ = (dU - U * (U * dU).sum(axis=1, keepdims=True)) / norms
    else:
        dZ = dU
    return loss, dZ


class PretrainLoss(NamedTuple):
    total: float
    ce: float
    cl: float
    grad_logits: Array
    grad_z: Array


def pretrain_loss(
    probs: Array, Z: Array, labels: NDArray[np.int64], cfg: PretextLossConfig
) -> PretrainLoss:
    """``alpha * CE + (1 - alpha) * SupCon`` with gradients scaled to match."""
    ce, g_logits = cross_entropy(probs, labels)
    if cfg.alpha < 1.0:
        cl, g_z = supcon_loss(Z, labels, cfg)
    else:
        cl, g_z = 0.0, np.zeros_like(np.asarray(Z, dtype=np.float64))
    a = cfg.alpha
    return PretrainLoss(
        total=a * ce + (1.0 - a) * cl,
        ce=ce,
        cl=cl,
        grad_logits=a * g_logits,
        grad_z=(1.0 - a) * g_z,
    )


def mse_loss(pred: Array, target: Array) -> tuple[float, Array]:
    """Mean squared error and its gradient ``2 (pred - target) / n``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    n = pred.size
    if n < 1:
        raise ValueError("mse_loss needs at least one element")
    diff = pred - target
    return float((diff * diff).sum() / n), 2.0 * diff / n
