"""Reachability-encoded targets and the hybrid cross-entropy + Dice loss.

Each voxel label ``y`` becomes the multi-hot row ``R[:, y]``: the node
itself plus all of its ancestors.  Cross-entropy and soft Dice are then
taken against the per-node cumulative probabilities, so a voxel labelled
``lung_left`` also trains ``lungs``, ``thoracic_cavity`` and ``body``.

Shapes: predictions are ``(N, V)`` (or ``(N, *spatial)``, flattened
internally) and targets are ``(V, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activation import backward_logprobs, salt_log_probs, sibling_groups
from .tree import LabelTree, tree_matrices

__all__ = [
    "DICE_EPS",
    "LossReport",
    "encode_targets",
    "cross_entropy",
    "soft_dice",
    "hybrid_loss",
]

DICE_EPS = 1e-5


@dataclass
class LossReport:
    ce: float
    dice: float
    total: float
    node_dice: np.ndarray  # per-node d_n; root entry is nan


def encode_targets(labels, R) -> np.ndarray:
    """Rows of ``R.T`` indexed by the flattened labels: shape ``(V, N)``."""
    R = np.asarray(R)
    labels = np.asarray(labels).reshape(-1)
    n = R.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        bad = labels[(labels < 0) | (labels >= n)][0]
        raise ValueError(f"label {bad} out of range for {n} nodes")
    return R.T[labels].astype(np.uint8)


def _flat(pred) -> np.ndarray:
    pred = np.asarray(pred)
    return pred.reshape(pred.shape[0], -1)


def cross_entropy(cum_log, targets) -> tuple[float, np.ndarray]:
    """Mean over voxels of ``-sum_n y'[v, n] * log P_n(v)``.

    Returns the loss and its gradient w.r.t. ``cum_log`` (same shape).
    Terms are not normalised by path depth, so ancestors get extra weight.
    """
    shape = np.shape(cum_log)
    lp = _flat(cum_log)
    y = np.asarray(targets, dtype=lp.dtype).T
    if y.shape != lp.shape:
        raise ValueError(f"targets shape {y.T.shape} does not match predictions {lp.shape}")
    nvox = lp.shape[1]
    loss = -float(np.sum(y * lp)) / nvox
    grad = (-y / nvox).reshape(shape)
    return loss, grad


def soft_dice(cum, targets, eps: float = DICE_EPS) -> tuple[float, np.ndarray, np.ndarray]:
    """Soft Dice loss over non-root nodes on linear probabilities.

    ``d_n = (2 sum p y + eps) / (sum p + sum y + eps)`` and the loss is
    ``1 - mean(d_n)``.  Returns ``(loss, grad w.r.t. cum, d)`` where ``d``
    has a nan root entry.
    """
    shape = np.shape(cum)
    p = _flat(cum)
    y = np.asarray(targets, dtype=p.dtype).T
    if y.shape != p.shape:
        raise ValueError(f"targets shape {y.T.shape} does not match predictions {p.shape}")
    n = p.shape[0]
    d = np.full(n, np.nan)
    grad = np.zeros_like(p)
    if n == 1:
        return 0.0, grad.reshape(shape), d
    inter = np.sum(p[1:] * y[1:], axis=1)
    denom = np.sum(p[1:], axis=1) + np.sum(y[1:], axis=1) + eps
    numer = 2.0 * inter + eps
    d[1:] = numer / denom
    loss = 1.0 - float(np.mean(d[1:]))
    # d(d_n)/dp = (2 y denom - numer) / denom^2
    dd = (2.0 * y[1:] * denom[:, None] - numer[:, None]) / (denom[:, None] ** 2)
    grad[1:] = -dd / (n - 1)
    return loss, grad.reshape(shape), d


def hybrid_loss(logits, tree: LabelTree, labels, R=None) -> tuple[LossReport, np.ndarray]:
    """Cross-entropy + soft Dice (weights 1:1) and the gradient w.r.t. logits.

    ``logits`` is ``(N, *spatial)`` and ``labels`` has shape ``spatial``.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[1:] != labels.shape:
        raise ValueError(f"logits spatial shape {logits.shape[1:]} != labels shape {labels.shape}")
    if R is None:
        R = tree_matrices(tree).R
    groups = sibling_groups(tree)
    targets = encode_targets(labels, R)
    cum_log = salt_log_probs(logits, tree)
    ce, g_ce = cross_entropy(cum_log, targets)
    cum = np.exp(cum_log)
    dice, g_p, d = soft_dice(cum, targets)
    upstream = g_ce + g_p * cum
    grad = backward_logprobs(logits, tree, upstream, groups)
    return LossReport(ce=ce, dice=dice, total=ce + dice, node_dice=d), grad
