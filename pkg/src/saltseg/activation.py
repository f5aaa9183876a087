"""Sibling-group softmax chained along root-to-node paths.

Logit volumes are channel-first arrays of shape ``(N, *spatial)`` with
one channel per tree node, the root included.  Within every sibling
group the logits go through a softmax, giving the probability of a node
given its parent.  The cumulative probability of node ``c`` is the
product of those conditionals along the root-to-``c`` path, so leaf
values sum to one and every internal node equals the sum of its
children.  The root forms a singleton group and is pinned to 1.

Everything is accumulated in log space; call :func:`numpy.exp` on the
result when linear probabilities are needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tree import LabelTree

__all__ = [
    "SiblingGroups",
    "sibling_groups",
    "conditional_log_probs",
    "conditional_probs",
    "cumulative_log_probs",
    "cumulative_probs",
    "salt_log_probs",
    "predict_labels",
    "backward_logprobs",
]


@dataclass(frozen=True)
class SiblingGroups:
    """Partition of node ids into children-of-one-parent sets.

    ``groups[0]`` is the root singleton; the remaining groups follow the
    parent's id order.  ``group_of[n]`` is the index of the group holding
    node ``n``.
    """

    groups: tuple[tuple[int, ...], ...]
    group_of: np.ndarray
    node_count: int


@lru_cache(maxsize=64)
def sibling_groups(tree: LabelTree) -> SiblingGroups:
    groups = [(0,)]
    for node in range(tree.node_count):
        if tree.children[node]:
            groups.append(tuple(tree.children[node]))
    group_of = np.empty(tree.node_count, dtype=np.int64)
    for g, members in enumerate(groups):
        group_of[list(members)] = g
    group_of.setflags(write=False)
    return SiblingGroups(tuple(groups), group_of, tree.node_count)


def _as_logits(logits, groups: SiblingGroups) -> np.ndarray:
    logits = np.asarray(logits)
    if not np.issubdtype(logits.dtype, np.floating):
        logits = logits.astype(np.float64)
    if logits.ndim < 1 or logits.shape[0] != groups.node_count:
        raise ValueError(
            f"logits have {logits.shape[0] if logits.ndim else 0} channels, tree has {groups.node_count} nodes"
        )
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite values")
    return logits


def conditional_log_probs(logits, groups: SiblingGroups) -> np.ndarray:
    """Log-softmax within each sibling group (root channel is 0)."""
    x = _as_logits(logits, groups)
    out = np.empty_like(x)
    for members in groups.groups:
        if len(members) == 1:
            out[members[0]] = 0.0
            continue
        idx = list(members)
        xg = x[idx]
        shifted = xg - xg.max(axis=0)
        out[idx] = shifted - np.log(np.exp(shifted).sum(axis=0))
    return out


def conditional_probs(logits, groups: SiblingGroups) -> np.ndarray:
    """Softmax within each sibling group; singleton groups give exactly 1."""
    return np.exp(conditional_log_probs(logits, groups))


def cumulative_log_probs(cond_log, tree: LabelTree) -> np.ndarray:
    """Sum conditional log probabilities along each root-to-node path."""
    cond_log = np.asarray(cond_log)
    out = np.empty_like(cond_log)
    out[0] = cond_log[0]
    for node in tree.topological_order[1:]:
        out[node] = out[tree.parent[node]] + cond_log[node]
    return out


def cumulative_probs(cond, tree: LabelTree, log: bool = False) -> np.ndarray:
    """Chain linear conditional probabilities ``cond`` into cumulative ones.

    The product is taken in log space; ``log=True`` returns it unexponentiated.
    """
    with np.errstate(divide="ignore"):
        cum = cumulative_log_probs(np.log(cond), tree)
    return cum if log else np.exp(cum)


def salt_log_probs(logits, tree: LabelTree) -> np.ndarray:
    """Logits ``(N, ...)`` to per-node log cumulative probabilities."""
    return cumulative_log_probs(conditional_log_probs(logits, sibling_groups(tree)), tree)


def predict_labels(cum_log, tree: LabelTree) -> np.ndarray:
    """Leaf with the highest cumulative probability per voxel (ties -> lowest id).

    ``cum_log`` holds log cumulative probabilities, shape ``(N, *spatial)``.
    """
    leaves = np.asarray(tree.leaves, dtype=np.int64)
    best = np.argmax(np.asarray(cum_log)[leaves], axis=0)
    return leaves[best]


def backward_logprobs(logits, tree: LabelTree, upstream, groups: SiblingGroups | None = None) -> np.ndarray:
    """Gradient w.r.t. logits given ``upstream = dL/d(log cumulative prob)``.

    The upstream mass reaching a node's conditional is the sum of ``upstream``
    over the node's subtree (every descendant's path passes through it).  Each
    sibling group then applies the softmax Jacobian to that mass, so gradient
    components within one group sum to zero and the root gets none.
    """
    groups = groups or sibling_groups(tree)
    x = _as_logits(logits, groups)
    upstream = np.asarray(upstream, dtype=x.dtype)
    if upstream.shape != x.shape:
        raise ValueError(f"upstream shape {upstream.shape} != logits shape {x.shape}")
    # subtree sums: children before parents
    mass = upstream.copy()
    for node in reversed(tree.topological_order[1:]):
        mass[tree.parent[node]] += mass[node]
    grad = np.zeros_like(x)
    cond_log = conditional_log_probs(x, groups)
    for members in groups.groups:
        if len(members) == 1:
            continue
        idx = list(members)
        q = np.exp(cond_log[idx])
        m = mass[idx]
        grad[idx] = m - q * m.sum(axis=0)
    return grad
