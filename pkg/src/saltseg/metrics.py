"""Hierarchical Dice via bit signatures, surface Dice and bootstrap CIs.

Every non-root sibling group owns a small bit field wide enough to hold
``1..m`` (the 1-based position of a child among ``m`` siblings, 0 meaning
"not in this subtree").  A node's *encoding* writes the child position
taken at each step of its root path; its *mask* is all ones over exactly
those fields.  A voxel labelled ``v`` then lies under class ``c`` iff::

    encoding[v] & mask[c] == encoding[c]

Codes up to 64 bits are compared as single ``uint64`` words, wider codes
byte by byte with an ``all`` reduction.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .tree import LabelTree, descendant_leaf_mask

__all__ = [
    "BitCodec",
    "ConfusionCounts",
    "ScoreSet",
    "build_bit_codec",
    "membership",
    "hierarchical_confusion",
    "dice",
    "surface_voxels",
    "nsd",
    "bootstrap_ci",
    "evaluate_pair",
    "write_report_csv",
    "aggregate_report",
]


@dataclass(frozen=True)
class BitCodec:
    bytes_per_code: int
    encoding: np.ndarray  # (N, B) uint8
    mask: np.ndarray  # (N, B) uint8
    field_offset: dict[int, int]  # parent id -> first bit of its children's field
    field_width: dict[int, int]

    @property
    def total_bits(self) -> int:
        return sum(self.field_width.values())

    @property
    def node_count(self) -> int:
        return self.encoding.shape[0]

    def words(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Encoding and mask packed into ``uint64`` words, or None if B > 8."""
        if self.bytes_per_code > 8:
            return None
        pad = np.zeros((self.node_count, 8), dtype=np.uint8)
        enc = pad.copy()
        msk = pad.copy()
        enc[:, : self.bytes_per_code] = self.encoding
        msk[:, : self.bytes_per_code] = self.mask
        return enc.view("<u8").ravel(), msk.view("<u8").ravel()


def _set_bits(row: np.ndarray, offset: int, width: int, value: int) -> None:
    for b in range(width):
        if (value >> b) & 1:
            bit = offset + b
            row[bit // 8] |= np.uint8(1 << (bit % 8))


def build_bit_codec(tree: LabelTree) -> BitCodec:
    offsets: dict[int, int] = {}
    widths: dict[int, int] = {}
    bit = 0
    for node in range(tree.node_count):
        m = len(tree.children[node])
        if m:
            width = max(1, math.ceil(math.log2(m + 1)))
            offsets[node] = bit
            widths[node] = width
            bit += width
    nbytes = max(1, math.ceil(bit / 8))
    enc = np.zeros((tree.node_count, nbytes), dtype=np.uint8)
    msk = np.zeros((tree.node_count, nbytes), dtype=np.uint8)
    for node in tree.topological_order[1:]:
        par = tree.parent[node]
        enc[node] = enc[par]
        msk[node] = msk[par]
        position = tree.children[par].index(node) + 1
        _set_bits(enc[node], offsets[par], widths[par], position)
        _set_bits(msk[node], offsets[par], widths[par], (1 << widths[par]) - 1)
    return BitCodec(nbytes, enc, msk, offsets, widths)


def membership(labels, codec: BitCodec, c: int) -> np.ndarray:
    """Boolean volume: voxel label lies at or under class ``c``."""
    labels = np.asarray(labels)
    if not 0 <= c < codec.node_count:
        raise IndexError(f"class id {c} out of range for {codec.node_count} nodes")
    packed = codec.words()
    if packed is not None:
        enc, msk = packed
        return (enc[labels] & msk[c]) == enc[c]
    bits = codec.encoding[labels] & codec.mask[c]
    return np.all(bits == codec.encoding[c], axis=-1)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int


def hierarchical_confusion(gt, pred, codec: BitCodec, c: int) -> ConfusionCounts:
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"ground truth shape {gt.shape} != prediction shape {pred.shape}")
    y = membership(gt, codec, c)
    yhat = membership(pred, codec, c)
    return ConfusionCounts(
        tp=int(np.count_nonzero(yhat & y)),
        fp=int(np.count_nonzero(yhat & ~y)),
        fn=int(np.count_nonzero(~yhat & y)),
    )


def dice(counts: ConfusionCounts) -> float:
    """``2 TP / (2 TP + FP + FN)``; 1.0 when the class is absent from both."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2.0 * counts.tp / denom


def surface_voxels(mask) -> np.ndarray:
    """Foreground voxels with at least one face neighbour outside the mask.

    Voxels beyond the array border count as background.
    """
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(mask.ndim, 1), border_value=0)
    return mask & ~interior


def _sq_dist(a: np.ndarray, b: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    d = (a - b) * spacing
    return np.sum(d * d, axis=-1)


def _within(src: np.ndarray, dst_surface: np.ndarray, spacing: np.ndarray, tau: float) -> int:
    """Count surface points of ``src`` within ``tau`` mm of ``dst_surface``.

    The distance transform only finds the nearest target voxel; the distance
    itself is recomputed in float64 so the threshold test is reproducible.
    """
    _, nearest = ndimage.distance_transform_edt(~dst_surface, sampling=spacing, return_indices=True)
    pts = np.argwhere(src)
    near = nearest[(slice(None), *pts.T)].T
    return int(np.count_nonzero(_sq_dist(pts.astype(np.float64), near.astype(np.float64), spacing) <= tau * tau))


def nsd(gt_mask, pred_mask, spacing=(1.0, 1.0, 1.0), tau: float = 3.0) -> float:
    """Normalised surface Dice at tolerance ``tau`` (mm)."""
    gt_mask = np.asarray(gt_mask, dtype=bool)
    pred_mask = np.asarray(pred_mask, dtype=bool)
    if gt_mask.shape != pred_mask.shape:
        raise ValueError(f"mask shapes differ: {gt_mask.shape} vs {pred_mask.shape}")
    spacing = np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (gt_mask.ndim,) or np.any(spacing <= 0):
        raise ValueError(f"spacing must be {gt_mask.ndim} positive values, got {spacing.tolist()}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    s_gt = surface_voxels(gt_mask)
    s_pred = surface_voxels(pred_mask)
    n_gt = int(s_gt.sum())
    n_pred = int(s_pred.sum())
    if n_gt == 0 and n_pred == 0:
        return 1.0
    if n_gt == 0 or n_pred == 0:
        return 0.0
    hits = _within(s_gt, s_pred, spacing, tau) + _within(s_pred, s_gt, spacing, tau)
    return hits / (n_gt + n_pred)


def bootstrap_ci(scores, iterations: int = 1000, seed: int = 0, alpha: float = 0.05) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean.

    Resampling indices come from ``numpy.random.default_rng(seed)`` (PCG64),
    drawn as one ``(iterations, n)`` block so results are reproducible.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("bootstrap_ci needs at least one score")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, scores.size, size=(iterations, scores.size))
    means = scores[idx].mean(axis=1)
    lo, hi = np.percentile(means, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    # percentiles of resample means can drift past the data by rounding
    lo = min(max(float(lo), float(scores.min())), float(scores.max()))
    hi = min(max(float(hi), float(scores.min())), float(scores.max()))
    return lo, hi


@dataclass
class ScoreSet:
    """Per-class Dice and NSD for one volume pair."""

    volume: str
    classes: list[int]
    class_names: list[str]
    dice: list[float]
    nsd: list[float]
    spacing: tuple[float, float, float]
    meta: dict = field(default_factory=dict)

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice)) if self.dice else float("nan")

    @property
    def mean_nsd(self) -> float:
        return float(np.mean(self.nsd)) if self.nsd else float("nan")


def evaluate_pair(gt, pred, tree: LabelTree, classes, spacing=(1.5, 1.5, 1.5), tau: float = 3.0,
                  volume: str = "0", codec: BitCodec | None = None) -> ScoreSet:
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"ground truth shape {gt.shape} != prediction shape {pred.shape}")
    codec = codec or build_bit_codec(tree)
    ids = [tree.resolve(c) for c in classes]
    dices, nsds = [], []
    for c in ids:
        dices.append(dice(hierarchical_confusion(gt, pred, codec, c)))
        nsds.append(nsd(descendant_leaf_mask(gt, tree, c), descendant_leaf_mask(pred, tree, c), spacing, tau))
    return ScoreSet(volume, ids, [tree.name[c] for c in ids], dices, nsds, tuple(float(s) for s in spacing))


def write_report_csv(scores: list[ScoreSet], fh=None) -> str:
    """Rows ``volume,class,dice,nsd``; returns the text and writes it to ``fh`` if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["volume", "class", "dice", "nsd"])
    for s in scores:
        for name, d, n in zip(s.class_names, s.dice, s.nsd):
            w.writerow([s.volume, name, repr(float(d)), repr(float(n))])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def aggregate_report(scores: list[ScoreSet], iterations: int = 1000, seed: int = 0) -> dict:
    """Per-class means, macro means and bootstrap CIs over volumes.

    The macro mean averages the per-volume class means; CIs resample volumes.
    """
    if not scores:
        raise ValueError("no scores to aggregate")
    names = scores[0].class_names
    per_class = {}
    for j, name in enumerate(names):
        d = [s.dice[j] for s in scores]
        n = [s.nsd[j] for s in scores]
        per_class[name] = {
            "dice_mean": float(np.mean(d)),
            "dice_ci": list(bootstrap_ci(d, iterations, seed)),
            "nsd_mean": float(np.mean(n)),
            "nsd_ci": list(bootstrap_ci(n, iterations, seed)),
        }
    vol_dice = [s.mean_dice for s in scores]
    vol_nsd = [s.mean_nsd for s in scores]
    return {
        "volumes": [s.volume for s in scores],
        "classes": names,
        "aggregation": "macro",
        "bootstrap": {"iterations": iterations, "seed": seed, "percentiles": [2.5, 97.5]},
        "per_class": per_class,
        "macro_dice": float(np.mean(vol_dice)),
        "macro_dice_ci": list(bootstrap_ci(vol_dice, iterations, seed)),
        "macro_nsd": float(np.mean(vol_nsd)),
        "macro_nsd_ci": list(bootstrap_ci(vol_nsd, iterations, seed)),
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
