"""Synthetic nested-anatomy phantoms and the preprocessing used for training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tree import LabelTree

__all__ = [
    "PhantomError",
    "PhantomConfig",
    "Phantom",
    "generate_phantom",
    "normalize_intensity",
    "random_crop",
    "crop_offsets",
    "T1_TEXT",
    "t1_tree",
]

T1_TEXT = """\
# demo hierarchy: thorax inside the body, lungs split left/right
0\t-\troot
1\t0\tbackground
2\t0\tbody
3\t2\tthoracic_cavity
4\t2\tother_body
5\t3\tlungs
6\t3\tmediastinum
7\t3\tother_thx
8\t5\tlung_left
9\t5\tlung_right
"""


def t1_tree() -> LabelTree:
    from ..tree import parse_tree

    return parse_tree(T1_TEXT)


class PhantomError(ValueError):
    pass


@dataclass
class PhantomConfig:
    dims: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)
    noise_sigma: float = 20.0  # HU
    intensity_range: tuple[float, float] = (-800.0, 800.0)
    ellipsoid_scale: tuple[float, float] = (0.75, 0.85)  # radius / half slab extent


@dataclass
class Phantom:
    intensity: np.ndarray  # float64 HU, [x, y, z]
    labels: np.ndarray  # int64 leaf ids
    spacing: tuple[float, float, float]
    seed: int
    regions: dict[int, np.ndarray] = field(default_factory=dict, repr=False)


def _is_filler(name: str) -> bool:
    return name == "background" or "other" in name


def _bbox(region: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.argwhere(region)
    return idx.min(axis=0), idx.max(axis=0) + 1


def _ellipsoid(grid, lo, hi, rng, scale) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    extent = hi - lo
    center = (lo + hi - 1) / 2 + rng.uniform(-0.04, 0.04, 3) * extent
    radii = np.maximum(extent / 2 * rng.uniform(scale[0], scale[1], 3), 0.75)
    r2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grid, center, radii))
    return r2 <= 1.0


def _split(tree: LabelTree, node: int, region: np.ndarray, grid, rng, scale, out: dict) -> None:
    out[node] = region
    kids = tree.children[node]
    if not kids:
        return
    fillers = [k for k in kids if _is_filler(tree.name[k])]
    placed = [k for k in kids if k not in fillers[:1]]
    lo, hi = _bbox(region)
    axis = int(np.argmax(hi - lo))
    edges = np.linspace(lo[axis], hi[axis], len(placed) + 1)
    taken = np.zeros_like(region)
    for i, k in enumerate(placed):
        slab_lo, slab_hi = lo.copy(), hi.copy()
        slab_lo[axis], slab_hi[axis] = edges[i], edges[i + 1]
        if fillers:
            child = _ellipsoid(grid, slab_lo, slab_hi, rng, scale)
        else:
            # no filler: siblings tile the parent slab by slab
            coord = grid[axis]
            child = coord >= edges[i] if i == len(placed) - 1 else (coord >= edges[i]) & (coord < edges[i + 1])
        child &= region & ~taken
        taken |= child
        _split(tree, k, child, grid, rng, scale, out)
    if fillers:
        _split(tree, fillers[0], region & ~taken, grid, rng, scale, out)


def generate_phantom(tree: LabelTree, seed: int, config: PhantomConfig | None = None) -> Phantom:
    """Nested ellipsoid/slab regions for every node of ``tree``.

    Children named ``background`` or containing ``other`` fill whatever
    their siblings leave of the parent; the rest are ellipsoids placed in
    slabs of the parent's bounding box.  Leaf intensities are evenly spaced
    over ``config.intensity_range`` in leaf id order, plus Gaussian noise.
    """
    config = config or PhantomConfig()
    dims = tuple(int(d) for d in config.dims)
    if len(dims) != 3 or min(dims) < 4:
        raise PhantomError(f"phantom dims must be three values >= 4, got {dims}")
    rng = np.random.default_rng(seed)
    grid = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij")
    regions: dict[int, np.ndarray] = {}
    _split(tree, 0, np.ones(dims, dtype=bool), grid, rng, config.ellipsoid_scale, regions)
    labels = np.zeros(dims, dtype=np.int64)
    for leaf in tree.leaves:
        if not regions[leaf].any():
            raise PhantomError(f"region for {tree.name[leaf]!r} is empty at dims {dims}")
        labels[regions[leaf]] = leaf
    lo, hi = config.intensity_range
    means = np.zeros(tree.node_count)
    means[list(tree.leaves)] = np.linspace(lo, hi, len(tree.leaves))
    intensity = means[labels] + rng.normal(0.0, config.noise_sigma, dims)
    intensity = np.clip(intensity, -1024.0, 1024.0)
    return Phantom(intensity, labels, tuple(float(s) for s in config.spacing), int(seed), regions)


def normalize_intensity(volume) -> np.ndarray:
    """Clamp to [-1024, 1024] HU and map linearly onto [0, 1]."""
    v = np.clip(np.asarray(volume, dtype=np.float64), -1024.0, 1024.0)
    return (v + 1024.0) / 2048.0


def crop_offsets(dims, size, rng) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    size = tuple(int(s) for s in size)
    if len(size) != len(dims) or any(s > d or s < 1 for s, d in zip(size, dims)):
        raise ValueError(f"crop size {size} does not fit volume {dims}")
    return tuple(int(rng.integers(0, d - s + 1)) for d, s in zip(dims, size))


def random_crop(intensity, labels, size, seed_or_rng):
    """Crop both volumes at one uniformly drawn offset.

    Returns ``(intensity_crop, labels_crop, offsets)``.
    """
    intensity = np.asarray(intensity)
    labels = np.asarray(labels)
    if intensity.shape != labels.shape:
        raise ValueError(f"intensity shape {intensity.shape} != labels shape {labels.shape}")
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    off = crop_offsets(intensity.shape, size, rng)
    sl = tuple(slice(o, o + s) for o, s in zip(off, size))
    return intensity[sl], labels[sl], off
