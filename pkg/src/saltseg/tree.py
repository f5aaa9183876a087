"""Label trees and their matrix representations.

A label tree is stored as a flat parent table: node ``i`` has parent
``parent[i]`` and the root (always id 0) has parent ``-1``.  From that
table we derive the adjacency matrix ``A`` (parent -> child edges), the
reachability matrix ``R`` (column ``j`` marks the root-to-``j`` path)
and the sibling matrix ``S = A.T @ A``.

Tree files are tab separated, one node per line::

    # id  parent  name
    0	-	root
    1	0	background
    2	0	body
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "TreeParseError",
    "LabelTree",
    "TreeMatrices",
    "parse_tree",
    "load_tree",
    "serialize_tree",
    "adjacency_matrix",
    "reachability_matrix",
    "sibling_matrix",
    "tree_matrices",
    "path_to_root",
    "descendant_leaf_mask",
    "split_mask_by_regions",
    "insert_other_children",
]


class TreeParseError(ValueError):
    """Raised for malformed tree documents; ``line`` is 1-based or None."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class LabelTree:
    """Rooted label hierarchy with contiguous node ids ``0..N-1``."""

    parent: tuple[int, ...]
    name: tuple[str, ...]
    root_id: int = field(default=0, init=False)

    def __post_init__(self):
        object.__setattr__(self, "parent", tuple(int(p) for p in self.parent))
        object.__setattr__(self, "name", tuple(str(n) for n in self.name))
        _validate(self.parent, self.name)

    def __eq__(self, other):
        if not isinstance(other, LabelTree):
            return NotImplemented
        return self.parent == other.parent and self.name == other.name

    def __hash__(self):
        return hash((self.parent, self.name))

    def __len__(self):
        return len(self.parent)

    @property
    def node_count(self) -> int:
        return len(self.parent)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in range(self.node_count)]
        for node, par in enumerate(self.parent):
            if par >= 0:
                kids[par].append(node)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def depth(self) -> np.ndarray:
        """Number of edges between the root and each node."""
        depth = np.zeros(self.node_count, dtype=np.int64)
        for node in self.topological_order[1:]:
            depth[node] = depth[self.parent[node]] + 1
        depth.setflags(write=False)
        return depth

    @property
    def height(self) -> int:
        return int(self.depth.max())

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        """Breadth-first order starting at the root; parents precede children."""
        order = [0]
        for node in order:
            order.extend(self.children[node])
        return tuple(order)

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.children) if not k)

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    def index(self, name: str) -> int:
        try:
            return self.name.index(name)
        except ValueError:
            raise KeyError(f"unknown node name {name!r}") from None

    def resolve(self, key: int | str) -> int:
        """Map a node id or name (ids may also be given as digit strings)."""
        if isinstance(key, str):
            if key in self.name:
                return self.name.index(key)
            if key.strip().isdigit():
                key = int(key)
            else:
                raise KeyError(f"unknown node name {key!r}")
        node = int(key)
        if not 0 <= node < self.node_count:
            raise IndexError(f"node id {node} out of range for {self.node_count} nodes")
        return node

    def digest(self) -> bytes:
        """SHA-256 of the canonical serialization; used to pair checkpoints with trees."""
        return hashlib.sha256(serialize_tree(self).encode("utf-8")).digest()

    def __repr__(self):
        return f"LabelTree(N={self.node_count}, H={self.height})"


def _validate(parent: tuple[int, ...], name: tuple[str, ...]) -> None:
    n = len(parent)
    if n == 0:
        raise TreeParseError("tree has no nodes")
    if len(name) != n:
        raise TreeParseError("parent and name tables differ in length")
    roots = [i for i, p in enumerate(parent) if p < 0]
    if roots != [0]:
        if len(roots) > 1:
            raise TreeParseError(f"multiple roots: {roots}")
        raise TreeParseError("node 0 must be the root")
    seen = set()
    for i, nm in enumerate(name):
        if not nm or nm != nm.strip() or "\t" in nm or "\n" in nm:
            raise TreeParseError(f"invalid name {nm!r} for node {i}")
        if nm in seen:
            raise TreeParseError(f"duplicate name {nm!r}")
        seen.add(nm)
    for i, p in enumerate(parent):
        if p >= n:
            raise TreeParseError(f"node {i} has missing parent {p}")
    # every node must reach the root
    state = [0] * n  # 0 unvisited, 1 on stack, 2 reaches root
    state[0] = 2
    for start in range(n):
        trail = []
        node = start
        while state[node] == 0:
            state[node] = 1
            trail.append(node)
            node = parent[node]
        if state[node] == 1:
            raise TreeParseError(f"cycle through node {node}")
        for t in trail:
            state[t] = 2


def parse_tree(text: str) -> LabelTree:
    """Parse the tab separated tree format.

    Node order equals file order and ids must run ``0, 1, 2, ...``.
    Errors carry the offending 1-based line number.
    """
    ids: list[int] = []
    parents: list[int] = []
    names: list[str] = []
    lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        # tabs are canonical; whitespace is accepted when a line has no tab
        fields = line.split("\t") if "\t" in line else line.split(None, 2)
        if len(fields) != 3:
            raise TreeParseError(f"expected 3 tab separated fields, got {len(fields)}", lineno)
        sid, spar, nm = fields
        try:
            node = int(sid)
        except ValueError:
            raise TreeParseError(f"bad node id {sid!r}", lineno) from None
        if node in ids:
            raise TreeParseError(f"duplicate id {node}", lineno)
        if node != len(ids):
            raise TreeParseError(f"non-contiguous id {node}, expected {len(ids)}", lineno)
        if spar == "-":
            par = -1
            if node != 0:
                raise TreeParseError(f"multiple roots: node {node} has no parent", lineno)
        else:
            try:
                par = int(spar)
            except ValueError:
                raise TreeParseError(f"bad parent id {spar!r}", lineno) from None
            if par < 0 or par == node:
                raise TreeParseError(f"invalid parent {par}", lineno)
            if node == 0:
                raise TreeParseError("first node must be the root (parent '-')", lineno)
        if not nm.strip() or nm != nm.strip():
            raise TreeParseError(f"invalid name {nm!r}", lineno)
        if nm in names:
            raise TreeParseError(f"duplicate name {nm!r}", lineno)
        ids.append(node)
        parents.append(par)
        names.append(nm)
        lines.append(lineno)

    if not ids:
        raise TreeParseError("empty tree document")
    for i, p in enumerate(parents):
        if p >= len(ids):
            raise TreeParseError(f"missing parent {p} for node {i}", lines[i])
    try:
        return LabelTree(tuple(parents), tuple(names))
    except TreeParseError as exc:
        # only a cycle can get here; locate its first node
        node = _first_cycle_node(parents)
        raise TreeParseError(str(exc), lines[node] if node is not None else None) from None


def _first_cycle_node(parents: list[int]) -> int | None:
    for start in range(len(parents)):
        seen = set()
        node = start
        while node > 0 and node not in seen:
            seen.add(node)
            node = parents[node]
        if node > 0:
            return node
    return None


def load_tree(path) -> LabelTree:
    with open(path, encoding="utf-8") as fh:
        return parse_tree(fh.read())


def serialize_tree(tree: LabelTree) -> str:
    out = []
    for i, (p, nm) in enumerate(zip(tree.parent, tree.name)):
        out.append(f"{i}\t{'-' if p < 0 else p}\t{nm}\n")
    return "".join(out)


@dataclass(frozen=True)
class TreeMatrices:
    A: np.ndarray
    R: np.ndarray
    S: np.ndarray
    height: int


def adjacency_matrix(tree: LabelTree) -> np.ndarray:
    """``A[i, j] = 1`` iff ``i`` is the parent of ``j``."""
    n = tree.node_count
    A = np.zeros((n, n), dtype=np.int64)
    child = np.arange(1, n)
    A[np.asarray(tree.parent[1:], dtype=np.int64), child] = 1
    return A


def reachability_matrix(A: np.ndarray, H: int) -> np.ndarray:
    """Sum of ``A**v`` for ``v = 0..H`` over the boolean semiring."""
    A = (np.asarray(A) != 0).astype(np.int64)
    n = A.shape[0]
    R = np.eye(n, dtype=np.int64)
    power = np.eye(n, dtype=np.int64)
    for _ in range(H):
        power = np.minimum(power @ A, 1)
        R = np.minimum(R + power, 1)
    return R


def sibling_matrix(A: np.ndarray) -> np.ndarray:
    """``S = A.T @ A``: nodes sharing a parent (diagonal set for non-root nodes)."""
    A = (np.asarray(A) != 0).astype(np.int64)
    return np.minimum(A.T @ A, 1)


def tree_matrices(tree: LabelTree) -> TreeMatrices:
    A = adjacency_matrix(tree)
    return TreeMatrices(A=A, R=reachability_matrix(A, tree.height), S=sibling_matrix(A), height=tree.height)


def path_to_root(tree: LabelTree, node: int) -> list[int]:
    """Node ids from the root down to ``node``, both inclusive."""
    if not 0 <= node < tree.node_count:
        raise IndexError(f"node id {node} out of range for {tree.node_count} nodes")
    path = [node]
    while tree.parent[path[-1]] >= 0:
        path.append(tree.parent[path[-1]])
    return path[::-1]


def _subtree(tree: LabelTree, node: int) -> list[int]:
    out = [node]
    for n in out:
        out.extend(tree.children[n])
    return out


def descendant_leaf_mask(labels: np.ndarray, tree: LabelTree, node: int) -> np.ndarray:
    """Boolean volume marking voxels labelled ``node`` or any of its descendants."""
    if not 0 <= node < tree.node_count:
        raise IndexError(f"node id {node} out of range for {tree.node_count} nodes")
    labels = np.asarray(labels)
    member = np.zeros(tree.node_count, dtype=bool)
    member[_subtree(tree, node)] = True
    return member[labels]


def split_mask_by_regions(mask, regions, mapping, labels=None) -> np.ndarray:
    """Relabel each voxel under ``mask`` with ``mapping[regions[voxel]]``.

    ``labels`` is the volume being edited (defaults to zeros); voxels outside
    the mask keep their label.  Used to break a structure that crosses
    several parent regions into one child per region.
    """
    mask = np.asarray(mask, dtype=bool)
    regions = np.asarray(regions)
    if mask.shape != regions.shape:
        raise ValueError(f"mask shape {mask.shape} != regions shape {regions.shape}")
    if labels is None:
        out = np.zeros(mask.shape, dtype=np.int64)
    else:
        out = np.array(labels, copy=True)
        if out.shape != mask.shape:
            raise ValueError(f"labels shape {out.shape} != mask shape {mask.shape}")
    under = regions[mask]
    present = np.unique(under)
    missing = [int(r) for r in present if int(r) not in mapping]
    if missing:
        raise KeyError(f"unmapped region ids under mask: {missing}")
    if present.size:
        lut_keys = np.array(sorted(mapping), dtype=np.int64)
        lut_vals = np.array([mapping[k] for k in lut_keys], dtype=out.dtype)
        out[mask] = lut_vals[np.searchsorted(lut_keys, under)]
    return out


def insert_other_children(tree: LabelTree, parents) -> LabelTree:
    """Append a ``<parent>_other`` leaf under every listed internal node."""
    parent = list(tree.parent)
    name = list(tree.name)
    for p in sorted(set(int(x) for x in parents)):
        if not 0 <= p < tree.node_count:
            raise IndexError(f"node id {p} out of range for {tree.node_count} nodes")
        if tree.is_leaf(p):
            raise ValueError(f"node {p} ({tree.name[p]}) is a leaf; cannot add an 'other' child")
        parent.append(p)
        name.append(f"{tree.name[p]}_other")
    return LabelTree(tuple(parent), tuple(name))
