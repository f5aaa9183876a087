import numpy as np
import pytest

from saltseg.harness.phantom import T1_TEXT
from saltseg.tree import LabelTree, parse_tree

# T1 parent table written out by hand; tests compare derived structures to it
T1_PARENTS = (-1, 0, 0, 2, 2, 3, 3, 3, 5, 5)
T1_NAMES = (
    "root", "background", "body", "thoracic_cavity", "other_body",
    "lungs", "mediastinum", "other_thx", "lung_left", "lung_right",
)


@pytest.fixture
def t1() -> LabelTree:
    return parse_tree(T1_TEXT)


@pytest.fixture
def chain() -> LabelTree:
    return LabelTree((-1, 0, 1), ("a", "b", "c"))


def random_tree(rng: np.random.Generator, n: int, max_height: int = 8) -> LabelTree:
    """Random tree with ``n`` nodes and height at most ``max_height``."""
    parent = [-1]
    depth = [0]
    for i in range(1, n):
        while True:
            p = int(rng.integers(0, i))
            if depth[p] < max_height:
                break
        parent.append(p)
        depth.append(depth[p] + 1)
    return LabelTree(tuple(parent), tuple(f"n{i}" for i in range(n)))


def parent_walk(tree: LabelTree, node: int) -> list[int]:
    """Independent root-to-node path used as an oracle."""
    out = []
    while node != -1:
        out.append(node)
        node = tree.parent[node]
    return out[::-1]
