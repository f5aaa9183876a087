"""Label trees and their matrices.

Run with ``python3 demos/01_label_tree.py``.
"""
import numpy as np

from saltseg.harness import t1_tree
from saltseg.tree import insert_other_children, path_to_root, tree_matrices

# A label tree is a list of (id, parent, name) rows.  The demo tree has a
# thorax nested inside the body and two lung lobes nested inside the lungs.
tree = t1_tree()
for node in tree.topological_order:
    print("  " * int(tree.depth[node]) + tree.name[node])

# A[i, j] = 1 when i is the parent of j.
# R marks every ancestor of a node (including itself) in its column.
# S marks pairs of nodes that share a parent.
m = tree_matrices(tree)
np.set_printoptions(linewidth=120)
print("\nreachability R (column = path from root):\n", m.R)
print("\nsibling S:\n", m.S)

# The path of lung_left, read off R, matches the parent walk.
lung_left = tree.index("lung_left")
print("\npath to lung_left:", [tree.name[v] for v in path_to_root(tree, lung_left)])
print("nonzero rows of R[:, lung_left]:", np.flatnonzero(m.R[:, lung_left]).tolist())

# Give an internal node an explicit "other" leaf so its children can
# cover everything inside it.
extended = insert_other_children(tree, [tree.index("lungs")])
print("\nafter insert_other_children:", extended.name[-1], "under", extended.name[extended.parent[-1]])
