"""Tree-structured softmax on a handful of voxels."""
import numpy as np

from saltseg.activation import conditional_probs, predict_labels, salt_log_probs, sibling_groups
from saltseg.harness import t1_tree

tree = t1_tree()
groups = sibling_groups(tree)
print("sibling groups:", [[tree.name[v] for v in g] for g in groups.groups])

# With all-zero logits every sibling group is uniform, so a leaf's
# probability is the product of 1/(group size) along its path.
cum = np.exp(salt_log_probs(np.zeros((tree.node_count, 1)), tree))[:, 0]
for leaf in tree.leaves:
    print(f"  P({tree.name[leaf]:>11}) = {cum[leaf]:.6f}")
print("leaf total:", cum[list(tree.leaves)].sum())

# Random logits for a 4-voxel strip: conditionals are per-group softmaxes,
# cumulative probabilities multiply them down the tree.
rng = np.random.default_rng(0)
logits = rng.normal(scale=2.0, size=(tree.node_count, 4))
q = conditional_probs(logits, groups)
cum = np.exp(salt_log_probs(logits, tree))
lungs, left, right = (tree.index(n) for n in ("lungs", "lung_left", "lung_right"))
print("\nP(lungs)            ", np.round(cum[lungs], 4))
print("P(left) + P(right)  ", np.round(cum[left] + cum[right], 4))
print("q(left | lungs)     ", np.round(q[left], 4))

# Decoding picks the most probable leaf per voxel.
print("\npredicted leaves:", [tree.name[v] for v in predict_labels(np.log(cum), tree)])
