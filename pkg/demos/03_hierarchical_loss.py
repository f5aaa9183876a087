"""Hybrid cross-entropy + soft Dice loss on multi-hot path targets."""
import numpy as np

from saltseg.harness import t1_tree
from saltseg.loss import encode_targets, hybrid_loss
from saltseg.tree import tree_matrices

tree = t1_tree()
R = tree_matrices(tree).R

# A voxel labelled lung_left is also lungs, thoracic cavity, body and root.
row = encode_targets(np.array([tree.index("lung_left")]), R)[0]
print("target row for lung_left:", [tree.name[v] for v in np.flatnonzero(row)])

labels = np.full((4, 4, 2), tree.index("lung_left"))
labels[:2] = tree.index("background")

# Uniform logits: cross-entropy sums -log P over every node on each path.
report, _ = hybrid_loss(np.zeros((tree.node_count,) + labels.shape), tree, labels)
print(f"\nuniform logits: ce={report.ce:.4f} dice={report.dice:.4f} total={report.total:.4f}")

# A few steps of plain gradient descent on the logits themselves.  The
# total does not reach zero: nodes absent from this volume (mediastinum,
# other_body, ...) have Dice eps / (sum p + eps), close to 0, whatever we do.
logits = np.zeros((tree.node_count,) + labels.shape)
for step in range(201):
    report, grad = hybrid_loss(logits, tree, labels)
    if step % 50 == 0:
        print(f"step {step:3d}: total {report.total:.4f}")
    logits -= 20.0 * grad
