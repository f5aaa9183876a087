"""Conditional-probability softmax over label trees for 3-D segmentation."""

from .activation import (
    backward_logprobs,
    conditional_probs,
    cumulative_probs,
    predict_labels,
    salt_log_probs,
    sibling_groups,
)
from .loss import cross_entropy, encode_targets, hybrid_loss, soft_dice
from .metrics import bootstrap_ci, build_bit_codec, dice, evaluate_pair, hierarchical_confusion, nsd
from .tree import (
    LabelTree,
    TreeParseError,
    adjacency_matrix,
    descendant_leaf_mask,
    insert_other_children,
    load_tree,
    parse_tree,
    path_to_root,
    reachability_matrix,
    serialize_tree,
    sibling_matrix,
    split_mask_by_regions,
    tree_matrices,
)

__version__ = "0.1.0"
