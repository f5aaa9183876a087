"""Toy end-to-end training on synthetic phantoms."""

from .checkpoint import load_checkpoint, save_checkpoint
from .net import TinyNet
from .optim import AdamWConfig, AdamWState, adamw_step, cosine_lr
from .phantom import (
    Phantom,
    PhantomConfig,
    PhantomError,
    generate_phantom,
    normalize_intensity,
    random_crop,
    t1_tree,
)
from .training import TrainConfig, TrainingDiverged, TrainResult, infer, load_config, train
