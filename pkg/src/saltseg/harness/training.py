"""Desk-scale training loop: phantom crops -> TinyNet -> SALT -> hybrid loss."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..activation import predict_labels, salt_log_probs
from ..loss import hybrid_loss
from ..metrics import build_bit_codec, dice, hierarchical_confusion
from ..tree import LabelTree, tree_matrices
from .net import TinyNet
from .optim import AdamWConfig, AdamWState, adamw_step
from .phantom import PhantomConfig, generate_phantom, normalize_intensity, random_crop

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "load_config",
    "train",
    "infer",
    "mean_leaf_dice",
    "write_log_csv",
]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite loss at step {step}")


@dataclass
class TrainConfig:
    lr: float = 0.00025
    weight_decay: float = 0.00005
    epochs: int = 10
    steps_per_epoch: int = 50
    crop: tuple[int, int, int] = (32, 32, 16)
    batch_size: int = 2
    seed: int = 7
    precision: str = "float32"
    dims: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)
    noise_sigma: float = 20.0
    ellipsoid_scale: tuple[float, float] = (0.75, 0.85)
    train_phantoms: int = 4
    val_phantoms: int = 2
    hidden: tuple[int, int] = (8, 16)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("lr", "epochs", "steps_per_epoch", "batch_size", "train_phantoms", "val_phantoms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        if any(c > d for c, d in zip(self.crop, self.dims)):
            raise ValueError(f"crop {self.crop} does not fit phantom dims {self.dims}")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def phantom_config(self) -> PhantomConfig:
        return PhantomConfig(dims=self.dims, spacing=self.spacing, noise_sigma=self.noise_sigma,
                             ellipsoid_scale=self.ellipsoid_scale)

    def adamw(self) -> AdamWConfig:
        return AdamWConfig(self.lr, self.weight_decay, self.total_steps, self.beta1, self.beta2, self.adam_eps)


def _coerce(value: str, default):
    if isinstance(default, tuple):
        parts = value.replace("x", ",").split(",")
        return tuple(type(default[0])(p.strip()) for p in parts)
    if isinstance(default, int) and not isinstance(default, bool):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value.strip()


def load_config(text: str, **overrides) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` comments) into a :class:`TrainConfig`.

    Tuples are written ``32,32,16`` or ``32x32x16``.
    """
    defaults = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(value, getattr(defaults, key))
        except ValueError:
            raise ValueError(f"config line {lineno}: bad value {value!r} for {key}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


@dataclass
class TrainResult:
    params: dict
    log: list[dict]
    val_dice: list[float] = field(default_factory=list)
    config: TrainConfig | None = None

    @property
    def final_val_dice(self) -> float:
        return self.val_dice[-1] if self.val_dice else float("nan")


def infer(net: TinyNet, intensity, tree: LabelTree) -> tuple[np.ndarray, np.ndarray]:
    """Raw HU volume -> (leaf labels, log cumulative probabilities)."""
    x = normalize_intensity(intensity)[None]
    cum_log = salt_log_probs(net(x).astype(np.float64), tree)
    return predict_labels(cum_log, tree), cum_log


def mean_leaf_dice(gt, pred, tree: LabelTree, codec=None) -> float:
    codec = codec or build_bit_codec(tree)
    return float(np.mean([dice(hierarchical_confusion(gt, pred, codec, c)) for c in tree.leaves]))


def train(config: TrainConfig, tree: LabelTree, steps: int | None = None, validate: bool = True) -> TrainResult:
    """Run the toy training loop; fully determined by ``config.seed``.

    ``steps`` truncates the run (the schedule still spans the full config).
    """
    dtype = np.dtype(config.precision)
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, crop_rng = (np.random.default_rng(s) for s in seeds[:2])
    ph_seeds = seeds[2].generate_state(config.train_phantoms + config.val_phantoms, dtype=np.uint64)
    pcfg = config.phantom_config()
    train_set = [generate_phantom(tree, int(s), pcfg) for s in ph_seeds[: config.train_phantoms]]
    val_set = [generate_phantom(tree, int(s), pcfg) for s in ph_seeds[config.train_phantoms:]]
    train_x = [normalize_intensity(p.intensity) for p in train_set]

    net = TinyNet(tree.node_count, config.hidden, rng=init_rng, dtype=dtype)
    opt_cfg = config.adamw()
    state = AdamWState()
    R = tree_matrices(tree).R
    codec = build_bit_codec(tree)
    total = config.total_steps if steps is None else min(steps, config.total_steps)
    rows: list[dict] = []
    val_hist: list[float] = []

    for t in range(total):
        grads = None
        ce = dice_l = tot = 0.0
        for _ in range(config.batch_size):
            k = int(crop_rng.integers(len(train_set)))
            xc, yc, _ = random_crop(train_x[k], train_set[k].labels, config.crop, crop_rng)
            logits, cache = net.forward(xc[None])
            report, dlogits = hybrid_loss(logits.astype(np.float64), tree, yc, R)
            g = net.backward(cache, dlogits / config.batch_size)
            grads = g if grads is None else {n: grads[n] + g[n] for n in grads}
            ce += report.ce / config.batch_size
            dice_l += report.dice / config.batch_size
            tot += report.total / config.batch_size
        if not np.isfinite(tot) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDiverged(t + 1)
        lr = adamw_step(net.params, grads, state, t, opt_cfg)
        rows.append({"step": t + 1, "lr": lr, "ce": ce, "dice": dice_l, "total": tot})
        end_of_epoch = (t + 1) % config.steps_per_epoch == 0 or t + 1 == total
        if validate and end_of_epoch:
            scores = [mean_leaf_dice(p.labels, infer(net, p.intensity, tree)[0], tree, codec) for p in val_set]
            val_hist.append(float(np.mean(scores)))
            log.info("step %d loss %.4f val leaf dice %.4f", t + 1, tot, val_hist[-1])
    return TrainResult(net.params, rows, val_hist, config)


def write_log_csv(rows: list[dict], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "lr", "ce", "dice", "total"])
    for r in rows:
        w.writerow([r["step"], repr(r["lr"]), repr(r["ce"]), repr(r["dice"]), repr(r["total"])])


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
