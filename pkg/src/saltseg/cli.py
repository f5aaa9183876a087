"""Command-line entry point: ``saltseg {tree,train,infer,eval,bench,phantom}``.

Exit codes: 0 success, 1 validation or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .activation import predict_labels, salt_log_probs
from .harness.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .harness.net import TinyNet
from .harness.phantom import PhantomConfig, PhantomError, generate_phantom, normalize_intensity, t1_tree
from .harness.training import TrainingDiverged, load_config, train, write_log_csv
from .metrics import aggregate_report, evaluate_pair, write_report_csv
from .tree import TreeParseError, load_tree, tree_matrices
from .volume import VolumeFormatError, read_volume, write_volume

log = logging.getLogger("saltseg")


class CliError(Exception):
    """Data or validation problem; reported on stderr with exit code 1."""


def _tree(args):
    path = getattr(args, "tree_file", None) or args.tree
    return load_tree(path) if path else t1_tree()


def _triple(text: str, kind=int) -> tuple:
    parts = text.replace("x", ",").split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three values, got {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value in {text!r}") from None


def _grid(M: np.ndarray) -> str:
    return "\n".join(" ".join(str(int(v)) for v in row) for row in M)


def cmd_tree(args) -> int:
    path = args.tree_file or args.tree
    if not path:
        raise CliError("tree file required (positional or --tree)")
    tree = load_tree(path)
    if args.action == "validate":
        print(f"ok: {tree.node_count} nodes, height {tree.height}, {len(tree.leaves)} leaves")
    elif args.action == "show":
        for node in _dfs(tree):
            print("  " * int(tree.depth[node]) + f"{node} {tree.name[node]}")
    else:
        m = tree_matrices(tree)
        for label, M in (("A", m.A), ("R", m.R), ("S", m.S)):
            print(f"{label} =")
            print(_grid(M))
    return 0


def _dfs(tree):
    stack = [0]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(tree.children[node]))


def cmd_phantom(args) -> int:
    tree = _tree(args)
    cfg = PhantomConfig(dims=args.dims, spacing=args.spacing, noise_sigma=args.noise)
    ph = generate_phantom(tree, args.seed, cfg)
    write_volume(args.intensity, ph.intensity.astype(np.float32), ph.spacing, 1)
    write_volume(args.labels, ph.labels, ph.spacing, 0)
    print(f"wrote {args.intensity} and {args.labels}")
    return 0


def cmd_train(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    try:
        config = load_config(text, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    tree = _tree(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config, tree, steps=args.steps)
    save_checkpoint(out / "model.ckpt", result.params, tree.digest())
    with open(out / "train_log.csv", "w", encoding="utf-8") as fh:
        write_log_csv(result.log, fh)
    print(f"steps: {len(result.log)}")
    print(f"final loss: {result.log[-1]['total']:.6f}")
    print(f"validation mean leaf dice: {result.final_val_dice:.4f}")
    return 0


def _load_model(path, tree):
    params, digest = load_checkpoint(path)
    if digest != tree.digest():
        raise CliError("checkpoint was trained on a different tree (hash mismatch)")
    net = TinyNet.from_params(params)
    if net.plan[-1] != tree.node_count:
        raise CliError(f"checkpoint has {net.plan[-1]} output channels, tree has {tree.node_count} nodes")
    return net


def cmd_infer(args) -> int:
    tree = _tree(args)
    net = _load_model(args.checkpoint, tree)
    vol = read_volume(args.input)
    if vol.dtype_code != 1:
        raise CliError("input volume must hold f32 intensities (dtype 1)")
    cum_log = salt_log_probs(net(normalize_intensity(vol.data)[None]).astype(np.float64), tree)
    labels = predict_labels(cum_log, tree)
    write_volume(args.out, labels, vol.spacing, 0)
    print(f"wrote {args.out}")
    if args.dump_node_probs:
        stem = Path(args.out)
        for key in args.dump_node_probs.split(","):
            node = tree.resolve(key.strip())
            target = stem.with_name(f"{stem.stem}_node{node}{stem.suffix or '.saltvol'}")
            write_volume(target, np.exp(cum_log[node]).astype(np.float32), vol.spacing, 1)
            print(f"wrote {target}")
    return 0


def _pairs(args) -> list[tuple[str, str, str]]:
    if args.manifest:
        pairs = []
        base = Path(args.manifest).parent
        for lineno, raw in enumerate(Path(args.manifest).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise CliError(f"manifest line {lineno}: expected 'gt pred [id]'")
            gt, pred = (str(base / p) if not Path(p).is_absolute() else p for p in parts[:2])
            pairs.append((gt, pred, parts[2] if len(parts) == 3 else str(len(pairs))))
        if not pairs:
            raise CliError("manifest lists no volume pairs")
        return pairs
    if not (args.gt and args.pred):
        raise CliError("give GT and PRED volumes or --manifest")
    return [(args.gt, args.pred, Path(args.gt).stem)]


def cmd_eval(args) -> int:
    tree = _tree(args)
    try:
        classes = [tree.resolve(c.strip()) for c in args.classes.split(",")] if args.classes else list(tree.leaves)
    except (KeyError, IndexError) as exc:
        raise CliError(f"unknown class: {exc}") from None
    scores = []
    for gt_path, pred_path, vid in _pairs(args):
        gt, pred = read_volume(gt_path), read_volume(pred_path)
        if gt.data.shape != pred.data.shape:
            raise CliError(f"{vid}: dims differ {gt.data.shape} vs {pred.data.shape}")
        if gt.dtype_code != 0 or pred.dtype_code != 0:
            raise CliError(f"{vid}: label volumes must have dtype 0")
        for v in (gt.data, pred.data):
            if v.size and int(v.max()) >= tree.node_count:
                raise CliError(f"{vid}: label {int(v.max())} not in tree")
        scores.append(evaluate_pair(gt.data.astype(np.int64), pred.data.astype(np.int64), tree, classes,
                                    gt.spacing, args.tau, volume=vid))
    text = write_report_csv(scores)
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    report = aggregate_report(scores, args.bootstrap, args.seed)
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    print(f"macro dice {report['macro_dice']:.4f} [{report['macro_dice_ci'][0]:.4f}, {report['macro_dice_ci'][1]:.4f}]")
    print(f"macro nsd {report['macro_nsd']:.4f} [{report['macro_nsd_ci'][0]:.4f}, {report['macro_nsd_ci'][1]:.4f}]")
    return 0


def cmd_bench(args) -> int:
    tree = _tree(args)
    if args.checkpoint:
        net = _load_model(args.checkpoint, tree)
    else:
        net = TinyNet(tree.node_count, rng=np.random.default_rng(args.seed))
    rng = np.random.default_rng(args.seed)
    volume = rng.uniform(-1024, 1024, args.dims)
    nvox = int(np.prod(args.dims))
    print("rep,inference_s,total_s,voxels_per_s,ms_per_slice")
    totals = []
    for rep in range(args.repetitions):
        t0 = time.perf_counter()
        x = normalize_intensity(volume)[None]
        t1 = time.perf_counter()
        cum_log = salt_log_probs(net(x).astype(np.float64), tree)
        t2 = time.perf_counter()
        predict_labels(cum_log, tree)
        t3 = time.perf_counter()
        total = t3 - t0
        totals.append((t2 - t1, total))
        print(f"{rep},{t2 - t1:.6f},{total:.6f},{nvox / total:.1f},{1000 * total / args.dims[2]:.3f}")
    inf, tot = np.median(np.asarray(totals), axis=0)
    print(f"median,{inf:.6f},{tot:.6f},{nvox / tot:.1f},{1000 * tot / args.dims[2]:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saltseg", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tree", help="tree file (default: built-in demo tree)")
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tree", parents=[common], help="inspect a label tree")
    p.add_argument("action", choices=["validate", "show", "matrices"])
    p.add_argument("tree_file", nargs="?")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("phantom", parents=[common], help="write a synthetic intensity/label pair")
    p.add_argument("intensity")
    p.add_argument("labels")
    p.add_argument("--dims", type=_triple, default=(48, 48, 48))
    p.add_argument("--spacing", type=lambda s: _triple(s, float), default=(1.5, 1.5, 1.5))
    p.add_argument("--noise", type=float, default=20.0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", parents=[common], help="train the toy model")
    p.add_argument("config", nargs="?", help="key = value config file")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--steps", type=int, help="stop after this many steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="predict labels for a volume")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-node-probs", help="comma separated node ids or names")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="Dice/NSD report")
    p.add_argument("gt", nargs="?")
    p.add_argument("pred", nargs="?")
    p.add_argument("--manifest", help="file with 'gt pred [id]' per line")
    p.add_argument("--classes", help="comma separated names or ids (default: leaves)")
    p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap iterations")
    p.add_argument("--tau", type=float, default=3.0, help="NSD tolerance in mm")
    p.add_argument("--csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="time inference on synthetic input")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--dims", type=_triple, default=(64, 64, 32))
    p.add_argument("--repetitions", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.seed is None:
        args.seed = 0 if args.command in ("eval", "bench", "phantom") else None
    try:
        return args.func(args)
    except (CliError, TreeParseError, VolumeFormatError, CheckpointError, PhantomError, TrainingDiverged,
            KeyError, IndexError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
