"""Command-line surface: pretrain, fine-tune, cross-validate, predict, inspect,
and self-verify.

Every command that writes artifacts first writes a run manifest
(`<artifact>.manifest.json`): the resolved configuration, input paths with
content hashes, output paths, seed, and tool version. Replaying the manifest's
command line reproduces the outputs hash-for-hash.

Exit codes: 0 success, 1 configuration or data error, 2 I/O or decode error,
3 selfcheck failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (LabeledDataset, PreprocessConfig, kfold_split,
                   load_cifar_binary, load_image_folder, prepare_arrays,
                   decode_image_file, preprocess)
from .errors import (CheckpointError, ConfigError, DataError, DecodeError,
                     ShapeError)
from .evaluate import (compute_metrics, confusion_matrix, cross_validate,
                       predict_classes, write_report)
from .gradcheck import check_layer, check_network
from .layers import BatchNorm2d, Conv2d, Linear, MaxPool2d, ReLU
from .model import ALL, HEAD_ONLY, build_voltavision, replace_head
from .rng import make_rng
from .train import Split, TrainConfig, fit, softmax

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_SELFCHECK = 3

PARAM_COUNT_TABLE = {3: 30039, 5: 44441, 10: 80446, 36: 267672, 100: 728536}


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration errors (exit 1), not argparse's exit 2
    def error(self, message):
        raise ConfigError(message)


def _add_train_flags(p: argparse.ArgumentParser, epochs_default: int = 25):
    p.add_argument("--epochs", type=int, default=epochs_default)
    p.add_argument("--lr", type=float, default=1e-3, help="base learning rate")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--lr-step", type=int, default=7, help="epochs between 10x lr drops")
    p.add_argument("--lr-gamma", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)


def _train_config(args, policy: str) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, base_lr=args.lr, momentum=args.momentum,
                       lr_step=args.lr_step, lr_gamma=args.lr_gamma,
                       batch_size=args.batch_size, seed=args.seed,
                       trainable_policy=policy)


def load_dataset_arg(spec: str) -> tuple[LabeledDataset, list[Path]]:
    """Parse a --data value: an image folder, `cifar:f1[,f2...]`, or `cifar100:...`."""
    if spec.startswith("cifar100:"):
        paths = [Path(p) for p in spec[len("cifar100:"):].split(",") if p]
        return load_cifar_binary(paths, coarse_fine=True), paths
    if spec.startswith("cifar:"):
        paths = [Path(p) for p in spec[len("cifar:"):].split(",") if p]
        return load_cifar_binary(paths), paths
    return load_image_folder(spec), [Path(spec)]


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_path(path: Path) -> str:
    """Content hash of a file, or of a directory's sorted (relpath, hash) list."""
    path = Path(path)
    if path.is_dir():
        lines = []
        for p in sorted(path.rglob("*")):
            if p.is_file():
                lines.append(f"{p.relative_to(path)}:{_sha256_bytes(p.read_bytes())}")
        return _sha256_bytes("\n".join(lines).encode())
    return _sha256_bytes(path.read_bytes())


def write_manifest(artifact: Path, command: str, config: dict,
                   inputs: list[Path], outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": config.get("seed"),
        "config": config,
        "inputs": [{"path": str(p), "sha256": _sha256_path(p)} for p in inputs],
        "outputs": [str(p) for p in outputs],
    }
    path = Path(str(artifact) + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _print_history(history):
    for rec in history:
        line = (f"epoch {rec.epoch + 1}/{len(history)}  lr {rec.lr:.6g}  "
                f"loss {rec.train_loss:.4f}  acc {rec.train_accuracy:.3f}")
        if rec.val_accuracy is not None:
            line += f"  val_loss {rec.val_loss:.4f}  val_acc {rec.val_accuracy:.3f}"
        print(line)


def cmd_pretrain(args) -> int:
    dataset, input_paths = load_dataset_arg(args.data)
    if args.class_filter:
        dataset = dataset.filter_classes([s.strip() for s in args.class_filter.split(",")])
    num_classes = len(dataset.class_names)
    if args.classes != num_classes:
        raise ConfigError(
            f"--classes {args.classes} does not match dataset class count {num_classes}")
    cfg = _train_config(args, policy=ALL)
    out = Path(args.out)
    config = {"data": args.data, "class_filter": args.class_filter,
              "classes": num_classes, "out": str(out), **asdict(cfg)}
    write_manifest(out, "pretrain", config, input_paths, [out])

    model = build_voltavision(num_classes, seed=cfg.seed)
    model.class_names = dataset.class_names
    model.provenance = (f"pretrained on {args.data} "
                        f"({num_classes} classes, {cfg.epochs} epochs, seed {cfg.seed})")
    x, y = prepare_arrays(dataset)
    history = fit(model, Split(x, y), cfg)
    _print_history(history)
    save_checkpoint(model, out)
    print(f"wrote {out} ({out.stat().st_size} bytes)")
    return EXIT_OK


def _load_start_model(args, num_classes: int, seed: int):
    """Either head-replace a checkpoint or build a fresh model."""
    if args.scratch:
        model = build_voltavision(num_classes, seed=seed)
        model.provenance = ""
        return model
    source = load_checkpoint(args.from_ckpt)
    return replace_head(source, num_classes, seed=seed)


def cmd_finetune(args) -> int:
    dataset, input_paths = load_dataset_arg(args.data)
    num_classes = len(dataset.class_names)
    policy = ALL if args.unfreeze else HEAD_ONLY
    cfg = _train_config(args, policy=policy)
    out = Path(args.out)
    if not args.scratch:
        input_paths = [Path(args.from_ckpt)] + input_paths
    config = {"data": args.data, "from": None if args.scratch else str(args.from_ckpt),
              "scratch": args.scratch, "out": str(out), **asdict(cfg)}
    write_manifest(out, "finetune", config, input_paths, [out])

    model = _load_start_model(args, num_classes, cfg.seed)
    model.class_names = dataset.class_names
    if not args.scratch:
        model.provenance += (f"; fine-tuned on {args.data} "
                             f"({cfg.epochs} epochs, seed {cfg.seed}, {policy})")
    x, y = prepare_arrays(dataset)
    history = fit(model, Split(x, y), cfg)
    _print_history(history)
    save_checkpoint(model, out)
    print(f"wrote {out} ({out.stat().st_size} bytes)")
    return EXIT_OK


def cmd_crossval(args) -> int:
    dataset, input_paths = load_dataset_arg(args.data)
    cfg = _train_config(args, policy=ALL if args.unfreeze else HEAD_ONLY)
    report_path = Path(args.report)
    pretrained = None
    if not args.scratch:
        input_paths = [Path(args.from_ckpt)] + input_paths
        pretrained = load_checkpoint(args.from_ckpt)
    config = {"data": args.data, "from": None if args.scratch else str(args.from_ckpt),
              "scratch": args.scratch, "folds": args.folds,
              "report": str(report_path), **asdict(cfg)}
    outputs = [report_path] + ([Path(args.fold_plan)] if args.fold_plan else [])
    write_manifest(report_path, "crossval", config, input_paths, outputs)

    plan = kfold_split(dataset, k=args.folds, seed=cfg.seed)
    if args.fold_plan:
        plan.write(args.fold_plan)
    extra = {"source_checkpoint": "scratch" if args.scratch else str(args.from_ckpt)}
    report = cross_validate(pretrained, dataset, plan, cfg, config_extra=extra)
    write_report(report, report_path)
    for fold in report.folds:
        m = fold.metrics
        print(f"fold {fold.index}: accuracy {100 * m.accuracy:.2f}  "
              f"precision {100 * m.precision:.2f}  recall {100 * m.recall:.2f}  "
              f"f1 {100 * m.f1:.2f}  ({fold.wall_time_s:.1f} s)")
    m = report.mean
    print(f"mean: accuracy {100 * m.accuracy:.2f}  precision {100 * m.precision:.2f}  "
          f"recall {100 * m.recall:.2f}  f1 {100 * m.f1:.2f}")
    print(f"total wall time: {sum(f.wall_time_s for f in report.folds):.1f} s")
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    image = decode_image_file(args.image)
    x = preprocess(image, PreprocessConfig())[None, :, :, :]
    logits = model.forward(x, train=False)
    probs = softmax(logits)[0]
    names = model.class_names or [str(i) for i in range(len(probs))]
    order = np.argsort(-probs, kind="stable") if args.sorted else np.arange(len(probs))
    best = int(np.argmax(probs))
    print(f"predicted: {names[best]}")
    print("probabilities:")
    for i in order:
        print(f"  {names[i]:<24s} {probs[i]:.6f}")
    # stable machine-readable line for the lending-machine controller
    print("predict\t{}\t{}".format(names[best], ",".join(f"{p:.6f}" for p in probs)))
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.model)
    model = load_checkpoint(path)
    trainable, total = model.count_parameters()
    print(f"checkpoint: {path} ({path.stat().st_size} bytes)")
    print(f"classes: {len(model.class_names or [])} "
          f"({', '.join(model.class_names or [])})")
    print(f"provenance: {model.provenance or '(none)'}")
    print(f"parameters: {trainable} trainable, {total} incl. running stats")
    print("layers:")
    for i, layer in enumerate(model.layers):
        shapes = ", ".join(f"{n}{list(a.shape)}"
                           for n, a in {**layer.params(), **layer.state()}.items())
        print(f"  {i:2d} {layer.kind:<10s} {shapes}")
    return EXIT_OK


def _selfcheck_metrics_oracle() -> tuple[bool, str]:
    """compute_metrics vs a per-sample tally on random prediction vectors."""
    rng = make_rng(2024)
    for trial in range(100):
        num_classes = int(rng.integers(2, 7))
        n = int(rng.integers(1, 200))
        y_true = rng.integers(0, num_classes, n)
        y_pred = rng.integers(0, num_classes, n)
        cm = confusion_matrix(y_true, y_pred, num_classes)
        m = compute_metrics(cm)
        correct = sum(1 for t, p in zip(y_true, y_pred) if t == p)
        precs, recs, f1s = [], [], []
        for c in range(num_classes):
            tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
            fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
            fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            precs.append(prec)
            recs.append(rec)
            f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        ok = (abs(m.accuracy - correct / n) < 1e-12
              and abs(m.precision - sum(precs) / num_classes) < 1e-12
              and abs(m.recall - sum(recs) / num_classes) < 1e-12
              and abs(m.f1 - sum(f1s) / num_classes) < 1e-12)
        if not ok:
            return False, f"mismatch vs tally on trial {trial}"
    worked = compute_metrics(np.array([[8, 2, 0], [1, 9, 0], [0, 0, 10]]))
    if f"{worked.f1:.4f}" != "0.8997":
        return False, f"worked example macro F1 {worked.f1:.4f} != 0.8997"
    return True, "100 random matrices match brute-force tally; worked example F1 0.8997"


def _selfcheck_roundtrip(tmpdir: Path) -> tuple[bool, str]:
    model = build_voltavision(3, seed=123)
    model.class_names = ["a", "b", "c"]
    model.provenance = "selfcheck"
    p1, p2 = tmpdir / "sc1.vvc", tmpdir / "sc2.vvc"
    save_checkpoint(model, p1)
    reloaded = load_checkpoint(p1)
    save_checkpoint(reloaded, p2)
    if p1.read_bytes() != p2.read_bytes():
        return False, "save -> load -> save is not byte-identical"
    x = make_rng(5).uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32)
    if not np.array_equal(model.forward(x), reloaded.forward(x)):
        return False, "forward pass differs after reload"
    return True, f"{p1.stat().st_size} bytes, byte-identical, forward bit-identical"


def cmd_selfcheck(args) -> int:
    import tempfile

    failures = 0

    def report(name, ok, detail):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failures += 1

    counts = {c: build_voltavision(c, seed=0).count_parameters()[0]
              for c in PARAM_COUNT_TABLE}
    report("parameter counts", counts == PARAM_COUNT_TABLE,
           " ".join(f"C={c}:{n}" for c, n in counts.items()))

    grad_items = [
        ("gradcheck conv", 1e-4,
         lambda: check_layer(Conv2d(3, 4, 3, stride=1, padding=2, rng=make_rng(1)), (2, 3, 8, 8))),
        ("gradcheck batchnorm", 1e-4,
         lambda: check_layer(BatchNorm2d(4), (2, 4, 8, 8), train=True)),
        ("gradcheck maxpool", 1e-4,
         lambda: check_layer(MaxPool2d(3, 3), (2, 4, 8, 8), distinct_values=True)),
        ("gradcheck relu", 1e-6,
         lambda: check_layer(ReLU(), (2, 4, 8, 8), avoid_zero=1e-3)),
        ("gradcheck linear", 1e-6,
         lambda: check_layer(Linear(12, 5, rng=make_rng(2)), (4, 12, 1, 1))),
        ("gradcheck network head", 1e-4,
         lambda: check_network(build_voltavision(3, seed=5),
                               make_rng(9).uniform(-1, 1, (4, 3, 32, 32)),
                               np.array([0, 1, 2, 1]), max_coords=48)),
    ]
    for name, tol, fn in grad_items:
        err = fn()
        report(name, err < tol, f"max rel err {err:.3e} < {tol:g}")

    with tempfile.TemporaryDirectory() as tmp:
        ok, detail = _selfcheck_roundtrip(Path(tmp))
        report("checkpoint round-trip", ok, detail)

    ok, detail = _selfcheck_metrics_oracle()
    report("metrics oracle", ok, detail)

    if failures:
        print(f"{failures} check(s) failed")
        return EXIT_SELFCHECK
    print("all checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voltavision",
                     description="Compact CNN pretraining, transfer fine-tuning, "
                                 "and cross-validated evaluation.")
    parser.add_argument("--version", action="version", version=f"voltavision {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="train a source-task checkpoint from scratch")
    p.add_argument("--data", required=True,
                   help="image folder, or cifar:<file[,file...]> / cifar100:<file>")
    p.add_argument("--classes", type=int, required=True,
                   help="expected class count; must match the dataset")
    p.add_argument("--class-filter", default=None,
                   help="comma-separated class names to keep (subset pretraining)")
    p.add_argument("--out", required=True, help="output checkpoint (.vvc)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="replace the head and fine-tune on a target folder")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--from", dest="from_ckpt", help="source checkpoint (.vvc)")
    src.add_argument("--scratch", action="store_true", help="random init, no transfer")
    p.add_argument("--data", required=True, help="target image folder")
    p.add_argument("--unfreeze", action="store_true",
                   help="train all layers instead of the default head-only")
    p.add_argument("--out", required=True, help="output checkpoint (.vvc)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("crossval", help="k-fold cross-validated fine-tuning report")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--from", dest="from_ckpt", help="source checkpoint (.vvc)")
    src.add_argument("--scratch", action="store_true")
    p.add_argument("--data", required=True, help="target image folder")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--unfreeze", action="store_true")
    p.add_argument("--report", required=True, help="output report path")
    p.add_argument("--fold-plan", default=None, help="also export fold indices to this file")
    _add_train_flags(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("predict", help="classify a single image")
    p.add_argument("--model", required=True, help="checkpoint (.vvc)")
    p.add_argument("--image", required=True)
    p.add_argument("--sorted", action="store_true",
                   help="list probabilities in descending order (argmax first)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="print checkpoint manifest and parameter counts")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("selfcheck", help="run built-in verification suite")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, DataError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DecodeError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
