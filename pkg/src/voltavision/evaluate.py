"""Confusion-matrix metrics and 5-fold cross-validation orchestration.

Precision/recall/F1 are macro-averaged (unweighted mean over classes) and
0/0 ratios are defined as 0. Validation metrics are taken at the final
epoch of each fold; there is no best-epoch selection. Reports are rendered
as a stable-key-order text document so identical runs diff empty; wall
times are kept on the in-memory results and printed to the console, but
never written into the report file, which must be byte-identical across
reruns of the same seed/config/data.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import FoldPlan, LabeledDataset, PreprocessConfig, prepare_arrays
from .errors import CheckpointError, DataError
from .model import (ArchitectureConfig, ModelGraph, build_voltavision,
                    replace_head)
from .train import Split, TrainConfig, fit


def predict_classes(model: ModelGraph, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode argmax predictions; ties break toward the lowest class index."""
    out = []
    for start in range(0, len(inputs), batch_size):
        logits = model.forward(inputs[start:start + batch_size], train=False)
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]


def compute_metrics(cm: np.ndarray) -> Metrics:
    """Accuracy plus macro precision/recall/F1 from a confusion matrix."""
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise DataError("empty confusion matrix")
    diag = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, diag / col, 0.0)
        recall = np.where(row > 0, diag / row, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    return Metrics(accuracy=float(diag.sum() / total),
                   precision=float(precision.mean()),
                   recall=float(recall.mean()),
                   f1=float(f1.mean()),
                   per_class_precision=[float(v) for v in precision],
                   per_class_recall=[float(v) for v in recall],
                   per_class_f1=[float(v) for v in f1])


@dataclass
class FoldResult:
    index: int
    train_size: int
    val_size: int
    metrics: Metrics
    confusion: np.ndarray
    wall_time_s: float


@dataclass
class MetricsReport:
    config: dict[str, str]
    folds: list[FoldResult]
    mean: Metrics


def _mean_metrics(folds: list[FoldResult]) -> Metrics:
    def mean(attr):
        return float(np.mean([getattr(f.metrics, attr) for f in folds]))

    num_classes = len(folds[0].metrics.per_class_f1)

    def mean_list(attr):
        return [float(np.mean([getattr(f.metrics, attr)[c] for f in folds]))
                for c in range(num_classes)]

    return Metrics(accuracy=mean("accuracy"), precision=mean("precision"),
                   recall=mean("recall"), f1=mean("f1"),
                   per_class_precision=mean_list("per_class_precision"),
                   per_class_recall=mean_list("per_class_recall"),
                   per_class_f1=mean_list("per_class_f1"))


def cross_validate(pretrained: ModelGraph | None, dataset: LabeledDataset,
                   folds: FoldPlan, cfg: TrainConfig,
                   preprocess_cfg: PreprocessConfig = PreprocessConfig(),
                   config_extra: dict[str, str] | None = None) -> MetricsReport:
    """Train and evaluate once per fold; fold f holds out folds.folds[f].

    With a pretrained model its head is replaced per fold (backbone copied
    bit-exactly); otherwise each fold trains a fresh seeded model. Fold f
    derives its seed as cfg.seed XOR f, so folds are independent and the
    whole report is reproducible.
    """
    num_classes = len(dataset.class_names)
    target_config = ArchitectureConfig(num_classes=num_classes)
    if pretrained is not None and not pretrained.config.backbone_equal(target_config):
        raise CheckpointError(
            f"checkpoint architecture {pretrained.config} does not match the "
            f"target architecture except for the head")
    x, y = prepare_arrays(dataset, preprocess_cfg)
    results = []
    for f, val_idx in enumerate(folds.folds):
        fold_seed = cfg.seed ^ f
        train_idx = folds.train_indices(f)
        if pretrained is not None:
            model = replace_head(pretrained, num_classes, seed=fold_seed)
        else:
            model = build_voltavision(num_classes, seed=fold_seed)
        model.class_names = dataset.class_names
        fold_cfg = replace(cfg, seed=fold_seed)
        started = time.perf_counter()
        fit(model, Split(x[train_idx], y[train_idx]), fold_cfg)
        preds = predict_classes(model, x[val_idx])
        wall = time.perf_counter() - started
        cm = confusion_matrix(y[val_idx], preds, num_classes)
        results.append(FoldResult(index=f, train_size=len(train_idx),
                                  val_size=len(val_idx),
                                  metrics=compute_metrics(cm), confusion=cm,
                                  wall_time_s=wall))
    config = {
        "command": "crossval",
        "dataset": dataset.source,
        "samples": str(len(dataset)),
        "classes": ", ".join(dataset.class_names),
        "pretrained": "scratch" if pretrained is None else "checkpoint",
        "pretrain_provenance": pretrained.provenance if pretrained is not None else "",
        "folds": str(folds.k),
        "fold_seed": str(folds.seed),
        "seed": str(cfg.seed),
        "epochs": str(cfg.epochs),
        "base_lr": repr(cfg.base_lr),
        "momentum": repr(cfg.momentum),
        "lr_step": str(cfg.lr_step),
        "lr_gamma": repr(cfg.lr_gamma),
        "batch_size": str(cfg.batch_size),
        "trainable_policy": cfg.trainable_policy,
        "loss_reduction": "mean",
        "metric_averaging": "macro",
    }
    if config_extra:
        config.update(config_extra)
    return MetricsReport(config=config, folds=results, mean=_mean_metrics(results))


def _pct(v: float) -> str:
    return f"{100.0 * v:.2f}"


def _metric_lines(m: Metrics) -> list[str]:
    return [f"accuracy = {_pct(m.accuracy)}",
            f"precision = {_pct(m.precision)}",
            f"recall = {_pct(m.recall)}",
            f"f1 = {_pct(m.f1)}"]


def render_report(report: MetricsReport) -> str:
    """Stable text rendering: config echo, one block per fold, mean block."""
    lines = ["voltavision cross-validation report", "format = 1", "", "[config]"]
    lines.extend(f"{key} = {value}" for key, value in report.config.items())
    for fold in report.folds:
        lines.append("")
        lines.append(f"[fold {fold.index}]")
        lines.append(f"train_samples = {fold.train_size}")
        lines.append(f"val_samples = {fold.val_size}")
        lines.extend(_metric_lines(fold.metrics))
        lines.append("confusion_rows_true =")
        for row in fold.confusion:
            lines.append("  " + " ".join(str(int(v)) for v in row))
    lines.append("")
    lines.append("[mean]")
    lines.extend(_metric_lines(report.mean))
    return "\n".join(lines) + "\n"


def write_report(report: MetricsReport, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(render_report(report))
