"""Classification metrics, ROC analysis and k-fold cross-validation.

Undefined metrics (a zero denominator, or AUC on single-class truth) are
reported as ``math.nan`` rather than raising, so fold averages never absorb
a silent 0 or 1.

Example::

    from dynimg.eval import evaluate

    report = evaluate(probs[:, 1], truth)
    report.accuracy, report.auc
"""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from dynimg.dataset import derive_seed, stratified_folds
from dynimg.model import predict_proba
from dynimg.models import (
    ClassMetrics,
    ConfusionMatrix,
    CrossValSummary,
    EvalReport,
    FoldResult,
    Label,
    Manifest,
    RocPoint,
    TrainConfig,
)
from dynimg.pipeline import fit_manifest, image_set

logger = logging.getLogger(__name__)


class EvalError(Exception):
    """Exception for invalid metric inputs."""

    pass


def _as_labels(values: Sequence[Label | int | str]) -> list[Label]:
    out = []
    for value in values:
        if isinstance(value, Label):
            out.append(value)
        elif isinstance(value, str):
            out.append(Label(value))
        else:
            out.append(Label.from_index(int(value)))
    return out


def confusion(
    preds: Sequence[Label | int | str],
    truth: Sequence[Label | int | str],
    positive: Label = Label.ruminating,
) -> ConfusionMatrix:
    """Count predictions against ground truth.

    Labels may be given as ``Label`` members, their values, or class indices.

    Raises:
        EvalError: lengths differ or no samples
    """
    preds, truth = _as_labels(preds), _as_labels(truth)
    if len(preds) != len(truth):
        raise EvalError(
            f"Length mismatch: {len(preds)} predictions, {len(truth)} labels"
        )
    if not preds:
        raise EvalError("Cannot build a confusion matrix from zero samples")
    tp = tn = fp = fn = 0
    for pred, true in zip(preds, truth):
        match (pred == positive, true == positive):
            case (True, True):
                tp += 1
            case (True, False):
                fp += 1
            case (False, True):
                fn += 1
            case (False, False):
                tn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def accuracy(cm: ConfusionMatrix) -> float:
    """Return ``(tp + tn) / total``.

    Raises:
        EvalError: the matrix is empty
    """
    if cm.total == 0:
        raise EvalError("Accuracy of an empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else math.nan


def precision(cm: ConfusionMatrix) -> float:
    """Return ``tp / (tp + fp)``, NaN when nothing was predicted positive."""
    return _ratio(cm.tp, cm.tp + cm.fp)


def sensitivity(cm: ConfusionMatrix) -> float:
    """Return the recall ``tp / (tp + fn)``, NaN without positive samples."""
    return _ratio(cm.tp, cm.tp + cm.fn)


def negative_predictive_value(cm: ConfusionMatrix) -> float:
    """Return ``tn / (tn + fn)``, the precision of the negative class."""
    return _ratio(cm.tn, cm.tn + cm.fn)


def auc(
    scores: Sequence[float], truth: Sequence[Label | int | str]
) -> tuple[float, list[RocPoint]]:
    """Compute the ROC curve and the area under it.

    Thresholds are the distinct scores in descending order; equal scores
    form a single step, so the trapezoidal area equals the fraction of
    (positive, negative) pairs ranked correctly, ties counting one half.

    Args:
        scores: positive-class probabilities
        truth: true labels

    Returns:
        AUC and the ROC vertices from ``(0, 0)`` to ``(1, 1)``; NaN and an
        empty curve if ``truth`` holds a single class

    Raises:
        EvalError: lengths differ
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.array([label == Label.ruminating for label in _as_labels(truth)])
    if scores.shape != positive.shape:
        raise EvalError(
            f"Length mismatch: {scores.shape[0]} scores, {positive.shape[0]} labels"
        )
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan, []

    points = [RocPoint(threshold=math.inf, fpr=0.0, tpr=0.0)]
    tp = fp = 0
    # twice the area, in pair counts, so the result is exact
    area2 = 0
    for threshold in np.unique(scores)[::-1]:
        at = scores == threshold
        step_tp = int(positive[at].sum())
        step_fp = int(at.sum()) - step_tp
        area2 += step_fp * (2 * tp + step_tp)
        tp += step_tp
        fp += step_fp
        points.append(
            RocPoint(threshold=float(threshold), fpr=fp / n_neg, tpr=tp / n_pos)
        )
    return area2 / (2 * n_pos * n_neg), points


def evaluate(
    scores: Sequence[float],
    truth: Sequence[Label | int | str],
    threshold: float = 0.5,
) -> EvalReport:
    """Build the full report for positive-class ``scores``.

    A sample is predicted Ruminating when its score is at least
    ``threshold``.

    Raises:
        EvalError: lengths differ or no samples
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = _as_labels(truth)
    preds = [Label.ruminating if s >= threshold else Label.other for s in scores]
    cm = confusion(preds, truth)
    area, points = auc(scores, truth)
    swapped = cm.swapped()
    return EvalReport(
        confusion=cm,
        accuracy=accuracy(cm),
        precision=precision(cm),
        recall=sensitivity(cm),
        auc=area,
        per_class={
            Label.ruminating.value: ClassMetrics(
                precision=precision(cm), recall=sensitivity(cm), support=cm.tp + cm.fn
            ),
            Label.other.value: ClassMetrics(
                precision=precision(swapped),
                recall=sensitivity(swapped),
                support=swapped.tp + swapped.fn,
            ),
        },
        roc_points=points,
    )


def _mean_std(values: list[float]) -> tuple[float, float]:
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std())


def summarize_folds(folds: list[FoldResult]) -> CrossValSummary:
    """Aggregate fold results into mean and population standard deviation.

    Raises:
        EvalError: no folds
    """
    if not folds:
        raise EvalError("Cannot summarize zero folds")
    accuracy_mean, accuracy_std = _mean_std([f.accuracy for f in folds])
    auc_mean, auc_std = _mean_std([f.auc for f in folds])
    return CrossValSummary(
        k=len(folds),
        folds=list(folds),
        accuracy_mean=accuracy_mean,
        accuracy_std=accuracy_std,
        auc_mean=auc_mean,
        auc_std=auc_std,
    )


def crossval(
    manifest: Manifest,
    pooled: dict[str, np.ndarray],
    train_cfg: TrainConfig,
    k: int,
    *,
    seed: int = 0,
    workers: int = 1,
) -> CrossValSummary:
    """Run k-fold cross-validation over the clips of ``manifest``.

    Folds are drawn over clip groups, stratified by label, so every
    augmentation variant of a clip lands in the same fold. Each fold trains
    on the other ``k - 1`` folds (holding out ``train_cfg.val_fraction`` of
    them for early stopping) with a seed derived from ``(seed, fold)``, so
    serial and concurrent runs give identical results.

    Args:
        manifest: clips to fold; their splits are ignored
        pooled: dynamic image per entry key, as returned by ``load_pooled``
        train_cfg: training hyperparameters
        k: number of folds
        seed: base seed for fold assignment and training
        workers: folds trained concurrently

    Raises:
        DatasetError: fewer groups than folds or too few clips per class
        ModelError: training failed
    """
    groups = manifest.groups()
    group_label = {entry.group: entry.label for entry in manifest.entries}
    folds = stratified_folds([group_label[g] for g in groups], k, seed)

    def run(fold: int) -> FoldResult:
        held_out = {groups[i] for i in folds[fold]}
        test = replace(
            manifest, entries=tuple(e for e in manifest.entries if e.group in held_out)
        )
        rest = replace(
            manifest,
            entries=tuple(e for e in manifest.entries if e.group not in held_out),
        )
        fold_seed = derive_seed(seed, fold)
        params, _ = fit_manifest(rest, pooled, replace(train_cfg, seed=fold_seed))
        test_set = image_set(test, pooled)
        scores = predict_proba(params, test_set.images)[:, 1]
        report = evaluate(scores, test_set.labels)
        logger.info(
            "Fold %d: accuracy=%.4f auc=%.4f (%d clips)",
            fold,
            report.accuracy,
            report.auc,
            len(test_set),
        )
        return FoldResult(
            fold=fold,
            accuracy=report.accuracy,
            auc=report.auc,
            n_test=len(test_set),
            seed=fold_seed,
        )

    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(run, range(k)))
    return summarize_folds(results)


def write_roc_csv(report: EvalReport, path: Path) -> None:
    """Write the ROC vertices as CSV with columns threshold, fpr, tpr."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["threshold", "fpr", "tpr"])
        for point in report.roc_points:
            writer.writerow([repr(point.threshold), repr(point.fpr), repr(point.tpr)])
