"""Evaluation metrics and per-round record types."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, EvaluationError


@dataclass
class RoundRecord:
    """One evaluated round of a federated run.

    class_accuracy entries are NaN for classes without test support;
    mean_ea_ratio is None on rounds without EA instrumentation; wall_time is
    seconds elapsed since the start of the run.
    """

    round: int
    accuracy: float
    macro_f1: float
    mean_ea_ratio: float | None
    class_accuracy: np.ndarray
    wall_time: float


@dataclass
class PrePostRecord:
    """Per-class test accuracy around one client's local training."""

    client_id: int
    pre: np.ndarray
    post: np.ndarray
    counts: np.ndarray


def confusion(predictions, labels, num_classes: int) -> np.ndarray:
    """Count matrix with entry [t, p] = samples of true class t predicted p."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise DataError(
            f"{len(predictions)} predictions vs {len(labels)} labels"
        )
    for name, arr in (("prediction", predictions), ("label", labels)):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} values outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    total = int(cm.sum())
    if total == 0:
        raise EvaluationError("confusion matrix is empty")
    return float(np.trace(cm) / total)


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1; a class with P + R = 0 contributes 0."""
    if cm.sum() == 0:
        raise EvaluationError("confusion matrix is empty")
    c = cm.shape[0]
    scores = np.zeros(c)
    for i in range(c):
        tp = cm[i, i]
        col = cm[:, i].sum()
        row = cm[i, :].sum()
        precision = tp / col if col > 0 else 0.0
        recall = tp / row if row > 0 else 0.0
        if precision + recall > 0:
            scores[i] = 2.0 * precision * recall / (precision + recall)
    return float(scores.mean())


def classwise_accuracy(cm: np.ndarray) -> np.ndarray:
    """Per-class recall; NaN for classes with no test samples."""
    row_sums = cm.sum(axis=1)
    out = np.full(cm.shape[0], np.nan)
    present = row_sums > 0
    out[present] = np.diag(cm)[present] / row_sums[present]
    return out


@dataclass
class ForgettingDelta:
    """Mean pre-minus-post accuracy drop per class bucket (None if bucket empty)."""

    missing: float | None
    rare: float | None
    majority: float | None


def forgetting_delta(pre: np.ndarray, post: np.ndarray, counts) -> ForgettingDelta:
    """Bucket classes by the client's local counts and average the drops.

    missing: count 0; rare: count <= median(present counts) / 5; majority:
    the rest. NaN accuracy entries (class unsupported in the test set) are
    ignored inside each bucket.
    """
    pre = np.asarray(pre, dtype=np.float64)
    post = np.asarray(post, dtype=np.float64)
    counts = np.asarray(counts)
    if not (len(pre) == len(post) == len(counts)):
        raise DataError("pre, post and counts must have equal length")
    drop = pre - post
    present = counts > 0
    rare_cut = np.median(counts[present]) / 5.0 if present.any() else 0.0

    def bucket_mean(mask: np.ndarray) -> float | None:
        vals = drop[mask & np.isfinite(drop)]
        return float(vals.mean()) if len(vals) else None

    return ForgettingDelta(
        missing=bucket_mean(~present),
        rare=bucket_mean(present & (counts <= rare_cut)),
        majority=bucket_mean(present & (counts > rare_cut)),
    )


def iterations_to_fraction(accuracy_curve, target_accuracy: float) -> int | None:
    """First index of the round-indexed curve with accuracy >= target, else None."""
    for i, acc in enumerate(accuracy_curve):
        if acc >= target_accuracy:
            return i
    return None


def mean_client_ea_ratio(ratios) -> float | None:
    """Arithmetic mean of the present (non-None) per-client EA ratios."""
    vals = [r for r in ratios if r is not None]
    if not vals:
        return None
    return float(np.mean(vals))
