"""Class-imbalance math: type errors, error asymmetry, and label calibration.

The central object is the output delta, the per-sample gradient of the loss
w.r.t. the raw logits. Plain cross-entropy uses delta = p - onehot(c).
Gradient alignment replaces the one-hot target with a calibrated label q so
that, summed over a dataset with per-class counts N, every class's inactive
gradient is rescaled to match its active one: for a sample of class c,

    q[c] = 1,    q[k] = (N_c - N_k) / N_c * p[k]   (k != c)

which yields delta[c] = p[c] - 1 and delta[k] = p[k] * N_k / N_c. Classes
absent from the dataset (N_k = 0) therefore receive an exactly-zero delta
from every sample, which is what prevents them from being forgotten.

Calibration uses the sample's own prediction p rather than the class-mean
prediction; the deltas are treated as constants during backprop (they are
injected into the network directly, not obtained by differentiating a
soft-target loss).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidSampleError
from .nn import Gradients, MlpModel

# Below this, an EA denominator is treated as "no evidence" rather than a
# near-infinite asymmetry.
EA_DENOM_FLOOR = 1e-12

PROB_FLOOR = 1e-12


def _as_counts(counts) -> np.ndarray:
    arr = np.asarray(counts, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"class counts must be a vector, got shape {arr.shape}")
    return arr


def calibrate_label(counts, true_class: int, probs) -> np.ndarray:
    """Calibrated soft target q for one sample (see module docstring).

    Entries for classes that outnumber the sample's class come out negative;
    they are left uncapped.
    """
    n = _as_counts(counts)
    p = np.asarray(probs, dtype=np.float64)
    if n.shape != p.shape:
        raise DimensionError(f"counts shape {n.shape} != probs shape {p.shape}")
    n_c = n[true_class]
    if n_c <= 0:
        raise InvalidSampleError(
            f"sample of class {true_class} but that class has count 0"
        )
    q = (n_c - n) / n_c * p
    q[true_class] = 1.0
    return q


def ga_output_delta(counts, true_class: int, probs, max_ratio: float | None = None) -> np.ndarray:
    """Aligned output delta for one sample: p - calibrate_label(...).

    Closed form: delta[c] = p[c] - 1, delta[k] = p[k] * N_k / N_c. The
    optional max_ratio caps N_k / N_c to guard against extreme amplification
    when the sample's class is nearly empty (off by default).
    """
    n = _as_counts(counts)
    p = np.asarray(probs, dtype=np.float64)
    if n.shape != p.shape:
        raise DimensionError(f"counts shape {n.shape} != probs shape {p.shape}")
    n_c = n[true_class]
    if n_c <= 0:
        raise InvalidSampleError(
            f"sample of class {true_class} but that class has count 0"
        )
    ratio = n / n_c
    if max_ratio is not None:
        ratio = np.minimum(ratio, max_ratio)
    delta = p * ratio
    delta[true_class] = p[true_class] - 1.0
    return delta


def ce_output_delta(probs, true_class: int) -> np.ndarray:
    """Cross-entropy output delta: p - onehot(true_class)."""
    delta = np.asarray(probs, dtype=np.float64).copy()
    delta[true_class] -= 1.0
    return delta


def ce_delta_batch(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized ce_output_delta over a batch of softmax rows."""
    delta = probs.copy()
    delta[np.arange(len(labels)), labels] -= 1.0
    return delta


def ga_ratio_table(counts, max_ratio: float | None = None) -> np.ndarray:
    """Per-class delta scalings: table[c, k] = N_k / N_c (rows of empty classes NaN)."""
    n = _as_counts(counts)
    with np.errstate(divide="ignore", invalid="ignore"):
        table = n[None, :] / n[:, None]
    if max_ratio is not None:
        table = np.minimum(table, max_ratio)
    return table


def ga_delta_batch(
    counts, labels: np.ndarray, probs: np.ndarray, ratio_table: np.ndarray | None = None
) -> np.ndarray:
    """Vectorized ga_output_delta over a batch.

    Pass a precomputed ga_ratio_table to avoid rebuilding it per batch.
    """
    n = _as_counts(counts)
    if np.any(n[labels] <= 0):
        bad = int(labels[np.argmax(n[labels] <= 0)])
        raise InvalidSampleError(f"sample of class {bad} but that class has count 0")
    table = ratio_table if ratio_table is not None else ga_ratio_table(n)
    rows = np.arange(len(labels))
    delta = probs * table[labels]
    delta[rows, labels] = probs[rows, labels] - 1.0
    return delta


def ce_loss(probs, true_class: int) -> float:
    """Negative log-probability of the true class (monitoring only)."""
    p = float(np.asarray(probs, dtype=np.float64)[true_class])
    return -np.log(max(p, PROB_FLOOR))


def soft_ce_loss(probs, q) -> float:
    """Cross entropy against a calibrated target, -sum(q * log p).

    Monitoring value only: the aligned delta is injected directly and is not
    the gradient of this quantity when q does not sum to 1.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_FLOOR, None)
    return float(-(np.asarray(q, dtype=np.float64) * np.log(p)).sum())


def proximal_grad_term(local: MlpModel, reference: MlpModel, mu: float) -> Gradients:
    """FedProx pull-back gradient mu * (w_local - w_reference)."""
    if local.layer_dims != reference.layer_dims:
        raise DimensionError(
            f"model shapes differ: {local.layer_dims} vs {reference.layer_dims}"
        )
    return Gradients(
        weights=[mu * (wl - wg) for wl, wg in zip(local.weights, reference.weights)],
        biases=[mu * (bl - bg) for bl, bg in zip(local.biases, reference.biases)],
    )


@dataclass
class ClassMeanPredictions:
    """Mean predicted distribution per true class.

    pbar[j, i] is the average probability that a sample with true label j is
    predicted as class i; rows for classes with no samples are NaN and their
    support is 0.
    """

    pbar: np.ndarray
    support: np.ndarray


def class_mean_predictions(probs: np.ndarray, labels: np.ndarray, num_classes: int) -> ClassMeanPredictions:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    pbar = np.full((num_classes, num_classes), np.nan)
    support = np.bincount(labels, minlength=num_classes)[:num_classes]
    for j in range(num_classes):
        if support[j] > 0:
            pbar[j] = probs[labels == j].mean(axis=0)
    return ClassMeanPredictions(pbar=pbar, support=support)


def error_asymmetry(cmp: ClassMeanPredictions) -> np.ndarray:
    """Per-class ratio of Type I to Type II error.

    ea[i] = (1 - pbar[i, i]) / sum_{j != i, support[j] > 0} pbar[j, i].
    Entries are NaN when class i has no support or the denominator has no
    evidence (no other supported class, or a sum below EA_DENOM_FLOOR).
    """
    c = len(cmp.support)
    ea = np.full(c, np.nan)
    present = cmp.support > 0
    for i in range(c):
        if not present[i]:
            continue
        others = present.copy()
        others[i] = False
        if not others.any():
            continue
        denom = cmp.pbar[others, i].sum()
        if denom > EA_DENOM_FLOOR:
            ea[i] = (1.0 - cmp.pbar[i, i]) / denom
    return ea


def ea_ratio(ea: np.ndarray) -> float | None:
    """Max present EA entry over min; None without two usable entries."""
    vals = ea[np.isfinite(ea)]
    if len(vals) < 2:
        return None
    lo = vals.min()
    if lo <= EA_DENOM_FLOOR:
        return None
    return float(vals.max() / lo)


def binary_type_errors(probs_pos_class: np.ndarray, labels: np.ndarray) -> tuple[float | None, float | None]:
    """Mean |p - 1| over positives and mean |p| over negatives.

    Either entry is None when its class is absent.
    """
    p = np.asarray(probs_pos_class, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    u1 = float(np.abs(p[pos] - 1.0).mean()) if pos.any() else None
    u2 = float(np.abs(p[~pos]).mean()) if (~pos).any() else None
    return u1, u2


def cumulative_gradient(cmp: ClassMeanPredictions, counts, target_class: int) -> float:
    """Summed logit gradient for one class under plain cross entropy.

    N_i * (pbar[i, i] - 1) + sum_{j != i} N_j * pbar[j, i]; converges to zero
    as training settles, which is what ties error asymmetry to the class
    counts. Classes without support contribute nothing.
    """
    n = _as_counts(counts)
    i = target_class
    total = 0.0
    if cmp.support[i] > 0:
        total += n[i] * (cmp.pbar[i, i] - 1.0)
    for j in range(len(cmp.support)):
        if j != i and cmp.support[j] > 0:
            total += n[j] * cmp.pbar[j, i]
    return float(total)
