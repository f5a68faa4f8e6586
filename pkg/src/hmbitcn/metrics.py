"""Classification metrics: accuracy, macro precision/recall/F1, macro AUROC and AUPRC."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def confusion_metrics(y_true, y_pred, num_classes: int) -> dict:
    """Accuracy and per-class / macro precision, recall, F1.

    A class whose denominator is empty scores 0 for that quantity.
    """
    cm = confusion_matrix(y_true, y_pred, num_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    total = cm.sum()
    return {
        "accuracy": float(tp.sum() / total) if total else 0.0,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "precision_macro": float(precision.mean()),
        "recall_macro": float(recall.mean()),
        "f1_macro": float(f1.mean()),
    }


def binary_auroc(is_pos, scores) -> float:
    """Probability a positive outranks a negative (ties count 1/2), via midranks."""
    is_pos = np.asarray(is_pos, dtype=bool)
    n_pos = int(is_pos.sum())
    n_neg = is_pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positives and negatives")
    ranks = rankdata(scores, method="average")
    return float((ranks[is_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def binary_auprc(is_pos, scores) -> float:
    """Step integral of precision over recall, thresholds descending; tied scores form one step."""
    is_pos = np.asarray(is_pos, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(is_pos.sum())
    if n_pos == 0:
        raise ValueError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    hits = np.cumsum(is_pos[order])
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = hits[last_of_group].astype(np.float64)
    seen = (np.flatnonzero(last_of_group) + 1).astype(np.float64)
    precision = tp / seen
    recall = tp / n_pos
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def _one_vs_rest(y_true, scores, fn) -> float:
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        return fn(y_true == 1, scores)
    values = []
    for k in range(scores.shape[1]):
        is_pos = y_true == k
        # classes absent from y_true are skipped; a lone present class has no negatives
        if is_pos.any() and not is_pos.all():
            values.append(fn(is_pos, scores[:, k]))
    if not values:
        # a single-class evaluation set has no ranking to score
        return math.nan
    return float(np.mean(values))


def auroc_macro(y_true, scores) -> float:
    """One-vs-rest AUROC averaged over the classes present in ``y_true``.

    ``scores`` is B x K, or a length-B vector of positive-class scores for binary labels.
    """
    return _one_vs_rest(y_true, scores, binary_auroc)


def auprc_macro(y_true, scores) -> float:
    return _one_vs_rest(y_true, scores, binary_auprc)


METRIC_NAMES = ("accuracy", "precision_macro", "recall_macro", "f1_macro", "auroc_macro", "auprc_macro")


def evaluate_scores(y_true, probs, num_classes: int) -> dict:
    """All six headline metrics from class probabilities (argmax gives the prediction)."""
    probs = np.asarray(probs, dtype=np.float64)
    cm = confusion_metrics(y_true, probs.argmax(axis=1), num_classes)
    return {
        "accuracy": cm["accuracy"],
        "precision_macro": cm["precision_macro"],
        "recall_macro": cm["recall_macro"],
        "f1_macro": cm["f1_macro"],
        "auroc_macro": auroc_macro(y_true, probs),
        "auprc_macro": auprc_macro(y_true, probs),
    }
