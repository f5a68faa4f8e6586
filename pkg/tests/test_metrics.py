import numpy as np
import pytest

from hmbitcn.metrics import (
    auprc_macro,
    auroc_macro,
    binary_auprc,
    confusion_metrics,
    evaluate_scores,
)


def brute_confusion(y_true, y_pred, K):
    prec, rec, f1 = [], [], []
    for k in range(K):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == k and p == k)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != k and p == k)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == k and p != k)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    acc = sum(1 for t, p in zip(y_true, y_pred) if t == p) / len(y_true)
    return acc, sum(prec) / K, sum(rec) / K, sum(f1) / K


def brute_auroc(pos, scores):
    ps = [s for s, y in zip(scores, pos) if y]
    ns = [s for s, y in zip(scores, pos) if not y]
    total = 0.0
    for p in ps:
        for n in ns:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(ps) * len(ns))


def brute_auprc(pos, scores):
    """Enumerate every distinct threshold, high to low; add precision times the recall gained."""
    n_pos = sum(pos)
    area, prev_recall = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        selected = [y for s, y in zip(scores, pos) if s >= thr]
        tp = sum(selected)
        recall = tp / n_pos
        area += (recall - prev_recall) * (tp / len(selected))
        prev_recall = recall
    return area


def macro(fn, y, scores):
    vals = []
    for k in range(scores.shape[1]):
        pos = [int(v == k) for v in y]
        if 0 < sum(pos) < len(pos):
            vals.append(fn(pos, list(scores[:, k])))
    return sum(vals) / len(vals)


def test_confusion_examples():
    m = confusion_metrics([0, 0, 1, 1], [0, 0, 1, 1], 2)
    assert m["accuracy"] == 1.0 and m["f1_macro"] == 1.0
    m = confusion_metrics([0, 1], [1, 0], 2)
    assert m["accuracy"] == 0.0 and m["f1_macro"] == 0.0
    m = confusion_metrics([0, 0, 1, 1], [0, 1, 1, 1], 2)
    np.testing.assert_allclose(m["precision"], [1.0, 2 / 3])
    np.testing.assert_allclose(m["recall"], [0.5, 1.0])
    np.testing.assert_allclose(m["f1"], [2 / 3, 0.8])
    assert m["f1_macro"] == pytest.approx(11 / 15, abs=1e-15)


def test_zero_denominator_is_zero():
    m = confusion_metrics([0, 0], [0, 0], 3)
    np.testing.assert_array_equal(m["precision"], [1, 0, 0])
    np.testing.assert_array_equal(m["f1"], [1, 0, 0])


def test_auroc_examples():
    assert auroc_macro([0, 0, 1, 1], np.array([0.1, 0.4, 0.35, 0.8])) == pytest.approx(0.75, abs=1e-15)
    assert auroc_macro([0, 1, 2], np.eye(3)) == 1.0
    assert auroc_macro([0, 1, 2, 0], np.full((4, 3), 0.25)) == 0.5


def test_auprc_examples():
    assert auprc_macro([0, 1, 2], np.eye(3)) == 1.0
    for m in (2, 5, 9):
        scores = np.linspace(1, 0, m)
        pos = np.zeros(m, bool)
        pos[-1] = True
        assert binary_auprc(pos, scores) == pytest.approx(1 / m, abs=1e-15)


def test_absent_class_skipped():
    probs = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.6, 0.4, 0.0]])
    assert auroc_macro([0, 1, 0], probs) == pytest.approx(1.0)


def test_random_instances_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        K = int(rng.integers(2, 5))
        B = int(rng.integers(2, 13))
        y = rng.integers(0, K, size=B)
        if len(set(y)) < 2:
            y[0], y[1] = 0, 1
        # coarse scores so ties occur
        scores = rng.integers(0, 4, size=(B, K)) / 4.0
        pred = rng.integers(0, K, size=B)
        m = confusion_metrics(y, pred, K)
        acc, p, r, f = brute_confusion(list(y), list(pred), K)
        assert abs(m["accuracy"] - acc) <= 1e-12
        assert abs(m["precision_macro"] - p) <= 1e-12
        assert abs(m["recall_macro"] - r) <= 1e-12
        assert abs(m["f1_macro"] - f) <= 1e-12
        assert abs(auroc_macro(y, scores) - macro(brute_auroc, y, scores)) <= 1e-12
        assert abs(auprc_macro(y, scores) - macro(brute_auprc, y, scores)) <= 1e-12
        # accuracy = class-frequency-weighted recall
        freq = np.bincount(y, minlength=K) / B
        assert abs(m["accuracy"] - float(freq @ m["recall"])) <= 1e-12


def test_evaluate_scores_keys():
    probs = np.array([[0.7, 0.3], [0.4, 0.6], [0.8, 0.2], [0.1, 0.9]])
    out = evaluate_scores([0, 1, 0, 1], probs, 2)
    assert out == {"accuracy": 1.0, "precision_macro": 1.0, "recall_macro": 1.0, "f1_macro": 1.0,
                   "auroc_macro": 1.0, "auprc_macro": 1.0}


def test_single_class_ranking_is_nan():
    out = evaluate_scores([1, 1, 1], np.array([[0.2, 0.8], [0.6, 0.4], [0.4, 0.6]]), 2)
    assert np.isnan(out["auroc_macro"]) and np.isnan(out["auprc_macro"])
    assert out["accuracy"] == pytest.approx(2 / 3)
