import numpy as np
import pytest

from scoregc.metrics import (BinaryConfusion, accuracy, confusion, evaluation_report, roc_auc, sensitivity,
                             specificity)


def brute_auc(scores, truths):
    pos = [s for s, t in zip(scores, truths) if t == 1]
    neg = [s for s, t in zip(scores, truths) if t == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_confusion_examples():
    c = confusion([1, 0, 1, 1], [1, 0, 0, 1])
    assert c == BinaryConfusion(tp=2, tn=1, fp=1, fn=0) and c.total == 4
    assert accuracy(c) == 0.75 and sensitivity(c) == 1.0 and specificity(c) == 0.5
    assert sensitivity(BinaryConfusion(3, 0, 0, 1)) == 0.75
    c0 = confusion([1, 0, 1, 1], [1, 0, 0, 1], positive=0)
    assert (c0.tp, c0.fn) == (1, 1)


def test_undefined_metrics_are_none():
    c = confusion([0, 1], [0, 0])
    assert sensitivity(c) is None and specificity(c) == 0.5
    assert accuracy(BinaryConfusion(0, 0, 0, 0)) is None
    rep = evaluation_report([0, 0], [0, 0], scores=[0.1, 0.2])
    assert set(rep["undefined_metrics"]) == {"sensitivity", "auc"}


def test_confusion_errors():
    with pytest.raises(ValueError):
        confusion([0, 1], [0])
    with pytest.raises(ValueError):
        confusion([0, 2], [0, 1])


def test_auc_examples():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert roc_auc([0.1, 0.2], [1, 1]) is None


def test_auc_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 51))
        truths = rng.integers(0, 2, n)
        truths[:2] = [0, 1]
        scores = rng.integers(0, 10, n) / 10.0  # coarse grid forces ties
        assert roc_auc(scores, truths) == brute_auc(scores, truths)


def test_auc_invariances():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = 30
        truths = rng.integers(0, 2, n)
        truths[:2] = [0, 1]
        scores = rng.standard_normal(n)
        a = roc_auc(scores, truths)
        assert roc_auc(np.exp(3 * scores) + 2, truths) == pytest.approx(a, abs=1e-15)
        assert a + roc_auc(scores, 1 - truths) == pytest.approx(1.0, abs=1e-12)


def test_auc_matches_trapezoid_roc():
    rng = np.random.default_rng(2)
    truths = rng.integers(0, 2, 100)
    scores = rng.standard_normal(100) + truths
    order = np.argsort(-scores)
    tpr = np.concatenate([[0], np.cumsum(truths[order] == 1) / truths.sum()])
    fpr = np.concatenate([[0], np.cumsum(truths[order] == 0) / (100 - truths.sum())])
    assert roc_auc(scores, truths) == pytest.approx(np.trapezoid(tpr, fpr), abs=1e-12)
