import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn import metrics as skm

from rlhgnn.metrics import (
    accuracy,
    confusion_matrix,
    gmean,
    gmean_per_class,
    macro_f1,
    per_class_report,
)


def _gmean_oracle(y_true, y_pred, labels):
    """One-vs-rest per class by counting, then averaged."""
    vals = []
    for c in labels:
        tp = sum(t == c and p == c for t, p in zip(y_true, y_pred))
        fn = sum(t == c and p != c for t, p in zip(y_true, y_pred))
        fp = sum(t != c and p == c for t, p in zip(y_true, y_pred))
        tn = len(y_true) - tp - fn - fp
        sens = tp / (tp + fn) if tp + fn else 0.0
        spec = tn / (tn + fp) if tn + fp else 0.0
        vals.append((sens * spec) ** 0.5)
    return sum(vals) / len(vals)


def test_two_class_example():
    cm = np.array([[5, 5], [0, 10]])
    assert accuracy(cm) == 0.75
    # F1 = 2/3 and 4/5
    assert macro_f1(cm) == pytest.approx((2 / 3 + 0.8) / 2, abs=1e-15)
    assert gmean_per_class(cm).tolist() == pytest.approx([0.5**0.5, 0.5**0.5])


def test_confusion_uses_union_of_classes():
    cm, labels = confusion_matrix([1, 1, 2], [1, 3, 2])
    assert labels.tolist() == [1, 2, 3]
    assert cm.tolist() == [[1, 0, 1], [0, 1, 0], [0, 0, 0]]


def test_class_never_seen_counts_as_zero_and_is_flagged():
    cm, labels = confusion_matrix([0, 1], [0, 1], labels=[0, 1, 2])
    assert macro_f1(cm) == pytest.approx(2 / 3)
    report = per_class_report(cm, labels)
    assert [r.undefined for r in report] == [False, False, True]
    assert report[0].support == 1


def test_empty_and_mismatched_inputs():
    assert accuracy(np.zeros((2, 2))) == 0.0
    with pytest.raises(ValueError):
        confusion_matrix([1, 2], [1])


@pytest.mark.filterwarnings("ignore:A single label")
def test_random_label_sets_against_independent_routes():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, c = rng.integers(1, 60), rng.integers(1, 7)
        yt, yp = rng.integers(0, c, n), rng.integers(0, c, n)
        cm, labels = confusion_matrix(yt, yp)
        assert np.array_equal(cm, skm.confusion_matrix(yt, yp, labels=labels))
        assert abs(accuracy(cm) - skm.accuracy_score(yt, yp)) < 1e-12
        sk_f1 = skm.f1_score(yt, yp, labels=labels, average="macro", zero_division=0)
        assert abs(macro_f1(cm) - sk_f1) < 1e-12
        assert abs(gmean(cm) - _gmean_oracle(yt.tolist(), yp.tolist(), labels.tolist())) < 1e-12


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=50))
def test_metric_ranges(pairs):
    yt, yp = zip(*pairs)
    cm, _ = confusion_matrix(yt, yp)
    assert cm.sum() == len(pairs)
    for v in (accuracy(cm), macro_f1(cm), gmean(cm)):
        assert 0.0 <= v <= 1.0
    if list(yt) == list(yp):
        assert accuracy(cm) == macro_f1(cm) == 1.0
