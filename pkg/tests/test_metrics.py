import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afcn.errors import MetricError
from afcn.metrics import (ConfusionMatrix, confusion, metrics_row, per_class_recall,
                          unweighted_accuracy, weighted_accuracy, write_confusion_csv,
                          write_metrics_csv)


def cm(rows):
    return ConfusionMatrix(np.array(rows, dtype=np.int64))


def test_confusion_examples():
    assert np.array_equal(confusion([0, 1, 2, 3], [0, 1, 2, 3]).counts, np.eye(4))
    assert not confusion([], []).counts.any()
    m = confusion([0, 0], [0, 1])
    assert m.counts[0, 0] == 1 and m.counts[1, 0] == 1 and m.total == 2
    with pytest.raises(ValueError):
        confusion([0], [0, 1])


def test_wa_examples():
    assert weighted_accuracy(cm([[8, 2], [1, 1]])) == 0.75
    assert weighted_accuracy(cm(np.eye(3) * 4)) == 1.0
    assert weighted_accuracy(cm([[0, 3], [2, 0]])) == 0.0
    with pytest.raises(MetricError):
        weighted_accuracy(cm(np.zeros((2, 2))))


def test_ua_examples():
    assert unweighted_accuracy(cm([[8, 2], [1, 1]])) == pytest.approx(0.65, abs=1e-15)
    assert unweighted_accuracy(cm([[2, 0, 0], [0, 0, 0], [1, 0, 1]])) == 0.75
    assert np.isnan(per_class_recall(cm([[1, 0], [0, 0]]))[1])
    with pytest.raises(MetricError):
        unweighted_accuracy(cm(np.zeros((3, 3))))


def balanced(seed, k=4, n=12):
    rng = np.random.default_rng(seed)
    rows = [rng.multinomial(n, rng.dirichlet(np.ones(k))) for _ in range(k)]
    return cm(rows)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_wa_equals_ua_balanced(seed):
    m = balanced(seed)
    assert weighted_accuracy(m) == pytest.approx(unweighted_accuracy(m), abs=1e-15)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance_and_range(seed):
    rng = np.random.default_rng(seed)
    m = cm(rng.integers(0, 6, (4, 4)))
    if m.total == 0:
        return
    perm = rng.permutation(4)
    p = cm(m.counts[np.ix_(perm, perm)])
    assert weighted_accuracy(p) == weighted_accuracy(m)
    assert unweighted_accuracy(p) == pytest.approx(unweighted_accuracy(m), abs=1e-15)
    assert 0 <= weighted_accuracy(m) <= 1
    assert 0 <= unweighted_accuracy(m) <= 1


def test_csv_output(tmp_path):
    m = cm([[3, 1, 0, 0], [0, 4, 0, 0], [0, 0, 0, 0], [1, 0, 0, 3]])
    write_metrics_csv(tmp_path / "m.csv", [metrics_row(0, m)])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "fold,wa,ua,recall_neutral,recall_happy,recall_sad,recall_angry"
    assert lines[1] == "0,0.833333,0.833333,0.750000,1.000000,,0.750000"
    write_confusion_csv(tmp_path / "c.csv", m + m)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[1] == "neutral,6,2,0,0"
