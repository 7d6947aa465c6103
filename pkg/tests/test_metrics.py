import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import metrics_brute as _brute
from twopath.metrics import (
    EvalReport,
    confusion_matrix,
    kappa,
    normalize_rows,
    overall_accuracy,
    precision_per_class,
)

EXAMPLE = [[4, 1], [2, 3]]


def test_worked_example():
    assert precision_per_class(EXAMPLE).tolist() == pytest.approx([4 / 6, 3 / 4])
    assert overall_accuracy(EXAMPLE) == pytest.approx(0.7)
    assert kappa(EXAMPLE) == pytest.approx(0.4)


def test_precision_examples():
    assert precision_per_class([[3, 0], [1, 5]])[0] == 0.75
    assert precision_per_class(np.diag([3, 4, 5])).tolist() == [1, 1, 1]
    assert precision_per_class([[2, 0], [3, 0]]).tolist() == [0.4, 0.0]


def test_accuracy_examples():
    assert overall_accuracy(np.diag([2, 5])) == 1.0
    assert overall_accuracy([[0, 3], [4, 0]]) == 0.0
    with pytest.raises(ValueError):
        overall_accuracy(np.zeros((2, 2)))


def test_kappa_examples():
    assert kappa(np.diag([3, 2])) == 1.0
    assert kappa([[1, 1], [1, 1]]) == 0.0
    assert kappa([[5, 0], [0, 0]]) == 0.0  # chance agreement is total
    with pytest.raises(ValueError):
        kappa(np.zeros((3, 3)))


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_rows(np.eye(3, dtype=int)), np.eye(3))
    np.testing.assert_array_equal(normalize_rows([[2, 2], [0, 0]]), [[0.5, 0.5], [0, 0]])
    cm = np.random.default_rng(0).integers(0, 20, size=(5, 5))
    np.testing.assert_allclose(normalize_rows(cm).sum(axis=1), 1, atol=1e-12)


def test_rejects_malformed_matrices():
    with pytest.raises(ValueError):
        precision_per_class(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        normalize_rows([[1, -1], [0, 1]])


def test_confusion_rows_are_truth():
    cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    assert cm.tolist() == [[0, 2], [0, 1]]


def test_thousand_random_matrices_against_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        k = int(rng.integers(1, 6))
        cm = rng.integers(0, 8, size=(k, k))
        if cm.sum() == 0:
            cm[0, 0] = 1
        prec, p_o, kap, truth, pred = _brute(cm)
        np.testing.assert_allclose(precision_per_class(cm), [float(p) for p in prec], atol=1e-12)
        assert overall_accuracy(cm) == pytest.approx(float(p_o), abs=1e-12)
        assert kappa(cm) == pytest.approx(float(kap), abs=1e-12)
        again = EvalReport.from_predictions(truth, pred, k)
        assert again.oa == pytest.approx(overall_accuracy(cm), abs=1e-12)
        assert again.kappa == pytest.approx(kappa(cm), abs=1e-12)
        np.testing.assert_array_equal(again.counts, cm)


square = st.integers(1, 6).flatmap(lambda k: arrays(np.int64, (k, k), elements=st.integers(0, 30)))


@settings(max_examples=200, deadline=None)
@given(square)
def test_metric_ranges(cm):
    if cm.sum() == 0:
        return
    prec = precision_per_class(cm)
    assert np.all((prec >= 0) & (prec <= 1))
    k = kappa(cm)
    assert -1 - 1e-12 <= k <= 1 + 1e-12
    rows = normalize_rows(cm).sum(axis=1)
    support = cm.sum(axis=1) > 0
    np.testing.assert_allclose(rows[support], 1, atol=1e-9)
    assert np.all(rows[~support] == 0)


@settings(max_examples=200, deadline=None)
@given(square)
def test_kappa_one_exactly_for_informative_diagonals(cm):
    if cm.sum() == 0:
        return
    diagonal = np.count_nonzero(cm - np.diag(np.diag(cm))) == 0
    # a diagonal with a single populated class has p_e = 1, where kappa is defined as 0
    informative = np.count_nonzero(np.diag(cm)) >= 2
    assert (kappa(cm) == pytest.approx(1.0)) == (diagonal and informative)


def test_report_text_round_trip():
    report = EvalReport.from_confusion(EXAMPLE, ["up", "down"])
    text = report.to_text()
    lines = text.splitlines()
    assert lines[0].startswith("up,") and lines[2] == "OA,0.7" and lines[3].startswith("kappa,")
    assert len(lines) == 6
    back = EvalReport.from_text(text)
    assert back.class_names == ["up", "down"]
    np.testing.assert_array_equal(back.precision, report.precision)
    np.testing.assert_array_equal(back.normalized, report.normalized)
    assert back.oa == report.oa and back.kappa == report.kappa
