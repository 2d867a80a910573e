import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, f1_score, precision_score, recall_score

from lpgnet.errors import ContractError
from lpgnet.metrics import MetricsReport, compute_metrics, confusion_matrix, report_from_confusion


def test_two_class_by_hand():
    r = report_from_confusion([[2, 1], [0, 3]])
    assert r.accuracy == 5 / 6
    assert r.f1[0] == pytest.approx(0.8, abs=1e-15)
    assert r.f1[1] == pytest.approx(6 / 7, abs=1e-15)
    assert r.macro_f1 == pytest.approx((0.8 + 6 / 7) / 2, abs=1e-15)
    assert round(r.macro_f1, 4) == 0.8286
    assert r.precision == [1.0, 0.75]
    assert r.recall == [2 / 3, 1.0]
    assert r.weighted_f1 == pytest.approx((3 * 0.8 + 3 * 6 / 7) / 6, abs=1e-15)


def test_perfect_classifier():
    y = [0, 1, 2, 3, 3, 2]
    r = compute_metrics(y, y, 4)
    assert r.accuracy == 1.0 and r.macro_f1 == 1.0 and r.weighted_f1 == 1.0
    assert r.ova_binary_accuracy == 1.0 and r.f1 == [1.0] * 4


def test_perfectly_wrong_binary():
    r = compute_metrics([0, 1, 0, 1], [1, 0, 1, 0], 2)
    assert r.ova_binary_accuracy == 0.0 and r.accuracy == 0.0


def test_absent_class_scores_zero():
    r = compute_metrics([0, 0, 1], [0, 0, 1], 3)
    assert r.f1[2] == 0.0 and r.precision[2] == 0.0 and r.recall[2] == 0.0
    assert r.ova_accuracy[2] == 1.0


def test_ova_accuracy_by_hand():
    cm = np.array([[5, 1, 0], [2, 3, 1], [0, 0, 4]])
    r = report_from_confusion(cm)
    total = cm.sum()
    for k in range(3):
        tp = cm[k, k]
        fp = cm[:, k].sum() - tp
        fn = cm[k].sum() - tp
        tn = total - tp - fp - fn
        assert r.ova_accuracy[k] == (tp + tn) / total


@pytest.mark.parametrize("num_classes", [4, 6])
@given(data=st.data())
def test_agrees_with_direct_counting(num_classes, data):
    n = data.draw(st.integers(1, 60))
    y_true = np.array(data.draw(st.lists(st.integers(0, num_classes - 1), min_size=n, max_size=n)))
    y_pred = np.array(data.draw(st.lists(st.integers(0, num_classes - 1), min_size=n, max_size=n)))
    r = compute_metrics(y_true, y_pred, num_classes)
    labels = list(range(num_classes))
    assert sum(map(sum, r.confusion)) == n
    assert r.accuracy == pytest.approx(accuracy_score(y_true, y_pred), abs=1e-15)
    assert r.accuracy == np.trace(np.array(r.confusion)) / n
    kw = dict(labels=labels, zero_division=0, average=None)
    np.testing.assert_allclose(r.f1, f1_score(y_true, y_pred, **kw), rtol=0, atol=1e-12)
    np.testing.assert_allclose(r.precision, precision_score(y_true, y_pred, **kw), rtol=0, atol=1e-12)
    np.testing.assert_allclose(r.recall, recall_score(y_true, y_pred, **kw), rtol=0, atol=1e-12)
    assert r.macro_f1 == pytest.approx(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0), abs=1e-12)
    assert r.weighted_f1 == pytest.approx(
        f1_score(y_true, y_pred, labels=labels, average="weighted", zero_division=0), abs=1e-12)
    ova = [np.mean((y_true == k) == (y_pred == k)) for k in labels]
    np.testing.assert_allclose(r.ova_accuracy, ova, rtol=0, atol=1e-15)


def test_empty_set_rejected():
    with pytest.raises(ContractError):
        compute_metrics([], [], 4)


def test_out_of_range_labels():
    with pytest.raises(ContractError):
        confusion_matrix([0, 4], [0, 1], 4)
    with pytest.raises(ContractError):
        confusion_matrix([0, 1], [0], 4)


def test_json_round_trip_and_table():
    r = compute_metrics([0, 1, 2, 3, 4, 5], [0, 1, 2, 3, 5, 4], 6, labels=list("abcdef"))
    assert MetricsReport.from_json(r.to_json()) == r
    table = r.format_table()
    assert "accuracy" in table and "66.67" in table
    assert table.count("\n") > 12
    assert r.total == 6
