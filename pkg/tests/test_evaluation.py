import numpy as np
import pytest

from cstafnet import selfcheck
from cstafnet.errors import LabelError
from cstafnet.evaluation import (confusion, confusion_csv, format_report,
                                 predict_labels, report, report_dict)
from cstafnet.numerics import RngState


class TestPredictLabels:
    def test_argmax(self):
        assert predict_labels(np.array([[0.1, 0.7, 0.2]]), "multiclass")[0] == 1

    def test_tie_takes_first_index(self):
        assert predict_labels(np.array([[0.5, 0.5]]), "multiclass")[0] == 0

    def test_binary_threshold_inclusive(self):
        out = predict_labels(np.array([[0.5], [0.49]]), "binary")
        np.testing.assert_array_equal(out, [1, 0])


class TestConfusion:
    def test_hand_counts(self):
        cm = confusion([0, 1, 1], [0, 1, 0], 2)
        np.testing.assert_array_equal(cm.counts, [[1, 0], [1, 1]])

    def test_perfect_predictions_diagonal(self):
        y = np.array([0, 1, 2, 2, 1])
        cm = confusion(y, y, 3)
        np.testing.assert_array_equal(cm.counts, np.diag([1, 2, 2]))

    def test_binary_zero_misclassification_off_diagonals(self):
        cm = confusion([0, 1, 0, 1], [0, 1, 0, 1], 2)
        assert cm.counts[0, 1] == 0 and cm.counts[1, 0] == 0

    def test_out_of_range_label(self):
        with pytest.raises(LabelError, match="index 2"):
            confusion([0, 1, 5], [0, 1, 1], 2)


class TestReport:
    def test_hand_metrics(self):
        rep = report(confusion([0, 1, 1], [0, 1, 0], 2))
        np.testing.assert_allclose(rep.precision, [0.5, 1.0])
        np.testing.assert_allclose(rep.recall, [1.0, 0.5])
        np.testing.assert_allclose(rep.f1, [2 / 3, 2 / 3])
        assert abs(rep.accuracy - 2 / 3) < 1e-15
        assert abs(rep.macro["f1"] - 2 / 3) < 1e-15

    def test_diagonal_all_ones(self):
        rep = report(confusion([0, 1, 2], [0, 1, 2], 3))
        np.testing.assert_array_equal(rep.precision, np.ones(3))
        np.testing.assert_array_equal(rep.recall, np.ones(3))
        np.testing.assert_array_equal(rep.f1, np.ones(3))
        assert rep.accuracy == 1.0

    def test_zero_support_class_flagged_and_in_macro(self):
        # class 2 never appears in truth or predictions
        rep = report(confusion([0, 1], [0, 1], 3))
        assert rep.precision[2] == rep.recall[2] == rep.f1[2] == 0.0
        assert (2, "precision") in rep.undefined and (2, "recall") in rep.undefined
        assert abs(rep.macro["f1"] - 2 / 3) < 1e-15

    def test_weighted_recall_equals_accuracy_exactly(self):
        rng = RngState(90)
        for _ in range(20):
            n = 30 + int(rng.random() * 50)
            c = 2 + int(rng.random() * 13)
            y_true = (rng.random((n,)) * c).astype(np.int64)
            y_pred = (rng.random((n,)) * c).astype(np.int64)
            rep = report(confusion(y_true, y_pred, c))
            assert rep.weighted["recall"] == rep.accuracy

    def test_f1_between_precision_and_recall_or_zero(self):
        rng = RngState(91)
        for _ in range(20):
            y_true = (rng.random((40,)) * 4).astype(np.int64)
            y_pred = (rng.random((40,)) * 4).astype(np.int64)
            rep = report(confusion(y_true, y_pred, 4))
            for c in range(4):
                lo = min(rep.precision[c], rep.recall[c])
                hi = max(rep.precision[c], rep.recall[c])
                assert (rep.f1[c] == 0.0) or (lo - 1e-12 <= rep.f1[c] <= hi + 1e-12)

    def test_identity_labeling_all_ones(self):
        y = (RngState(92).random((50,)) * 5).astype(np.int64)
        rep = report(confusion(y, y, 5))
        assert (rep.precision[rep.support > 0] == 1.0).all()
        assert rep.accuracy == 1.0

    def test_brute_force_oracle_agrees(self):
        assert selfcheck.check_metric_oracle(n_pairs=1000, n_classes=15) == []


class TestSerialization:
    def test_human_report_has_average_rows(self):
        rep = report(confusion([0, 1, 1], [0, 1, 0], 2, ["attack", "normal"]))
        text = format_report(rep)
        assert "Macro Average" in text and "Weighted Average" in text
        assert "0.5000" in text  # four decimal places

    def test_machine_report_full_precision(self):
        rep = report(confusion([0, 1, 1], [0, 1, 0], 2))
        d = report_dict(rep)
        assert d["classes"][0]["f1"] == 2 / 3
        assert d["accuracy"] == 2 / 3
        assert d["total"] == 3

    def test_confusion_csv_layout(self):
        cm = confusion([0, 1], [1, 1], 2, ["a", "b"])
        lines = confusion_csv(cm).strip().split("\n")
        assert lines[0] == ",a,b"
        assert lines[1] == "a,0,1"
        assert lines[2] == "b,0,1"
