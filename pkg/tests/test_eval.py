from pathlib import Path

import numpy as np
import pytest

from painseq.errors import DataError, ShapeError
from painseq.evaluate import (ConfusionMatrix, EvalReport, confusion, majority_vote,
                              metrics, parse_csv_report, parse_json_report,
                              render_report)
from painseq.verify import brute_force_vote

GOLDEN = Path(__file__).parent / "golden_report.txt"


def paper_layout_reports():
    """Reports mirroring the published validation table, for layout checks."""
    return [
        EvalReport(model="Baseline (Video)", split="validation", accuracy=0.40),
        EvalReport(model="Baseline (fNIRS)", split="validation", accuracy=0.43),
        EvalReport(model="Simple ANN + Voting", split="validation", accuracy=0.59,
                   precision=np.array([0.10, 0.60, 0.66]),
                   recall=np.array([0.17, 0.67, 0.55]),
                   f1=np.array([0.12, 0.63, 0.60])),
        EvalReport(model="LSTM", split="validation", accuracy=0.60,
                   precision=np.array([0.24, 0.59, 0.71]),
                   recall=np.array([0.42, 0.74, 0.49]),
                   f1=np.array([0.30, 0.65, 0.58])),
    ]


class TestMajorityVote:
    def test_unanimous(self):
        probs = np.tile([0.1, 0.1, 0.8], (4, 1))
        assert majority_vote(probs) == 2

    def test_mode_by_counting(self):
        rows = {0: [0.9, 0.05, 0.05], 1: [0.05, 0.9, 0.05], 2: [0.05, 0.05, 0.9]}
        probs = np.array([rows[c] for c in [0, 1, 1, 2, 1]])
        assert majority_vote(probs) == 1

    def test_tie_broken_by_probability_mass(self):
        # argmax counts tied 2-2 between classes 0 and 1; class 1 holds more mass
        probs = np.array([
            [0.51, 0.48, 0.01],
            [0.51, 0.48, 0.01],
            [0.02, 0.95, 0.03],
            [0.02, 0.95, 0.03],
        ])
        assert majority_vote(probs) == 1

    def test_exact_tie_falls_to_lower_index(self):
        probs = np.array([[0.6, 0.3, 0.1], [0.3, 0.6, 0.1]])
        assert majority_vote(probs) == 0

    def test_empty_input_rejected(self):
        with pytest.raises(DataError):
            majority_vote(np.zeros((0, 3)))

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(500):
            n = int(rng.integers(1, 9))
            probs = rng.random((n, 3))
            probs /= probs.sum(axis=1, keepdims=True)
            assert majority_vote(probs) == brute_force_vote(probs)


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        labels = np.repeat([0, 1, 2], 5)
        cm = confusion(labels, labels)
        assert np.array_equal(cm.counts, np.diag([5, 5, 5]))

    def test_all_predicted_class_zero(self):
        true = np.repeat([0, 1, 2], 3)
        cm = confusion(np.zeros(9, dtype=int), true)
        assert np.array_equal(cm.counts[:, 0], [3, 3, 3])
        assert cm.counts[:, 1:].sum() == 0

    def test_order_independent(self):
        rng = np.random.default_rng(0)
        pred = rng.integers(0, 3, 50)
        true = rng.integers(0, 3, 50)
        perm = rng.permutation(50)
        assert confusion(pred, true) == confusion(pred[perm], true[perm])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            confusion(np.zeros(3, dtype=int), np.zeros(4, dtype=int))

    def test_invalid_label_rejected(self):
        with pytest.raises(DataError):
            confusion(np.array([0, 3]), np.array([0, 1]))


class TestMetrics:
    def test_perfect_diagonal(self):
        report = metrics(ConfusionMatrix(np.diag([10, 10, 10])))
        assert report.accuracy == 1.0
        assert np.all(report.precision == 1.0)
        assert np.all(report.recall == 1.0)
        assert np.all(report.f1 == 1.0)

    def test_hand_computed_matrix(self):
        cm = ConfusionMatrix(np.array([[5, 5, 0], [0, 10, 0], [0, 5, 5]]))
        report = metrics(cm)
        assert np.array_equal(report.recall, [0.5, 1.0, 0.5])
        assert np.array_equal(report.precision, [1.0, 0.5, 1.0])
        assert abs(report.accuracy - 20 / 30) < 1e-12

    def test_degenerate_class_flagged(self):
        # class 2 never true and never predicted
        cm = ConfusionMatrix(np.array([[5, 0, 0], [0, 5, 0], [0, 0, 0]]))
        report = metrics(cm)
        assert report.precision[2] == 0.0 and report.recall[2] == 0.0
        assert report.f1[2] == 0.0
        assert any("HighPain" in flag for flag in report.degenerate)

    def test_macro_is_unweighted_mean(self):
        cm = ConfusionMatrix(np.array([[5, 5, 0], [0, 10, 0], [0, 5, 5]]))
        report = metrics(cm)
        assert report.macro_recall == pytest.approx(np.mean([0.5, 1.0, 0.5]))

    def test_trace_identities(self):
        rng = np.random.default_rng(1)
        counts = rng.integers(0, 20, size=(3, 3))
        counts[0, 0] += 1  # non-empty
        cm = ConfusionMatrix(counts)
        report = metrics(cm)
        assert report.accuracy == pytest.approx(np.trace(counts) / counts.sum())
        for c in range(3):
            if counts[c].sum():
                assert report.recall[c] == pytest.approx(counts[c, c] / counts[c].sum())

    def test_class_permutation_invariance(self):
        rng = np.random.default_rng(2)
        counts = rng.integers(1, 20, size=(3, 3))
        perm = np.array([2, 0, 1])
        base = metrics(ConfusionMatrix(counts))
        permuted = metrics(ConfusionMatrix(counts[np.ix_(perm, perm)]))
        assert np.allclose(permuted.precision, base.precision[perm])
        assert np.allclose(permuted.recall, base.recall[perm])
        assert permuted.accuracy == pytest.approx(base.accuracy)


class TestRendering:
    def test_text_layout_matches_golden_fixture(self):
        document = render_report(paper_layout_reports(), "text")
        assert document == GOLDEN.read_text(encoding="utf-8")

    def test_paper_accuracy_cells(self):
        document = render_report(paper_layout_reports(), "text")
        lstm_row = next(l for l in document.splitlines() if l.startswith("LSTM"))
        assert lstm_row.endswith("0.60")
        test_row = render_report([EvalReport(model="Simple ANN + Voting",
                                             split="test", accuracy=0.49)], "text")
        assert test_row.splitlines()[3].endswith("0.49")

    def test_baseline_rows_have_blank_metric_cells(self):
        document = render_report(paper_layout_reports(), "text")
        baseline = next(l for l in document.splitlines() if l.startswith("Baseline (Video)"))
        cells = [c.strip() for c in baseline.split("|")]
        assert cells[1:4] == ["", "", ""]
        assert cells[4] == "0.40"

    def test_csv_roundtrip_fixed_point(self):
        reports = paper_layout_reports()
        document = render_report(reports, "csv")
        again = render_report(parse_csv_report(document), "csv")
        assert document == again

    def test_json_roundtrip_fixed_point(self):
        reports = paper_layout_reports()
        document = render_report(reports, "json")
        again = render_report(parse_json_report(document), "json")
        assert document == again

    def test_csv_schema(self):
        document = render_report(paper_layout_reports()[2:3], "csv")
        lines = document.strip().splitlines()
        assert lines[0] == "model,split,class,precision,recall,f1,accuracy"
        classes = [line.split(",")[2] for line in lines[1:]]
        assert classes == ["NoPain", "LowPain", "HighPain", "Avg"]

    def test_unknown_format_rejected(self):
        with pytest.raises(DataError):
            render_report(paper_layout_reports(), "xml")
