import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pillm.metrics import (
    ConfusionCounts,
    confusion,
    event_f1_pa,
    point_adjust,
    point_adjusted_report,
    pointwise_report,
    precision_recall_f1,
)
from pillm.timeseries import IncidentSet, incidents_from_labels

from . import reference

binary_vec = st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=20)


class TestConfusion:
    def test_hand_count(self):
        counts = confusion([1, 0, 1, 0], [1, 1, 0, 0])
        assert counts == ConfusionCounts(tp=1, fp=1, fn=1, tn=1)

    def test_identity(self):
        assert confusion([1, 1], [1, 1]) == ConfusionCounts(2, 0, 0, 0)

    def test_all_negative(self):
        assert confusion([0, 0], [0, 0]).tn == 2

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([1], [1, 0])

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            confusion([2], [0])

    @given(st.tuples(binary_vec, binary_vec))
    def test_matches_reference(self, pair):
        flags, labels = pair
        n = min(len(flags), len(labels))
        flags, labels = flags[:n], labels[:n]
        counts = confusion(flags, labels)
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == reference.confusion_brute(
            flags, labels
        )
        assert counts.tp + counts.fp + counts.fn + counts.tn == n


class TestPrecisionRecallF1:
    def test_worked_example(self):
        report = precision_recall_f1(ConfusionCounts(tp=3, fp=1, fn=2, tn=0))
        assert report.precision == pytest.approx(0.75, abs=1e-9)
        assert report.recall == pytest.approx(0.6, abs=1e-9)
        assert report.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35, abs=1e-9)
        assert report.f1 == pytest.approx(0.666667, abs=1e-6)

    def test_degenerate_zero_convention(self):
        report = precision_recall_f1(ConfusionCounts(0, 0, 0, 4))
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)

    def test_perfect(self):
        report = precision_recall_f1(ConfusionCounts(5, 0, 0, 0))
        assert report.f1 == 1.0

    def test_line_format(self):
        report = precision_recall_f1(ConfusionCounts(3, 1, 2, 0), mode="pointwise")
        assert (
            report.line()
            == "mode=pointwise precision=0.750000 recall=0.600000 f1=0.666667"
        )


class TestPointAdjust:
    def test_hand_application(self):
        out = point_adjust([0, 0, 0, 1, 0, 0], IncidentSet(((2, 4),)))
        assert list(out) == [0, 0, 1, 1, 1, 0]

    def test_missed_incident_unchanged(self):
        out = point_adjust([0, 0, 0, 0], IncidentSet(((1, 2),)))
        assert list(out) == [0, 0, 0, 0]

    def test_stray_flag_preserved(self):
        out = point_adjust([1, 0, 0, 1], IncidentSet(((1, 2),)))
        assert list(out) == [1, 0, 0, 1]

    def test_out_of_range_incident(self):
        with pytest.raises(ValueError):
            point_adjust([0, 1], IncidentSet(((1, 5),)))

    @given(st.tuples(binary_vec, binary_vec))
    def test_idempotent_and_monotone(self, pair):
        flags, labels = pair
        n = min(len(flags), len(labels))
        flags, labels = flags[:n], labels[:n]
        incidents = incidents_from_labels(labels)
        once = point_adjust(flags, incidents)
        twice = point_adjust(once, incidents)
        assert np.array_equal(once, twice)
        # PA never clears a flag.
        assert np.all(once >= np.asarray(flags, dtype=np.uint8))
        assert list(once) == reference.point_adjust_brute(flags, list(incidents))


class TestEventF1PA:
    def test_worked_eight_point_example(self):
        labels = [0, 1, 1, 0, 0, 1, 1, 0]
        flags = [0, 0, 1, 0, 1, 0, 0, 0]
        report = event_f1_pa(flags, labels)
        assert report.precision == pytest.approx(0.5, abs=1e-9)
        assert report.recall == pytest.approx(0.5, abs=1e-9)
        assert report.f1 == pytest.approx(0.5, abs=1e-9)

    def test_perfect_detector(self):
        labels = [0, 1, 1, 0, 1]
        report = event_f1_pa(labels, labels)
        assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)

    def test_silent_detector(self):
        report = event_f1_pa([0, 0, 0], [0, 1, 1])
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            event_f1_pa([0], [0, 1])

    @given(st.tuples(binary_vec, binary_vec))
    @settings(max_examples=300)
    def test_matches_reference(self, pair):
        flags, labels = pair
        n = min(len(flags), len(labels))
        flags, labels = flags[:n], labels[:n]
        report = event_f1_pa(flags, labels)
        p, r, f1 = reference.event_f1_pa_brute(flags, labels)
        assert report.precision == pytest.approx(p, abs=1e-12)
        assert report.recall == pytest.approx(r, abs=1e-12)
        assert report.f1 == pytest.approx(f1, abs=1e-12)
        for value in (report.precision, report.recall, report.f1):
            assert 0.0 <= value <= 1.0

    @given(st.tuples(binary_vec, binary_vec))
    def test_pa_never_hurts_pointwise_f1(self, pair):
        flags, labels = pair
        n = min(len(flags), len(labels))
        flags, labels = flags[:n], labels[:n]
        before = pointwise_report(flags, labels)
        after = point_adjusted_report(flags, labels)
        spans = incidents_from_labels(labels)
        partially_hit = any(
            any(flags[i] for i in range(start, end + 1)) for start, end in spans
        )
        if partially_hit:
            assert after.f1 >= before.f1 - 1e-12
