"""
Tests for failure tracking of grid points.
"""
import json

from src.utils.errors import CapacityError, ConfigError, DegenerateSpectrumError, NonHermitianError, NormDriftError
from src.utils.failure_tracker import FailureReason, FailureTracker


def test_reason_from_exception():
    assert FailureReason.from_exception(CapacityError("too big")) == FailureReason.CAPACITY_EXCEEDED
    assert FailureReason.from_exception(NonHermitianError("asym")) == FailureReason.NON_HERMITIAN
    assert FailureReason.from_exception(NormDriftError("drift")) == FailureReason.NORM_DRIFT
    assert FailureReason.from_exception(ConfigError("p/q")) == FailureReason.INVALID_PARAMETERS
    assert FailureReason.from_exception(DegenerateSpectrumError("dup")) == FailureReason.INVALID_PARAMETERS
    assert FailureReason.from_exception(RuntimeError("?")) == FailureReason.UNKNOWN_ERROR


def test_tracker_groups_failures_by_reason():
    tracker = FailureTracker()
    tracker.track_exception("U=5,V=0", CapacityError("cap"), {'U': 5.0, 'V': 0.0})
    tracker.track_exception("U=5,V=10", CapacityError("cap"))
    tracker.track_failure("U=50", FailureReason.EMPTY_ENSEMBLE, "no samples")

    assert len(tracker) == 3
    assert tracker.get_failed_labels() == ["U=5,V=0", "U=5,V=10", "U=50"]
    assert tracker.get_failures_by_reason(FailureReason.CAPACITY_EXCEEDED) == ["U=5,V=0", "U=5,V=10"]
    summary = tracker.get_failure_summary()
    assert summary['total_failures'] == 3
    assert summary['failures_by_reason']['EMPTY_ENSEMBLE'] == ["U=50"]


def test_export_is_stable_json():
    tracker = FailureTracker()
    tracker.track_failure("xi=0.1", FailureReason.NO_CONVERGENCE, "svd", {'xi': 0.1})
    exported = json.loads(tracker.export_failures())
    assert exported['total_failures'] == 1
    assert exported['failures']['xi=0.1']['details'] == {'xi': 0.1}
    assert tracker.export_failures() == tracker.export_failures()


def test_formatted_report():
    tracker = FailureTracker()
    assert tracker.get_formatted_failure_report() == "No failures recorded."
    tracker.track_failure("U=5", FailureReason.NORM_DRIFT, "norm 1.1")
    report = tracker.get_formatted_failure_report()
    assert "NORM_DRIFT: 1 failures" in report
    assert "norm 1.1" in report
