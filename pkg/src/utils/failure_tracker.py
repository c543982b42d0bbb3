"""
Failure tracking for grid scans and ensemble builds.
A failing grid point is recorded with its reason instead of aborting the whole run.
"""
import json
import logging
import threading
from enum import Enum
from typing import Dict, List

from src.utils.errors import (
    CapacityError,
    ConfigError,
    ConvergenceError,
    EmptyEnsembleError,
    NonHermitianError,
    NormDriftError,
    NumericalContractError,
)

logger = logging.getLogger(__name__)


class FailureReason(Enum):
    """Enumeration of possible failure reasons."""
    CAPACITY_EXCEEDED = "Fock basis exceeds the configured cap"
    NON_HERMITIAN = "Hamiltonian is not Hermitian"
    NO_CONVERGENCE = "Decomposition did not converge"
    NORM_DRIFT = "Time evolution lost unitarity"
    CONTRACT_VIOLATION = "Numerical contract violated"
    INVALID_PARAMETERS = "Invalid parameters for this grid point"
    EMPTY_ENSEMBLE = "No self-localized states found"
    UNKNOWN_ERROR = "Unknown error occurred"

    @classmethod
    def from_exception(cls, error: Exception) -> "FailureReason":
        """Map an exception to the closest failure reason."""
        mapping = [
            (CapacityError, cls.CAPACITY_EXCEEDED),
            (NonHermitianError, cls.NON_HERMITIAN),
            (ConvergenceError, cls.NO_CONVERGENCE),
            (NormDriftError, cls.NORM_DRIFT),
            (NumericalContractError, cls.CONTRACT_VIOLATION),
            (EmptyEnsembleError, cls.EMPTY_ENSEMBLE),
            (ConfigError, cls.INVALID_PARAMETERS),
            (ValueError, cls.INVALID_PARAMETERS),
        ]
        for error_type, reason in mapping:
            if isinstance(error, error_type):
                return reason
        return cls.UNKNOWN_ERROR


class FailureTracker:
    """Tracks failed tasks (grid points, samples, runs) with failure details."""

    def __init__(self):
        self.failures: Dict[str, Dict] = {}  # label -> {reason, error_msg, details}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.failures)

    def track_failure(self, label: str, reason: FailureReason,
                      error_msg: str = "", details: Dict = None):
        """
        Track a failed task.

        Args:
            label: Task label (e.g. "U=20,V=10")
            reason: FailureReason enum
            error_msg: Detailed error message
            details: Parameters of the failing point
        """
        with self._lock:
            self.failures[label] = {
                'label': label,
                'reason': reason.value,
                'reason_code': reason.name,
                'error_message': error_msg,
                'details': details or {},
            }
        logger.warning(f"Failure tracked for {label}: {reason.value} - {error_msg}")

    def track_exception(self, label: str, error: Exception, details: Dict = None):
        self.track_failure(label, FailureReason.from_exception(error), str(error), details)

    def get_failed_labels(self) -> List[str]:
        """Get list of all failed task labels."""
        return list(self.failures.keys())

    def get_failures_by_reason(self, reason: FailureReason) -> List[str]:
        """Get all labels that failed for a specific reason."""
        return [label for label, info in self.failures.items()
                if info['reason_code'] == reason.name]

    def get_failure_summary(self) -> Dict:
        """Get summary of all failures."""
        summary = {
            'total_failures': len(self.failures),
            'failures_by_reason': {},
        }
        for label, info in self.failures.items():
            summary['failures_by_reason'].setdefault(info['reason_code'], []).append(label)
        return summary

    def export_failures(self) -> str:
        """Export failures as a JSON string, keys sorted for stable output."""
        export_data = {
            'total_failures': len(self.failures),
            'failures': self.failures,
        }
        return json.dumps(export_data, indent=2, sort_keys=True)

    def get_formatted_failure_report(self) -> str:
        """Get human-readable failure report."""
        if not self.failures:
            return "No failures recorded."

        report = f"Failure Report ({len(self.failures)} failures)\n"
        report += "=" * 80 + "\n\n"

        summary = self.get_failure_summary()
        for reason_code, labels in summary['failures_by_reason'].items():
            report += f"\n{reason_code}: {len(labels)} failures\n"
            report += "-" * 80 + "\n"
            for label in sorted(labels):
                info = self.failures[label]
                report += f"  • {label}\n"
                report += f"    Error: {info['error_message']}\n\n"

        return report
