"""
Run configuration validation.
Identifies missing, invalid or inconsistent parameters before any numerics start.
"""
import logging
import math
from typing import Any, Dict, List, Tuple

from src.analysis.dynamics import ProtocolKind
from src.analysis.spectstats import WINDOW_UNITS
from src.models.model import BOUNDARIES
from src.utils.config import OUTPUT_FORMATS
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

COMMANDS = ("spectrum", "classify", "scan", "rstats", "bloch", "protocol")
MODEL_FIELDS = ("L", "N", "J", "U", "V", "p", "q", "xi", "boundary")


def _is_number(value: Any) -> bool:
    try:
        return math.isfinite(float(value))
    except (TypeError, ValueError):
        return False


class ParamsValidator:
    """Validates merged run configurations."""

    @staticmethod
    def validate_run_config(cfg: Dict[str, Any], command: str = "spectrum") -> Tuple[bool, str, List[str]]:
        """
        Validate a merged configuration for one subcommand.

        Returns:
            (is_valid, status_message, list_of_issues)
        """
        issues: List[str] = []

        if not cfg:
            return False, "Configuration is empty", ["MISSING: configuration"]
        if command not in COMMANDS:
            issues.append(f"INVALID: unknown command '{command}'")

        issues.extend(ParamsValidator._check_general(cfg.get('general') or {}))
        model = cfg.get('model') or {}
        issues.extend(ParamsValidator._check_model(model))
        issues.extend(ParamsValidator._check_thresholds(cfg.get('thresholds') or {}))

        if command == "scan":
            issues.extend(ParamsValidator._check_scan(cfg.get('scan') or {}))
        elif command == "rstats":
            issues.extend(ParamsValidator._check_ensemble(cfg.get('ensemble') or {}))
        elif command == "bloch":
            L, q = model.get('L'), model.get('q')
            if _is_number(L) and _is_number(q) and int(q) > 0 and int(L) % int(q) != 0:
                issues.append(f"INCONSISTENT: bloch needs L divisible by q, got L={L}, q={q}")
        elif command == "protocol":
            issues.extend(ParamsValidator._check_protocol(cfg.get('protocol') or {}, model))

        if not issues:
            return True, "Valid", []

        categorized = ParamsValidator.categorize_issues(issues)
        status = " | ".join(
            f"{category.title()}: {len(found)}" for category, found in categorized.items() if found
        )
        return False, status, issues

    @staticmethod
    def _check_general(general: Dict[str, Any]) -> List[str]:
        issues = []
        fmt = str(general.get('output_format', 'csv')).lower()
        if fmt not in OUTPUT_FORMATS:
            issues.append(f"INVALID: output_format '{fmt}' not in {OUTPUT_FORMATS}")
        threads = general.get('max_threads', 1)
        if not _is_number(threads) or int(threads) < 1:
            issues.append(f"INVALID: max_threads must be a positive integer, got {threads!r}")
        cap = general.get('basis_cap', 1)
        if not _is_number(cap) or int(cap) < 1:
            issues.append(f"INVALID: basis_cap must be a positive integer, got {cap!r}")
        return issues

    @staticmethod
    def _check_model(model: Dict[str, Any]) -> List[str]:
        issues = []
        for field in MODEL_FIELDS:
            if field not in model or model[field] is None:
                issues.append(f"MISSING: model.{field}")

        L, N, p, q = (model.get(k) for k in ('L', 'N', 'p', 'q'))
        if L is not None and (not _is_number(L) or int(L) < 1):
            issues.append(f"INVALID: model.L must be >= 1, got {L!r}")
        if N is not None and (not _is_number(N) or int(N) < 0):
            issues.append(f"INVALID: model.N must be >= 0, got {N!r}")
        if _is_number(p) and _is_number(q):
            if int(p) < 1 or int(q) < 1:
                issues.append(f"INVALID: p and q must be positive, got p={p}, q={q}")
            elif math.gcd(int(p), int(q)) != 1:
                issues.append(f"INVALID: p/q = {p}/{q} is not coprime")
        for field in ('J', 'U', 'V'):
            if field in model and not _is_number(model[field]):
                issues.append(f"INVALID: model.{field} must be a finite number, got {model[field]!r}")
        xi = model.get('xi')
        if xi is not None and xi != "auto" and not _is_number(xi):
            issues.append(f"INVALID: model.xi must be a number or 'auto', got {xi!r}")
        boundary = model.get('boundary')
        if boundary is not None and boundary not in BOUNDARIES:
            issues.append(f"INVALID: model.boundary '{boundary}' not in {BOUNDARIES}")
        return issues

    @staticmethod
    def _check_thresholds(thresholds: Dict[str, Any]) -> List[str]:
        issues = []
        for name, value in thresholds.items():
            if name == 'require_effective_fidelity':
                continue
            if not _is_number(value):
                issues.append(f"INVALID: thresholds.{name} must be numeric, got {value!r}")
            elif name == 'ratio_max':
                if float(value) < 1.0:
                    issues.append(f"INVALID: thresholds.ratio_max must be >= 1, got {value}")
            elif not 0.0 < float(value) <= 1.0:
                issues.append(f"INVALID: thresholds.{name} must lie in (0, 1], got {value}")
        return issues

    @staticmethod
    def _check_scan(scan: Dict[str, Any]) -> List[str]:
        grid = scan.get('grid')
        if not grid:
            return ["MISSING: scan.grid"]
        issues = []
        for name, axis in grid.items():
            if name not in ('U', 'V', 'xi', 'J'):
                issues.append(f"INVALID: scan.grid.{name} is not a scannable parameter")
            if isinstance(axis, dict):
                values = [axis.get('start'), axis.get('stop'), axis.get('num')]
            elif isinstance(axis, list):
                values = axis
            else:
                values = [axis]
            if not all(_is_number(v) for v in values):
                issues.append(f"INVALID: scan.grid.{name} contains non-finite values")
        return issues

    @staticmethod
    def _check_ensemble(ensemble: Dict[str, Any]) -> List[str]:
        issues = []
        for name in ('window_halfwidth', 'sample_step'):
            value = ensemble.get(name)
            if value is None:
                issues.append(f"MISSING: ensemble.{name}")
            elif not _is_number(value) or float(value) <= 0:
                issues.append(f"INVALID: ensemble.{name} must be positive, got {value!r}")
        units = ensemble.get('window_units', 'xi')
        if units not in WINDOW_UNITS:
            issues.append(f"INVALID: ensemble.window_units '{units}' not in {WINDOW_UNITS}")
        if not ensemble.get('U_values'):
            issues.append("MISSING: ensemble.U_values")
        return issues

    @staticmethod
    def _check_protocol(protocol: Dict[str, Any], model: Dict[str, Any]) -> List[str]:
        issues = []
        kind = protocol.get('kind', 'correlated')
        if kind not in [k.value for k in ProtocolKind]:
            issues.append(f"INVALID: protocol.kind '{kind}'")
        times = [protocol.get(name) for name in ('T1', 'T2', 'T3')]
        if not all(_is_number(t) for t in times):
            issues.append("MISSING: protocol.T1, T2 and T3")
        elif not 0 < float(times[0]) < float(times[1]) < float(times[2]):
            issues.append(f"INCONSISTENT: need 0 < T1 < T2 < T3, got {times}")
        dt = protocol.get('dt')
        if not _is_number(dt) or float(dt) <= 0:
            issues.append(f"INVALID: protocol.dt must be positive, got {dt!r}")
        L = model.get('L')
        sites = list(protocol.get('attach_sites') or []) + [protocol.get('walk_start_site', 1)]
        if _is_number(L) and any(not _is_number(s) or not 1 <= int(s) <= int(L) for s in sites):
            issues.append(f"INCONSISTENT: protocol sites {sites} must lie in 1..{L}")
        return issues

    @staticmethod
    def get_issue_category(issue: str) -> str:
        """Categorize an issue type."""
        for category in ('MISSING', 'INCONSISTENT'):
            if issue.startswith(category):
                return category
        return 'INVALID'

    @staticmethod
    def categorize_issues(issues: List[str]) -> Dict[str, List[str]]:
        """Categorize all issues by type."""
        categorized: Dict[str, List[str]] = {'MISSING': [], 'INVALID': [], 'INCONSISTENT': []}
        for issue in issues:
            categorized[ParamsValidator.get_issue_category(issue)].append(issue)
        return categorized

    @staticmethod
    def require_valid(cfg: Dict[str, Any], command: str) -> None:
        """Raise ConfigError listing every issue when the configuration is invalid."""
        is_valid, status, issues = ParamsValidator.validate_run_config(cfg, command)
        if not is_valid:
            for issue in issues:
                logger.error(issue)
            raise ConfigError(f"Invalid configuration ({status}): " + "; ".join(issues))
