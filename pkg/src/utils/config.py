"""
Configuration management for boseloc runs.

This module provides a central Config class that merges, in increasing priority:
1. Built-in defaults
2. The base configuration file (config/config.yaml)
3. Environment variables (BOSELOC_THREADS, BOSELOC_OUTPUT_DIR, BOSELOC_BASIS_CAP, BOSELOC_LOG_LEVEL)
4. The run configuration passed with --config
5. Command-line flags (applied through set_value)

Getters turn the merged dictionary into the typed parameter records used by the pipeline.
"""

import copy
import logging
import math
import os
from itertools import product
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from src.analysis.detector import ScreeningThresholds
from src.analysis.dynamics import ProtocolKind, ProtocolSchedule
from src.analysis.spectstats import EnsembleConfig
from src.models.fockspace import DEFAULT_BASIS_CAP
from src.models.model import ModelParams
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = "config/config.yaml"
OUTPUT_FORMATS = ("csv", "json")

ENV_OVERRIDES = {
    "BOSELOC_THREADS": ("general", "max_threads", int),
    "BOSELOC_OUTPUT_DIR": ("general", "output_dir", str),
    "BOSELOC_BASIS_CAP": ("general", "basis_cap", int),
    "BOSELOC_LOG_LEVEL": ("general", "log_level", str),
}

DEFAULTS: Dict[str, Any] = {
    "general": {
        "max_threads": 1,
        "output_dir": "results",
        "output_format": "csv",
        "log_level": "INFO",
        "basis_cap": DEFAULT_BASIS_CAP,
    },
    "model": {
        "L": 28,
        "N": 3,
        "J": 1.0,
        "U": 20.0,
        "V": 10.0,
        "p": 1,
        "q": 4,
        "xi": "auto",  # -pi * p / q
        "boundary": "open",
    },
    "thresholds": ScreeningThresholds().to_dict(),
    "detector": {
        "include_pair_breaking": False,
        "exclude_edges": True,
    },
    "scan": {
        "grid": {},
    },
    "ensemble": {
        "U_values": [10.0, 50.0, 100.0],
        "xi_centers": None,  # pi/4 + n pi/2
        "window_halfwidth": 0.002 * math.pi,
        "sample_step": 2.0 * math.pi * 5e-5,
        "window_units": "xi",
        "exclude_gap_edges": True,
        "gap_count": 2,
        "bins": 20,
        "max_samples_per_window": None,
        "ipr_phi_max": 0.06,
    },
    "classify": {
        "correlations": False,
        "max_correlation_states": 10,
        "max_order": 3,
        "effective_comparison": True,
    },
    "bloch": {
        "classify_phi": True,
    },
    "protocol": {
        "kind": "correlated",
        "T1": 84.0,
        "T2": 104.0,
        "T3": 184.0,
        "walk_start_site": 5,
        "attach_sites": None,
        "V_A_segments": None,
        "V_bias": 200.0,
        "J_prime": None,
        "dt": 0.002,
        "sample_interval": 1.0,
        "U_values": None,
        "compare_U": [0.0],
        "project": True,
    },
    "output": {
        "dump_matrix": False,
        "dump_eigenvectors": False,
    },
}


def _expand_axis(name: str, spec: Any) -> List[float]:
    """Grid axis from a list, a scalar, or a {start, stop, num} mapping (linspace, inclusive)."""
    if isinstance(spec, dict):
        try:
            values = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as e:
            raise ConfigError(f"scan.grid.{name} needs start, stop and num: missing {e}") from e
        return [float(v) for v in values]
    if isinstance(spec, (list, tuple)):
        return [float(v) for v in spec]
    return [float(spec)]


class Config:
    """
    Configuration manager for boseloc.

    Handles loading defaults, the base config file, environment variables
    and a per-run config file.
    """

    def __init__(self, config_file: Optional[str] = None, run_config: Optional[str] = None):
        self.config_file = config_file or DEFAULT_CONFIG_FILE
        self.run_config = run_config
        self.config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Merge defaults, base file, environment and run config."""
        config = copy.deepcopy(DEFAULTS)

        base = self._read_yaml(self.config_file, required=False)
        if base:
            self._merge_configs(config, base)

        self._apply_environment(config)

        if self.run_config:
            run = self._read_yaml(self.run_config, required=True)
            if run:
                self._merge_configs(config, run)

        return config

    @staticmethod
    def _read_yaml(path: str, required: bool) -> Optional[Dict[str, Any]]:
        if not os.path.exists(path):
            if required:
                raise ConfigError(f"Config file not found: {path}")
            logger.debug(f"No base config at {path}, using built-in defaults")
            return None
        try:
            with open(path, "r") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Error loading config from {path}: {e}") from e
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a mapping, got {type(data).__name__}")
        return data

    @staticmethod
    def _apply_environment(config: Dict[str, Any]) -> None:
        for variable, (section, key, cast) in ENV_OVERRIDES.items():
            raw = os.environ.get(variable)
            if raw in (None, ""):
                continue
            try:
                config[section][key] = cast(raw)
            except ValueError:
                logger.warning(f"Ignoring invalid {variable}={raw!r}")

    def _merge_configs(self, base: Dict[str, Any], override: Dict[str, Any]) -> None:
        """Recursively merge override dict into base dict."""
        for key, value in override.items():
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._merge_configs(base[key], value)
            else:
                base[key] = value

    def set_value(self, section: str, key: str, value: Any) -> None:
        """Apply a command-line override; None leaves the merged value in place."""
        if value is not None:
            self.config.setdefault(section, {})[key] = value

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self.config.get(name) or {})

    def save_config(self, path: str) -> None:
        """Write the effective, fully merged configuration."""
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            yaml.safe_dump(self.config, f, default_flow_style=False, sort_keys=True)

    # General settings methods
    def get_max_threads(self) -> int:
        """Get maximum number of worker threads."""
        return int(self.config["general"]["max_threads"])

    def get_output_dir(self) -> str:
        return str(self.config["general"]["output_dir"])

    def get_output_format(self) -> str:
        fmt = str(self.config["general"]["output_format"]).lower()
        if fmt not in OUTPUT_FORMATS:
            raise ConfigError(f"output_format must be one of {OUTPUT_FORMATS}, got '{fmt}'")
        return fmt

    def get_log_level(self) -> str:
        return str(self.config["general"]["log_level"]).upper()

    def get_basis_cap(self) -> int:
        return int(self.config["general"]["basis_cap"])

    # Typed records
    def get_model_params(self, **overrides: Any) -> ModelParams:
        """ModelParams from the model section; xi 'auto' resolves to -pi p / q."""
        values = self.section("model")
        values.update(overrides)
        if values.get("xi") in (None, "auto"):
            values["xi"] = -math.pi * int(values["p"]) / int(values["q"])
        try:
            return ModelParams(
                L=int(values["L"]), N=int(values["N"]), J=float(values["J"]),
                U=float(values["U"]), V=float(values["V"]), p=int(values["p"]),
                q=int(values["q"]), xi=float(values["xi"]), boundary=str(values["boundary"]),
            )
        except KeyError as e:
            raise ConfigError(f"model section is missing {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid model parameter: {e}") from e

    def get_thresholds(self) -> ScreeningThresholds:
        try:
            return ScreeningThresholds(**self.section("thresholds"))
        except TypeError as e:
            raise ConfigError(f"Unknown threshold in config: {e}") from e

    def get_detector_options(self) -> Dict[str, bool]:
        detector = self.section("detector")
        return {
            "include_pair_breaking": bool(detector.get("include_pair_breaking", False)),
            "exclude_edges": bool(detector.get("exclude_edges", True)),
        }

    def get_scan_grid(self) -> List[Dict[str, float]]:
        """Cartesian product of the configured axes, in the order they are written."""
        grid_spec = self.section("scan").get("grid") or {}
        if not isinstance(grid_spec, dict):
            raise ConfigError("scan.grid must map parameter names to values")
        unknown = set(grid_spec) - {"U", "V", "xi", "J"}
        if unknown:
            raise ConfigError(f"scan.grid supports U, V, xi and J, got {sorted(unknown)}")
        names = list(grid_spec)
        axes = [_expand_axis(name, grid_spec[name]) for name in names]
        return [dict(zip(names, values)) for values in product(*axes)]

    def get_ensemble_config(self, U: Optional[float] = None) -> EnsembleConfig:
        ensemble = self.section("ensemble")
        params = self.get_model_params(N=2, **({"U": U} if U is not None else {}))
        thresholds = self.get_thresholds().for_ensembles(float(ensemble.get("ipr_phi_max", 0.06)))
        values: Dict[str, Any] = dict(
            params=params,
            window_halfwidth=float(ensemble["window_halfwidth"]),
            sample_step=float(ensemble["sample_step"]),
            window_units=str(ensemble["window_units"]),
            thresholds=thresholds,
            exclude_gap_edges=bool(ensemble["exclude_gap_edges"]),
            gap_count=int(ensemble["gap_count"]),
            bins=int(ensemble["bins"]),
            max_samples_per_window=ensemble.get("max_samples_per_window"),
            include_pair_breaking=self.get_detector_options()["include_pair_breaking"],
        )
        if ensemble.get("xi_centers"):
            values["xi_centers"] = tuple(float(x) for x in ensemble["xi_centers"])
        return EnsembleConfig(**values)

    def get_ensemble_U_values(self) -> List[float]:
        return [float(u) for u in self.section("ensemble").get("U_values") or [self.get_model_params().U]]

    def get_protocol_kind(self) -> ProtocolKind:
        kind = self.section("protocol").get("kind", "correlated")
        try:
            return ProtocolKind(kind)
        except ValueError as e:
            raise ConfigError(f"protocol.kind must be correlated or independent, got '{kind}'") from e

    def get_schedule(self, kind: Optional[ProtocolKind] = None, params: Optional[ModelParams] = None) -> ProtocolSchedule:
        """ProtocolSchedule for the protocol section; unset entries take the kind's defaults."""
        kind = ProtocolKind(kind) if kind is not None else self.get_protocol_kind()
        params = params or self.get_model_params(N=3)
        protocol = self.section("protocol")
        overrides: Dict[str, Any] = {
            "T1": float(protocol["T1"]),
            "T2": float(protocol["T2"]),
            "T3": float(protocol["T3"]),
            "walk_start_site": int(protocol["walk_start_site"]),
            "dt": float(protocol["dt"]),
            "sample_interval": float(protocol["sample_interval"]),
            "V_bias": float(protocol["V_bias"]),
        }
        if protocol.get("attach_sites"):
            overrides["attach_sites"] = tuple(int(s) for s in protocol["attach_sites"])
        if protocol.get("V_A_segments"):
            overrides["V_A_segments"] = tuple((float(t), float(v)) for t, v in protocol["V_A_segments"])
        if protocol.get("J_prime") is not None:
            overrides["J_prime_values"] = (0.0, float(protocol["J_prime"]), 0.0)
        return ProtocolSchedule.default(kind, params, **overrides)

    def get_protocol_U_values(self) -> List[float]:
        values = self.section("protocol").get("U_values")
        return [float(u) for u in values] if values else [self.get_model_params().U]

    def get_compare_U_values(self) -> List[float]:
        return [float(u) for u in self.section("protocol").get("compare_U") or []]

    def get_output_options(self) -> Dict[str, bool]:
        output = self.section("output")
        return {
            "dump_matrix": bool(output.get("dump_matrix", False)),
            "dump_eigenvectors": bool(output.get("dump_eigenvectors", False)),
        }


def load_config(run_config: Optional[str] = None, config_file: Optional[str] = None) -> Config:
    """
    Load configuration and return a Config instance.

    Args:
        run_config: Optional per-run YAML file (highest file priority)
        config_file: Optional base config file. Uses config/config.yaml if not specified.
    Returns:
        Config instance with every layer merged
    """
    return Config(config_file, run_config)

