"""
Tests for configuration layering and run-config validation.
"""
import glob
import math
import os

import pytest
import yaml

from src.analysis.dynamics import ProtocolKind
from src.models.model import onsite_potential
from src.utils.config import DEFAULTS, OUTPUT_FORMATS, Config, load_config
from src.utils.errors import ConfigError
from src.utils.params_validator import ParamsValidator

ENV_VARIABLES = ("BOSELOC_THREADS", "BOSELOC_OUTPUT_DIR", "BOSELOC_BASIS_CAP", "BOSELOC_LOG_LEVEL")
CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config")


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for variable in ENV_VARIABLES:
        monkeypatch.delenv(variable, raising=False)


def _write(path, data) -> str:
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture
def base_file(tmp_path):
    return _write(tmp_path / "base.yaml", {
        'general': {'max_threads': 2, 'output_dir': 'from_base'},
        'model': {'L': 10, 'U': 5.0},
    })


def test_defaults_without_files(tmp_path):
    config = Config(config_file=str(tmp_path / "missing.yaml"))
    assert config.get_max_threads() == 1
    assert config.get_output_format() == "csv"
    params = config.get_model_params()
    assert (params.L, params.N, params.U, params.V) == (28, 3, 20.0, 10.0)
    assert params.xi == pytest.approx(-math.pi / 4)


def test_layer_precedence(tmp_path, base_file, monkeypatch):
    run_file = _write(tmp_path / "run.yaml", {'general': {'output_dir': 'from_run'}, 'model': {'U': 7.5}})
    monkeypatch.setenv("BOSELOC_THREADS", "6")
    monkeypatch.setenv("BOSELOC_OUTPUT_DIR", "from_env")

    config = load_config(run_file, base_file)
    assert config.get_max_threads() == 6
    assert config.get_output_dir() == "from_run"
    assert config.get_model_params().L == 10
    assert config.get_model_params().U == 7.5

    config.set_value('general', 'output_dir', 'from_cli')
    config.set_value('general', 'max_threads', None)
    assert config.get_output_dir() == "from_cli"
    assert config.get_max_threads() == 6


def test_invalid_environment_value_is_ignored(tmp_path, monkeypatch):
    monkeypatch.setenv("BOSELOC_BASIS_CAP", "lots")
    config = Config(config_file=str(tmp_path / "missing.yaml"))
    assert config.get_basis_cap() == DEFAULTS['general']['basis_cap']


def test_missing_run_config_raises(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "nope.yaml"), str(tmp_path / "missing.yaml"))


def test_malformed_yaml_raises(tmp_path):
    broken = tmp_path / "broken.yaml"
    broken.write_text("model: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(str(broken), str(tmp_path / "missing.yaml"))
    listing = tmp_path / "listing.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(str(listing), str(tmp_path / "missing.yaml"))


def test_scan_grid_expansion(tmp_path):
    run_file = _write(tmp_path / "scan.yaml", {
        'scan': {'grid': {'U': {'start': 0.0, 'stop': 20.0, 'num': 3}, 'V': [0.0, 10.0]}},
    })
    grid = load_config(run_file, str(tmp_path / "missing.yaml")).get_scan_grid()
    assert len(grid) == 6
    assert grid[0] == {'U': 0.0, 'V': 0.0}
    assert grid[1] == {'U': 0.0, 'V': 10.0}
    assert grid[-1] == {'U': 20.0, 'V': 10.0}


def test_scan_grid_rejects_unknown_axis(tmp_path):
    run_file = _write(tmp_path / "scan.yaml", {'scan': {'grid': {'L': [4, 8]}}})
    with pytest.raises(ConfigError):
        load_config(run_file, str(tmp_path / "missing.yaml")).get_scan_grid()


def test_typed_records(tmp_path):
    run_file = _write(tmp_path / "run.yaml", {
        'thresholds': {'fidelity_min': 0.95},
        'ensemble': {'U_values': [10, 50], 'ipr_phi_max': 0.05},
        'protocol': {'kind': 'independent', 'T3': 300.0, 'J_prime': 2.0},
    })
    config = load_config(run_file, str(tmp_path / "missing.yaml"))
    assert config.get_thresholds().fidelity_min == 0.95

    ensemble = config.get_ensemble_config(U=50.0)
    assert ensemble.params.N == 2 and ensemble.params.U == 50.0
    assert ensemble.thresholds.ipr_phi_max == 0.05
    assert config.get_ensemble_U_values() == [10.0, 50.0]

    assert config.get_protocol_kind() == ProtocolKind.INDEPENDENT
    schedule = config.get_schedule(params=config.get_model_params(L=12))
    assert schedule.attach_sites == (2, 10)
    assert schedule.T3 == 300.0
    assert schedule.J_prime_values == (0.0, 2.0, 0.0)


def test_unknown_threshold_raises(tmp_path):
    run_file = _write(tmp_path / "run.yaml", {'thresholds': {'made_up': 0.5}})
    with pytest.raises(ConfigError):
        load_config(run_file, str(tmp_path / "missing.yaml")).get_thresholds()


def test_save_config_writes_merged_values(tmp_path):
    config = Config(config_file=str(tmp_path / "missing.yaml"))
    config.set_value('model', 'U', 3.0)
    target = tmp_path / "out" / "effective_config.yaml"
    config.save_config(str(target))
    saved = yaml.safe_load(target.read_text())
    assert saved['model']['U'] == 3.0
    assert saved['general']['output_format'] == 'csv'


def test_validator_accepts_defaults():
    is_valid, status, issues = ParamsValidator.validate_run_config(DEFAULTS, "spectrum")
    assert is_valid, issues
    assert status == "Valid"


def test_validator_reports_each_category():
    cfg = {**DEFAULTS, 'model': {**DEFAULTS['model'], 'p': 2, 'q': 4}}
    del cfg['model']['boundary']
    is_valid, _, issues = ParamsValidator.validate_run_config(cfg, "spectrum")
    assert not is_valid
    categorized = ParamsValidator.categorize_issues(issues)
    assert any('boundary' in issue for issue in categorized['MISSING'])
    assert any('coprime' in issue for issue in categorized['INVALID'])


def test_validator_checks_command_sections():
    bloch = {**DEFAULTS, 'model': {**DEFAULTS['model'], 'L': 30}}
    _, _, issues = ParamsValidator.validate_run_config(bloch, "bloch")
    assert [ParamsValidator.get_issue_category(issue) for issue in issues] == ['INCONSISTENT']

    protocol = {**DEFAULTS, 'protocol': {**DEFAULTS['protocol'], 'T2': 50.0}}
    _, _, issues = ParamsValidator.validate_run_config(protocol, "protocol")
    assert any(issue.startswith('INCONSISTENT') for issue in issues)

    _, _, issues = ParamsValidator.validate_run_config(DEFAULTS, "scan")
    assert "MISSING: scan.grid" in issues


def test_require_valid_raises_config_error():
    cfg = {**DEFAULTS, 'general': {**DEFAULTS['general'], 'output_format': 'xml'}}
    with pytest.raises(ConfigError):
        ParamsValidator.require_valid(cfg, "spectrum")


def test_validator_and_config_share_output_formats(tmp_path):
    for fmt in OUTPUT_FORMATS:
        cfg = {**DEFAULTS, 'general': {**DEFAULTS['general'], 'output_format': fmt.upper()}}
        assert ParamsValidator.validate_run_config(cfg, "spectrum")[0]
        config = Config(config_file=str(tmp_path / "missing.yaml"))
        config.set_value('general', 'output_format', fmt.upper())
        assert config.get_output_format() == fmt


@pytest.mark.parametrize("recipe", sorted(glob.glob(os.path.join(CONFIG_DIR, "recipes", "protocol_*.yaml"))))
def test_protocol_recipes_ramp_below_attach_site_potential(recipe):
    with open(recipe) as f:
        assert "ends at V_s-6" in f.read()
    config = load_config(recipe, os.path.join(CONFIG_DIR, "config.yaml"))
    params = config.get_model_params(N=3)
    schedule = config.get_schedule(params=params)
    site_potential = onsite_potential(params, schedule.attach_sites[0])
    assert schedule.V_A_segments[-1][1] == pytest.approx(site_potential - 6.0)
