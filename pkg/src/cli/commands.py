"""
One function per subcommand.

Each command validates the merged configuration, writes effective_config.yaml
next to its outputs, runs its pipeline stage and returns the written paths.
"""
import logging
import time
from dataclasses import dataclass
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from src.analysis.bloch import band_structure, bloch_projection, middle_band_weight, standing_wave_score
from src.analysis.detector import (
    SELF_LOCALIZED_CLASSES,
    ClassificationReport,
    StateClass,
    classify_spectrum,
    fraction_scan,
    reconstruct,
    refine_chi,
    summarize_reports,
)
from src.analysis.dynamics import project_onto_initial_eigenstates, run_protocol
from src.analysis.observables import correlations, one_body_density_matrix
from src.analysis.spectstats import POISSON_MEAN, SpacingStatistics, aggregate, build_ensemble, poisson_reference
from src.models.model import ModelParams, build_hamiltonian, describe
from src.models.spectral import eigh
from src.utils.config import Config
from src.utils.errors import EmptyEnsembleError
from src.utils.failure_tracker import FailureReason, FailureTracker
from src.utils.output_writer import (
    OutputWriter,
    correlation_frames,
    density_frame,
    eigenvalue_frame,
    eigenvector_frame,
    matrix_frame,
)
from src.utils.params_validator import ParamsValidator
from src.utils.thread_pool_manager import ParallelTaskRunner, resolve_worker_count

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    """Per-command plumbing: output writer, worker pool and failure tracker."""
    config: Config
    writer: OutputWriter
    runner: ParallelTaskRunner
    tracker: FailureTracker

    def finish(self) -> List[str]:
        self.writer.write_failures(self.tracker)
        stats = self.runner.get_pool_stats()
        if stats['completed_tasks'] or stats['failed_tasks']:
            logger.info(
                f"Worker pool: {stats['completed_tasks']} completed, {stats['failed_tasks']} failed, "
                f"{stats['total_task_seconds']}s task time on {stats['max_workers']} workers"
            )
        return self.writer.written


def prepare(config: Config, command: str) -> RunContext:
    ParamsValidator.require_valid(config.config, command)
    writer = OutputWriter(config.get_output_dir(), config.get_output_format())
    config.save_config(writer.path("effective_config.yaml"))
    writer.written.append(writer.path("effective_config.yaml"))
    runner = ParallelTaskRunner(resolve_worker_count(None, config.get_max_threads()))
    logger.info(f"Running {command} into {config.get_output_dir()}")
    return RunContext(config, writer, runner, FailureTracker())


def cmd_spectrum(config: Config) -> List[str]:
    """Eigenvalues of H, with optional matrix and eigenvector dumps."""
    ctx = prepare(config, "spectrum")
    params = config.get_model_params()
    cap = config.get_basis_cap()
    options = config.get_output_options()

    started = time.time()
    H = build_hamiltonian(params, cap)
    system = eigh(H)
    logger.info(f"Diagonalized {describe(params, H.basis)} in {time.time() - started:.1f}s")

    ctx.writer.write_table("eigenvalues", eigenvalue_frame(system))
    if options["dump_matrix"]:
        ctx.writer.write_table("hamiltonian", matrix_frame(H))
    if options["dump_eigenvectors"]:
        ctx.writer.write_table("eigenvectors", eigenvector_frame(system, H.basis))
    ctx.writer.write_json("summary.json", {
        'params': params.to_dict(),
        'dimension': H.dimension,
        'ground_energy': system.eigenvalues[0] if len(system) else None,
        'max_energy': system.eigenvalues[-1] if len(system) else None,
    })
    return ctx.finish()


def cmd_classify(config: Config) -> List[str]:
    """Classification report for every eigenstate plus class fractions."""
    ctx = prepare(config, "classify")
    params = config.get_model_params()
    thresholds = config.get_thresholds()
    options = config.get_detector_options()

    reports = classify_spectrum(
        params, thresholds, options["include_pair_breaking"], options["exclude_edges"], config.get_basis_cap()
    )
    counts = summarize_reports(reports)
    total = len(reports)

    ctx.writer.write_jsonl("classification.jsonl", (report.to_record() for report in reports))
    accepted = [
        {
            'index': report.index,
            'energy': report.energy,
            'class': report.state_class.value,
            'localized_sites': " ".join(str(site) for site in report.localized_sites),
            'fidelity_reconstruction': report.fidelity_reconstruction,
            'fidelity_effective': report.fidelity_effective,
            'ipr_chi': report.ipr_chi,
            'ipr_phi': report.ipr_phi,
        }
        for report in reports if report.is_self_localized
    ]
    ctx.writer.write_table("self_localized", accepted, columns=[
        'index', 'energy', 'class', 'localized_sites', 'fidelity_reconstruction',
        'fidelity_effective', 'ipr_chi', 'ipr_phi',
    ])
    ctx.writer.write_json("summary.json", {
        'params': params.to_dict(),
        'thresholds': thresholds.to_dict(),
        'total': total,
        'counts': counts,
        'fractions': {name: (count / total if total else 0.0) for name, count in counts.items()},
        'self_localized': sum(counts[c.value] for c in SELF_LOCALIZED_CLASSES),
        'edge_states': sum(1 for report in reports if report.edge_state),
    })

    settings = config.section("classify")
    if settings.get("correlations"):
        selected = [r for r in reports if r.is_self_localized][:int(settings.get("max_correlation_states", 10))]
        _write_correlations(ctx, params, selected, int(settings.get("max_order", 3)),
                            bool(settings.get("effective_comparison", True)), options["include_pair_breaking"])
    return ctx.finish()


def _write_correlations(
    ctx: RunContext,
    params: ModelParams,
    reports: List[ClassificationReport],
    max_order: int,
    effective_comparison: bool,
    include_pair_breaking: bool
) -> None:
    """Correlation tables of selected eigenstates, and of their effective-model reconstructions."""
    if not reports:
        return
    cap = ctx.config.get_basis_cap()
    order = min(max_order, params.N)
    system = eigh(build_hamiltonian(params, cap))
    for report in reports:
        state = system.state(report.index)
        sets = {'exact': correlations(state, order)}
        if effective_comparison and report.phi is not None:
            chi, fidelity = refine_chi(state, report.phi, params, include_pair_breaking, cap)
            sets['effective'] = correlations(reconstruct(report.phi, chi.values, cap), order)
            logger.info(f"State {report.index}: effective-model fidelity {fidelity:.6f}")
        for source, correlation_set in sets.items():
            for name, frame in correlation_frames(correlation_set).items():
                ctx.writer.write_table(f"{name}_state{report.index}_{source}", frame)
        profiles = {'density': sets['exact'].c1}
        if report.phi is not None:
            profiles['phi_density'] = np.abs(report.phi) ** 2
        if report.chi is not None:
            profiles['chi_density'] = one_body_density_matrix(report.chi).diagonal().real
        ctx.writer.write_table(f"profiles_state{report.index}", density_frame(profiles))


def cmd_scan(config: Config) -> List[str]:
    """Class fractions over the configured parameter grid."""
    ctx = prepare(config, "scan")
    options = config.get_detector_options()
    grid = config.get_scan_grid()

    rows = fraction_scan(
        grid, config.get_model_params(), config.get_thresholds(), ctx.runner,
        options["include_pair_breaking"], options["exclude_edges"], config.get_basis_cap(), ctx.tracker,
    )
    ctx.writer.write_table("fractions", [row.to_record() for row in rows])
    logger.info(f"Scan finished: {len(rows)}/{len(grid)} grid points succeeded")
    return ctx.finish()


def _histogram_frame(stats: SpacingStatistics) -> pd.DataFrame:
    hist = stats.histogram
    return pd.DataFrame({
        'left': hist.edges[:-1],
        'right': hist.edges[1:],
        'center': hist.centers,
        'density': hist.densities,
        'poisson': poisson_reference(hist.centers),
    })


def cmd_rstats(config: Config) -> List[str]:
    """Effective-Hamiltonian ensembles and their level-spacing ratio statistics, one per U."""
    ctx = prepare(config, "rstats")
    cap = config.get_basis_cap()
    summary: Dict[str, Any] = {'poisson_mean': POISSON_MEAN, 'ensembles': {}}

    for U in config.get_ensemble_U_values():
        ensemble = config.get_ensemble_config(U)
        samples = build_ensemble(ensemble, ctx.runner, ctx.tracker, cap)
        label = f"U{U:g}"
        if not samples:
            ctx.tracker.track_failure(label, FailureReason.EMPTY_ENSEMBLE, f"No samples at U={U:g}", {'U': U})
            continue
        stats = aggregate(samples, ensemble.exclude_gap_edges, ensemble.gap_count, ensemble.bins)
        ctx.writer.write_table(f"r_values_{label}", pd.DataFrame({'r': stats.r_values}))
        ctx.writer.write_table(f"histogram_{label}", _histogram_frame(stats))
        ctx.writer.write_table(f"samples_{label}", [
            {'xi': sample.xi, 'energy': sample.energy, 'fidelity': sample.fidelity} for sample in samples
        ])
        summary['ensembles'][label] = {'U': U, 'window_units': ensemble.window_units, **stats.to_summary()}
        logger.info(f"U={U:g}: <r> = {stats.mean_r:.4f} +- {stats.standard_error:.4f} from {len(samples)} samples")

    ctx.writer.write_json("rstats_summary.json", summary)
    paths = ctx.finish()
    if not summary['ensembles']:
        raise EmptyEnsembleError("Every ensemble was empty; see failures.json")
    return paths


def cmd_bloch(config: Config) -> List[str]:
    """Band structure and Bloch projections of two-particle self-localized states."""
    ctx = prepare(config, "bloch")
    params = config.get_model_params()
    bands = band_structure(params.with_overrides(N=1, boundary="periodic"))
    ctx.writer.write_table("bands", bands.to_records())

    states: List[Dict[str, Any]] = []
    if config.section("bloch").get("classify_phi", True):
        options = config.get_detector_options()
        reports = classify_spectrum(
            params.with_particles(2), config.get_thresholds(), options["include_pair_breaking"],
            options["exclude_edges"], config.get_basis_cap(),
        )
        projections = []
        for report in reports:
            if report.state_class != StateClass.TWO_PARTICLE_ALL:
                continue
            weights = bloch_projection(report.phi, bands)
            projections.extend({'state': report.index, **row} for row in weights.to_records())
            states.append({
                'state': report.index,
                'energy': report.energy,
                'standing_wave_score': standing_wave_score(weights),
                'middle_band_weight': middle_band_weight(weights),
            })
        ctx.writer.write_table("projections", projections, columns=['state', 'band', 'k', 'weight'])

    ctx.writer.write_json("bloch_summary.json", {
        'params': params.to_dict(),
        'band_widths': bands.band_widths(),
        'states': states,
        'min_standing_wave_score': min((s['standing_wave_score'] for s in states), default=None),
        'min_middle_band_weight': min((s['middle_band_weight'] for s in states), default=None),
    })
    return ctx.finish()


def cmd_protocol(config: Config) -> List[str]:
    """Protocol runs over the configured U values plus the comparison runs."""
    ctx = prepare(config, "protocol")
    kind = config.get_protocol_kind()
    base = config.get_model_params(N=3)
    main_values = config.get_protocol_U_values()
    compare_values = [U for U in config.get_compare_U_values() if U not in main_values]
    cap = config.get_basis_cap()

    def run(U: float):
        params = base.with_overrides(U=U)
        return run_protocol(kind, config.get_schedule(kind, params), params, cap=cap)

    tasks = ctx.runner.map(run, main_values + compare_values, label=f"{kind.value}-protocol")
    results = {}
    for U, task in zip(main_values + compare_values, tasks):
        if task.succeeded:
            results[U] = task.result
        else:
            ctx.tracker.track_exception(f"U={U:g}", task.error, {'U': U})

    failed_main = [U for U in main_values if U not in results]
    if failed_main:
        ctx.finish()
        raise tasks[main_values.index(failed_main[0])].error

    runs = []
    for U, result in results.items():
        label = f"U{U:g}"
        ctx.writer.write_table(f"timeseries_{label}", result.record.to_records())
        entry = result.summary()
        if U in main_values and config.section("protocol").get("project", True):
            table = project_onto_initial_eigenstates(result.state_at_T2, result.lattice, config.get_thresholds())
            ctx.writer.write_table(f"projection_{label}", table.to_records())
            entry['projection_on_selflocalized'] = table.self_localized_probability()
            entry['projection_by_class'] = table.class_probabilities()
            entry['dominant_states'] = table.dominant()
        runs.append(entry)

    reference = max((r['retention'] for r in runs if r['U'] in compare_values), default=0.0)
    if reference > 0:
        for entry in runs:
            if entry['U'] in main_values:
                entry['retention_ratio'] = entry['retention'] / reference

    ctx.writer.write_json("protocol_summary.json", {
        'kind': kind.value,
        'schedule': config.get_schedule(kind, base).to_dict(),
        'runs': runs,
    })
    return ctx.finish()


COMMANDS = {
    'spectrum': cmd_spectrum,
    'classify': cmd_classify,
    'scan': cmd_scan,
    'rstats': cmd_rstats,
    'bloch': cmd_bloch,
    'protocol': cmd_protocol,
}
