"""
Level-spacing ratio statistics for effective single-particle Hamiltonians.

r_m = min(d_m, d_m+1) / max(d_m, d_m+1),  d_m = E_m+1 - E_m
Poisson reference density P(r) = 2 / (1 + r)^2 with mean 2 ln 2 - 1.

The ensemble is built from two-particle self-localized eigenstates sampled in
narrow windows of the modulation phase xi: every accepted state contributes
one effective Hamiltonian H^(1) with potential V_j + 2U |phi_j|^2.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.analysis.detector import (
    ScreeningThresholds,
    StateClass,
    classify_spectrum,
)
from src.models.fockspace import DEFAULT_BASIS_CAP
from src.models.model import HamiltonianMatrix, ModelParams, build_effective_hamiltonian
from src.models.spectral import eigh
from src.utils.errors import ConfigError, DegenerateSpectrumError, EmptyEnsembleError
from src.utils.failure_tracker import FailureTracker
from src.utils.thread_pool_manager import ParallelTaskRunner, Task

logger = logging.getLogger(__name__)

POISSON_MEAN = 2.0 * math.log(2.0) - 1.0
WINDOW_UNITS = ("xi", "xi_over_2pi")
DEFAULT_XI_CENTERS = tuple(math.pi / 4 + n * math.pi / 2 for n in range(4))


@dataclass(frozen=True)
class Histogram:
    """Normalized histogram on [0, 1]."""
    edges: np.ndarray
    densities: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def integral(self) -> float:
        return float(np.sum(self.densities * self.widths))


@dataclass(frozen=True)
class SpacingStatistics:
    """Pooled r-values with histogram and mean."""
    r_values: np.ndarray
    mean_r: float
    excluded_count: int = 0
    histogram: Optional[Histogram] = None
    n_samples: int = 1

    @property
    def standard_error(self) -> float:
        n = self.r_values.size
        return float(np.std(self.r_values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf

    def to_summary(self) -> Dict[str, Any]:
        return {
            'mean_r': self.mean_r,
            'standard_error': self.standard_error,
            'n_samples': self.n_samples,
            'n_r_values': int(self.r_values.size),
            'excluded_count': self.excluded_count,
            'poisson_mean': POISSON_MEAN,
            'poisson_l1_distance': poisson_l1_distance(self.histogram) if self.histogram else None,
        }


@dataclass(frozen=True)
class EnsembleConfig:
    """xi-window ensemble of two-particle self-localized states."""
    params: ModelParams = ModelParams(L=64, N=2, J=1.0, U=50.0, V=10.0, p=1, q=4)
    xi_centers: Tuple[float, ...] = DEFAULT_XI_CENTERS
    window_halfwidth: float = 0.002 * math.pi
    sample_step: float = 2.0 * math.pi * 5e-5
    window_units: str = "xi"
    thresholds: ScreeningThresholds = field(default_factory=lambda: ScreeningThresholds().for_ensembles())
    exclude_gap_edges: bool = True
    gap_count: int = 2
    bins: int = 20
    max_samples_per_window: Optional[int] = None
    include_pair_breaking: bool = False

    def __post_init__(self):
        if self.window_halfwidth <= 0:
            raise ConfigError(f"window_halfwidth must be > 0, got {self.window_halfwidth}")
        if self.sample_step <= 0:
            raise ConfigError(f"sample_step must be > 0, got {self.sample_step}")
        if self.window_units not in WINDOW_UNITS:
            raise ConfigError(f"window_units must be one of {WINDOW_UNITS}, got '{self.window_units}'")
        if self.bins < 1 or self.gap_count < 0:
            raise ConfigError("bins must be >= 1 and gap_count >= 0")
        if not self.xi_centers:
            raise ConfigError("xi_centers must not be empty")

    @property
    def halfwidth_in_xi(self) -> float:
        """Window halfwidth in radians of xi under the configured reading of the window."""
        if self.window_units == "xi":
            return self.window_halfwidth
        return 2.0 * math.pi * self.window_halfwidth

    def xi_samples(self) -> np.ndarray:
        """All sampled xi values, window by window, ascending inside each window."""
        halfwidth = self.halfwidth_in_xi
        count = int(math.floor(2.0 * halfwidth / self.sample_step + 1e-9)) + 1
        if self.max_samples_per_window is not None:
            count = min(count, self.max_samples_per_window)
        offsets = -halfwidth + self.sample_step * np.arange(count)
        return np.concatenate([center + offsets for center in self.xi_centers])

    def with_overrides(self, **overrides: Any) -> "EnsembleConfig":
        return replace(self, **overrides)


@dataclass(frozen=True)
class EffectiveSample:
    """One accepted two-particle state and its effective single-particle Hamiltonian."""
    xi: float
    energy: float
    phi: np.ndarray
    hamiltonian: HamiltonianMatrix
    fidelity: Optional[float] = None


def r_ratios(levels: np.ndarray, exclude_gap_edges: bool = False, gap_count: int = 2) -> SpacingStatistics:
    """
    Adjacent-gap ratios of a sorted spectrum.

    With exclusion on, the r-values on either side of each of the gap_count
    largest spacings are dropped.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size < 3:
        raise ValueError(f"Need at least 3 levels, got {levels.size}")
    spacings = np.diff(levels)
    if np.any(spacings < 0):
        raise DegenerateSpectrumError("Levels are not sorted ascending")
    if np.any(spacings == 0):
        raise DegenerateSpectrumError(f"{int(np.sum(spacings == 0))} exactly degenerate level pairs")

    r = np.minimum(spacings[:-1], spacings[1:]) / np.maximum(spacings[:-1], spacings[1:])
    keep = np.ones(r.size, dtype=bool)
    if exclude_gap_edges and gap_count > 0:
        for gap in np.argsort(-spacings, kind="stable")[:gap_count]:
            for index in (gap - 1, gap):
                if 0 <= index < r.size:
                    keep[index] = False

    kept = r[keep]
    mean = float(np.mean(kept)) if kept.size else math.nan
    return SpacingStatistics(r_values=kept, mean_r=mean, excluded_count=int(r.size - kept.size))


def poisson_reference(r: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Folded-ratio Poisson density 2 / (1 + r)^2 on [0, 1]."""
    values = np.asarray(r, dtype=float)
    if np.any(values < 0) or np.any(values > 1) or np.any(~np.isfinite(values)):
        raise ValueError("poisson_reference is defined on [0, 1]")
    density = 2.0 / (1.0 + values) ** 2
    return float(density) if density.ndim == 0 else density


def poisson_mean() -> float:
    return POISSON_MEAN


def histogram(r_values: np.ndarray, bins: int = 20) -> Histogram:
    densities, edges = np.histogram(np.asarray(r_values), bins=bins, range=(0.0, 1.0), density=True)
    return Histogram(edges=edges, densities=densities)


def poisson_l1_distance(hist: Histogram) -> float:
    """L1 distance between a histogram and the Poisson density, using exact bin integrals."""
    a, b = hist.edges[:-1], hist.edges[1:]
    expected = 2.0 * (1.0 / (1.0 + a) - 1.0 / (1.0 + b))
    return float(np.sum(np.abs(hist.densities * hist.widths - expected)))


def aggregate_levels(
    spectra: Sequence[np.ndarray],
    exclude_gap_edges: bool = True,
    gap_count: int = 2,
    bins: int = 20
) -> SpacingStatistics:
    """Pool r-values from several sorted spectra."""
    if not spectra:
        raise EmptyEnsembleError("Cannot aggregate an empty ensemble")
    parts = [r_ratios(levels, exclude_gap_edges, gap_count) for levels in spectra]
    pooled = np.concatenate([part.r_values for part in parts])
    if pooled.size == 0:
        raise EmptyEnsembleError("Ensemble produced no r-values")
    return SpacingStatistics(
        r_values=pooled,
        mean_r=float(np.mean(pooled)),
        excluded_count=sum(part.excluded_count for part in parts),
        histogram=histogram(pooled, bins),
        n_samples=len(parts),
    )


def aggregate(
    hamiltonians: Sequence[Union[HamiltonianMatrix, EffectiveSample, np.ndarray]],
    exclude_gap_edges: bool = True,
    gap_count: int = 2,
    bins: int = 20
) -> SpacingStatistics:
    """Diagonalize every effective Hamiltonian and pool the r-values."""
    if not hamiltonians:
        raise EmptyEnsembleError("Cannot aggregate an empty ensemble")
    spectra = []
    for item in hamiltonians:
        matrix = item.hamiltonian if isinstance(item, EffectiveSample) else item
        spectra.append(eigh(matrix).eigenvalues)
    return aggregate_levels(spectra, exclude_gap_edges, gap_count, bins)


def _ensemble_point(
    params: ModelParams,
    thresholds: ScreeningThresholds,
    include_pair_breaking: bool,
    cap: int
) -> List[EffectiveSample]:
    reports = classify_spectrum(params, thresholds, include_pair_breaking, exclude_edges=True, cap=cap)
    reduced = params.with_particles(params.N - 1)
    samples = []
    for report in reports:
        if report.state_class != StateClass.TWO_PARTICLE_ALL:
            continue
        samples.append(EffectiveSample(
            xi=params.xi,
            energy=float(report.energy),
            phi=report.phi,
            hamiltonian=build_effective_hamiltonian(reduced, report.phi, include_pair_breaking, cap),
            fidelity=report.fidelity_effective,
        ))
    return samples


def build_ensemble(
    config: EnsembleConfig,
    runner: Optional[ParallelTaskRunner] = None,
    failure_tracker: Optional[FailureTracker] = None,
    cap: int = DEFAULT_BASIS_CAP
) -> List[EffectiveSample]:
    """
    One effective Hamiltonian per accepted two-particle self-localized state,
    over all xi samples of the configured windows, in xi order.
    """
    if config.params.N != 2:
        raise ConfigError(f"Ensembles are built from two-particle states, got N={config.params.N}")

    started = time.time()
    runner = runner or ParallelTaskRunner(1)
    tracker = failure_tracker if failure_tracker is not None else FailureTracker()
    xi_values = config.xi_samples()
    tasks = [
        Task(
            id=i,
            label=f"U={config.params.U:g},xi={xi:.8f}",
            func=partial(
                _ensemble_point, config.params.with_overrides(xi=float(xi)),
                config.thresholds, config.include_pair_breaking, cap
            ),
        )
        for i, xi in enumerate(xi_values)
    ]

    samples: List[EffectiveSample] = []
    for task in runner.run(tasks):
        if task.succeeded:
            samples.extend(task.result)
        else:
            tracker.track_exception(task.label, task.error)

    if not samples:
        logger.warning(f"Empty ensemble at U={config.params.U:g} over {len(xi_values)} xi samples")
    logger.info(
        f"Ensemble U={config.params.U:g}: {len(samples)} samples from {len(xi_values)} xi values "
        f"in {time.time() - started:.1f}s"
    )
    return samples
