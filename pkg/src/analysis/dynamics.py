"""
Three-step preparation protocol for self-localized states.

(i)   0 < t < T1:  one boson performs a quantum walk from walk_start_site while
                   the other bosons wait on decoupled auxiliary sites (J' = 0)
(ii)  T1 < t < T2: the auxiliary potential V_A(t) ramps down piecewise-linearly
                   with J' switched on, transferring the bosons into the lattice
(iii) T2 < t < T3: free evolution with the auxiliary sites decoupled again

Auxiliary sites are appended after the L lattice sites (0-based indices L, L+1).
Correlated kind: one auxiliary site holding two bosons. Independent kind: two
auxiliary sites with one boson each and the same V_A(t).
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.analysis.detector import (
    SELF_LOCALIZED_CLASSES,
    ClassificationReport,
    ScreeningThresholds,
    StateClass,
    classify,
    mark_edge_states,
)
from src.models.fockspace import DEFAULT_BASIS_CAP, FockBasis, ManyBodyState, enumerate_basis
from src.models.model import (
    ModelParams,
    build_hamiltonian,
    chain_bonds,
    hopping_operator,
    interaction_diagonal,
    number_operator_diagonal,
    onsite_potential,
    potential_profile,
)
from src.models.spectral import eigh
from src.utils.errors import ConfigError, NormDriftError

logger = logging.getLogger(__name__)

NORM_TOL = 1e-8
LOADED_BOSONS = 2


class ProtocolKind(str, Enum):
    CORRELATED = "correlated"
    INDEPENDENT = "independent"


DEFAULT_ATTACH_SITES = {
    ProtocolKind.CORRELATED: (6,),
    ProtocolKind.INDEPENDENT: (2, 10),
}
DEFAULT_J_PRIME = {
    ProtocolKind.CORRELATED: 4.0,
    ProtocolKind.INDEPENDENT: 1.5,
}
# Ramp breakpoints as (fraction of T2 - T1, offset from the attach-site potential)
DEFAULT_RAMP = ((0.25, 6.0), (0.6, -2.0), (0.9, -6.0))
DEFAULT_BIAS = 200.0


def protocol_lattice_params(U: float = 20.0) -> ModelParams:
    """Lattice used by the protocol: L=12, V=10, beta=1/4, xi=-pi/4, three bosons."""
    return ModelParams(L=12, N=3, J=1.0, U=U, V=10.0, p=1, q=4, xi=-math.pi / 4, boundary="open")


@dataclass(frozen=True)
class ProtocolSchedule:
    """Step times, ramp breakpoints and per-step couplings."""
    T1: float = 84.0
    T2: float = 104.0
    T3: float = 184.0
    walk_start_site: int = 5
    attach_sites: Tuple[int, ...] = (6,)
    V_A_segments: Tuple[Tuple[float, float], ...] = ((84.0, DEFAULT_BIAS), (104.0, -16.0))
    J_prime_values: Tuple[float, float, float] = (0.0, 4.0, 0.0)
    dt: float = 0.002
    sample_interval: float = 1.0

    def __post_init__(self):
        if not 0 < self.T1 < self.T2 < self.T3:
            raise ConfigError(f"Need 0 < T1 < T2 < T3, got {self.T1}, {self.T2}, {self.T3}")
        if self.dt <= 0 or self.sample_interval <= 0:
            raise ConfigError("dt and sample_interval must be positive")
        if len(self.J_prime_values) != 3:
            raise ConfigError("J_prime_values needs one value per step")
        if self.J_prime_values[0] != 0.0 or self.J_prime_values[2] != 0.0:
            raise ConfigError("J' must vanish during steps (i) and (iii)")
        if not self.attach_sites:
            raise ConfigError("attach_sites must not be empty")
        if not self.V_A_segments:
            raise ConfigError("V_A_segments needs at least one breakpoint")
        times = [t for t, _ in self.V_A_segments]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError(f"V_A breakpoint times must be strictly ascending: {times}")
        if times[0] < self.T1 or times[-1] > self.T2:
            raise ConfigError(f"V_A breakpoints must lie within [T1, T2] = [{self.T1}, {self.T2}]")

    @classmethod
    def default(cls, kind: ProtocolKind, params: ModelParams, **overrides: Any) -> "ProtocolSchedule":
        """Defaults for a protocol kind; the ramp is placed relative to the attach-site potential."""
        kind = ProtocolKind(kind)
        T1 = overrides.get('T1', cls.T1)
        T2 = overrides.get('T2', cls.T2)
        attach_sites = tuple(overrides.get('attach_sites', DEFAULT_ATTACH_SITES[kind]))
        bias = overrides.pop('V_bias', DEFAULT_BIAS)
        site_potential = onsite_potential(params, attach_sites[0])
        segments = ((T1, bias),) + tuple(
            (T1 + fraction * (T2 - T1), site_potential + offset) for fraction, offset in DEFAULT_RAMP
        )
        values = dict(
            attach_sites=attach_sites,
            V_A_segments=segments,
            J_prime_values=(0.0, DEFAULT_J_PRIME[kind], 0.0),
        )
        values.update(overrides)
        return cls(**values)

    def v_aux(self, t: float) -> float:
        """V_A(t): piecewise linear between breakpoints, held constant outside them."""
        times, values = zip(*self.V_A_segments)
        return float(np.interp(t, times, values))

    def j_prime(self, t: float) -> float:
        if t < self.T1:
            return self.J_prime_values[0]
        if t < self.T2:
            return self.J_prime_values[1]
        return self.J_prime_values[2]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'T1': self.T1, 'T2': self.T2, 'T3': self.T3,
            'walk_start_site': self.walk_start_site,
            'attach_sites': list(self.attach_sites),
            'V_A_segments': [list(point) for point in self.V_A_segments],
            'J_prime_values': list(self.J_prime_values),
            'dt': self.dt,
            'sample_interval': self.sample_interval,
        }


@dataclass(frozen=True)
class ExtendedLattice:
    """Superlattice with auxiliary sites coupled to attach sites through J'(t)."""
    base: ModelParams
    kind: ProtocolKind
    attach_sites: Tuple[int, ...]
    cap: int = DEFAULT_BASIS_CAP

    def __post_init__(self):
        expected = 1 if self.kind == ProtocolKind.CORRELATED else 2
        if len(self.attach_sites) != expected:
            raise ConfigError(
                f"{self.kind.value} protocol needs {expected} attach site(s), got {list(self.attach_sites)}"
            )
        for site in self.attach_sites:
            if not 1 <= site <= self.base.L:
                raise ConfigError(f"Attach site {site} outside 1..{self.base.L}")

    @property
    def aux_count(self) -> int:
        return len(self.attach_sites)

    @property
    def site_count(self) -> int:
        return self.base.L + self.aux_count

    @property
    def aux_indices(self) -> Tuple[int, ...]:
        return tuple(range(self.base.L, self.site_count))

    @property
    def particle_count(self) -> int:
        return 1 + LOADED_BOSONS

    @cached_property
    def basis(self) -> FockBasis:
        return enumerate_basis(self.site_count, self.particle_count, self.cap)

    @cached_property
    def static_matrix(self) -> np.ndarray:
        """Lattice hopping, lattice potential and on-site interaction on every site."""
        potential = np.concatenate([potential_profile(self.base), np.zeros(self.aux_count)])
        matrix = hopping_operator(self.basis, chain_bonds(self.base.L, self.base.J, self.base.boundary))
        matrix[np.diag_indices_from(matrix)] += interaction_diagonal(self.basis, potential, self.base.U)
        return matrix

    @cached_property
    def aux_number(self) -> np.ndarray:
        return number_operator_diagonal(self.basis, self.aux_indices)

    @cached_property
    def aux_hopping(self) -> np.ndarray:
        """Hopping between each auxiliary site and its attach site, unit amplitude."""
        bonds = [(site - 1, aux, 1.0) for site, aux in zip(self.attach_sites, self.aux_indices)]
        return hopping_operator(self.basis, bonds)

    def hamiltonian(self, v_aux: float, j_prime: float) -> np.ndarray:
        matrix = self.static_matrix + j_prime * self.aux_hopping
        matrix[np.diag_indices_from(matrix)] += v_aux * self.aux_number
        return matrix

    def initial_state(self, walk_start_site: int) -> ManyBodyState:
        """One boson on walk_start_site, the loaded bosons on the auxiliary sites."""
        if not 1 <= walk_start_site <= self.base.L:
            raise ConfigError(f"walk_start_site {walk_start_site} outside 1..{self.base.L}")
        occupations = [0] * self.site_count
        occupations[walk_start_site - 1] = 1
        for i, aux in enumerate(self.aux_indices):
            occupations[aux] = LOADED_BOSONS // self.aux_count + (1 if i < LOADED_BOSONS % self.aux_count else 0)
        return ManyBodyState.from_fock(self.basis, occupations)

    def aux_population(self, state: ManyBodyState) -> float:
        return float(np.abs(state.coefficients) ** 2 @ self.aux_number)


@dataclass(frozen=True)
class EvolutionRecord:
    """Sampled densities, norms and energies of one evolution."""
    times: np.ndarray
    densities: np.ndarray  # (T, sites)
    norms: np.ndarray
    energies: np.ndarray
    final_state: ManyBodyState

    def max_norm_drift(self) -> float:
        return float(np.max(np.abs(self.norms - 1.0))) if self.norms.size else 0.0

    def energy_drift(self) -> float:
        """Largest relative change of <H> from the first sample."""
        if self.energies.size == 0:
            return 0.0
        scale = max(1.0, abs(self.energies[0]))
        return float(np.max(np.abs(self.energies - self.energies[0])) / scale)

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {'t': float(t), 'site': site + 1, 'density': float(value)}
            for t, row in zip(self.times, self.densities)
            for site, value in enumerate(row)
        ]

    @staticmethod
    def concatenate(records: Sequence["EvolutionRecord"]) -> "EvolutionRecord":
        """Join consecutive records; a sample repeated at a segment boundary is kept once."""
        times, densities, norms, energies = [], [], [], []
        for i, record in enumerate(records):
            start = 1 if i and times and record.times.size and math.isclose(record.times[0], times[-1][-1]) else 0
            times.append(record.times[start:])
            densities.append(record.densities[start:])
            norms.append(record.norms[start:])
            energies.append(record.energies[start:])
        return EvolutionRecord(
            times=np.concatenate(times),
            densities=np.concatenate(densities),
            norms=np.concatenate(norms),
            energies=np.concatenate(energies),
            final_state=records[-1].final_state,
        )


def _density(basis: FockBasis, coefficients: np.ndarray) -> np.ndarray:
    return np.abs(coefficients) ** 2 @ basis.states


def _check_norm(norm: float, t: float, tol: float):
    if abs(norm - 1.0) > tol:
        raise NormDriftError(f"Norm drifted to {norm:.12f} at t={t:g}")


def propagate(
    state: ManyBodyState,
    hamiltonian_of_time: Callable[[float], np.ndarray],
    t0: float,
    t1: float,
    dt: float,
    sample_interval: Optional[float] = None,
    static: bool = False,
    norm_tol: float = NORM_TOL
) -> EvolutionRecord:
    """
    Evolve state from t0 to t1.

    Every step of length h <= dt applies exp(-i H(t_mid) h) through the spectral
    decomposition of the Hamiltonian frozen at the step midpoint. With static
    set, H(t0) is diagonalized once and every sample is reached exactly.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t1 < t0:
        raise ValueError(f"t1={t1} is before t0={t0}")
    _check_norm(state.norm(), t0, norm_tol)

    basis = state.basis
    psi = np.asarray(state.coefficients, dtype=complex)
    times, densities, norms, energies = [], [], [], []

    def record(t: float, vector: np.ndarray, matrix: np.ndarray):
        norm = float(np.linalg.norm(vector))
        _check_norm(norm, t, norm_tol)
        times.append(t)
        densities.append(_density(basis, vector))
        norms.append(norm)
        energies.append(float(np.real(np.vdot(vector, matrix @ vector))))

    if static:
        matrix = hamiltonian_of_time(t0)
        system = eigh(matrix)
        components = system.eigenvectors.conj().T @ psi
        interval = sample_interval if sample_interval else max(t1 - t0, dt)
        count = int(math.floor((t1 - t0) / interval + 1e-9))
        sample_times = [t0 + n * interval for n in range(count + 1)]
        if not math.isclose(sample_times[-1], t1):
            sample_times.append(t1)
        for t in sample_times:
            psi = system.eigenvectors @ (np.exp(-1j * system.eigenvalues * (t - t0)) * components)
            record(t, psi, matrix)
    else:
        steps = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
        h = (t1 - t0) / steps
        every = max(1, int(round(sample_interval / h))) if sample_interval else 1
        record(t0, psi, hamiltonian_of_time(t0))
        for n in range(steps):
            system = eigh(hamiltonian_of_time(t0 + (n + 0.5) * h))
            psi = system.eigenvectors @ (
                np.exp(-1j * system.eigenvalues * h) * (system.eigenvectors.conj().T @ psi)
            )
            if (n + 1) % every == 0 or n + 1 == steps:
                t = t0 + (n + 1) * h
                record(t, psi, hamiltonian_of_time(t))

    return EvolutionRecord(
        times=np.array(times),
        densities=np.array(densities),
        norms=np.array(norms),
        energies=np.array(energies),
        final_state=ManyBodyState(basis, psi),
    )


@dataclass(frozen=True)
class ProtocolResult:
    """Full protocol run with its diagnostics."""
    kind: ProtocolKind
    schedule: ProtocolSchedule
    lattice: ExtendedLattice
    record: EvolutionRecord
    state_at_T2: ManyBodyState
    transfer_efficiency: float
    retention: float
    segment_energy_drift: Dict[str, float] = field(default_factory=dict)

    def summary(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'U': self.lattice.base.U,
            'retention': self.retention,
            'transfer_efficiency': self.transfer_efficiency,
            'max_norm_drift': self.record.max_norm_drift(),
            'energy_drift_step_i': self.segment_energy_drift.get('i'),
            'energy_drift_step_iii': self.segment_energy_drift.get('iii'),
        }


def transfer_efficiency(state: ManyBodyState, lattice: ExtendedLattice) -> float:
    """1 - (population left on the auxiliary sites) / (bosons loaded)."""
    return 1.0 - lattice.aux_population(state) / LOADED_BOSONS


def retention(density: np.ndarray, sites: Sequence[int], radius: int = 1, loaded: int = LOADED_BOSONS) -> float:
    """Density within +-radius of the loading sites (1-based), per loaded boson."""
    lattice_sites = len(density)
    window = set()
    for site in sites:
        window.update(j for j in range(site - radius, site + radius + 1) if 1 <= j <= lattice_sites)
    return float(sum(density[j - 1] for j in window) / loaded)


def run_protocol(
    kind: ProtocolKind,
    schedule: Optional[ProtocolSchedule] = None,
    params: Optional[ModelParams] = None,
    dt: Optional[float] = None,
    cap: int = DEFAULT_BASIS_CAP
) -> ProtocolResult:
    """
    Quantum walk, adiabatic loading and free evolution.

    Args:
        kind: correlated (one auxiliary site, two bosons) or independent (two auxiliary sites)
        schedule: step times and ramp; defaults to ProtocolSchedule.default(kind, params)
        params: lattice parameters; defaults to protocol_lattice_params()
        dt: overrides schedule.dt
    """
    kind = ProtocolKind(kind)
    params = (params or protocol_lattice_params()).with_particles(1 + LOADED_BOSONS)
    schedule = schedule or ProtocolSchedule.default(kind, params)
    if dt is not None:
        schedule = replace(schedule, dt=dt)

    lattice = ExtendedLattice(params, kind, tuple(schedule.attach_sites), cap)
    hamiltonian_of_time = lambda t: lattice.hamiltonian(schedule.v_aux(t), schedule.j_prime(t))

    started = time.time()
    initial = lattice.initial_state(schedule.walk_start_site)
    logger.info(
        f"Protocol {kind.value}: U={params.U:g}, dim={len(lattice.basis)}, "
        f"T=({schedule.T1:g}, {schedule.T2:g}, {schedule.T3:g}), dt={schedule.dt:g}"
    )

    walk = propagate(initial, hamiltonian_of_time, 0.0, schedule.T1, schedule.dt,
                     schedule.sample_interval, static=True)
    loading = propagate(walk.final_state, hamiltonian_of_time, schedule.T1, schedule.T2, schedule.dt,
                        schedule.sample_interval)
    free = propagate(loading.final_state, hamiltonian_of_time, schedule.T2, schedule.T3, schedule.dt,
                     schedule.sample_interval, static=True)

    record = EvolutionRecord.concatenate([walk, loading, free])
    efficiency = transfer_efficiency(loading.final_state, lattice)
    final_density = record.densities[-1][:params.L]
    kept = retention(final_density, schedule.attach_sites)

    logger.info(
        f"Protocol {kind.value} done in {time.time() - started:.1f}s: "
        f"transfer={efficiency:.6f}, retention={kept:.4f}, norm drift={record.max_norm_drift():.2e}"
    )
    return ProtocolResult(
        kind=kind,
        schedule=schedule,
        lattice=lattice,
        record=record,
        state_at_T2=loading.final_state,
        transfer_efficiency=efficiency,
        retention=kept,
        segment_energy_drift={'i': walk.energy_drift(), 'iii': free.energy_drift()},
    )


@dataclass(frozen=True)
class ProjectionTable:
    """Probabilities of a state over the t = 0 eigenbasis."""
    energies: np.ndarray
    probabilities: np.ndarray
    classes: List[Optional[StateClass]]
    auxiliary_weight: float

    def total(self) -> float:
        return float(self.probabilities.sum() + self.auxiliary_weight)

    def class_probabilities(self) -> Dict[str, float]:
        totals = {state_class.value: 0.0 for state_class in StateClass}
        for p, state_class in zip(self.probabilities, self.classes):
            if state_class is not None:
                totals[state_class.value] += float(p)
        return totals

    def self_localized_probability(self) -> float:
        return float(sum(
            p for p, state_class in zip(self.probabilities, self.classes)
            if state_class in SELF_LOCALIZED_CLASSES
        ))

    def dominant(self, count: int = 6) -> List[Dict[str, Any]]:
        order = np.argsort(-self.probabilities, kind="stable")[:count]
        return [self._row(int(k)) for k in order]

    def _row(self, k: int) -> Dict[str, Any]:
        state_class = self.classes[k]
        return {
            'index': k,
            'energy': float(self.energies[k]),
            'probability': float(self.probabilities[k]),
            'class': state_class.value if state_class is not None else None,
        }

    def to_records(self) -> List[Dict[str, Any]]:
        rows = [self._row(k) for k in range(self.probabilities.size)]
        rows.append({'index': None, 'energy': None, 'probability': self.auxiliary_weight, 'class': 'auxiliary'})
        return rows


def project_onto_initial_eigenstates(
    state_at_T2: ManyBodyState,
    lattice: ExtendedLattice,
    thresholds: ScreeningThresholds = ScreeningThresholds(),
    classify_states: bool = True
) -> ProjectionTable:
    """
    Project onto the eigenstates of the t = 0 Hamiltonian.

    With J' = 0 the t = 0 Hamiltonian is block diagonal in the auxiliary
    occupation. The block with every boson in the lattice is diagonalized and
    its eigenstates classified; the remaining blocks are reported as one
    auxiliary weight, so the probabilities sum to one.
    """
    if not state_at_T2.is_normalized(NORM_TOL):
        raise ValueError(f"State must be normalized, norm is {state_at_T2.norm():.3e}")

    params = lattice.base
    states = lattice.basis.states
    in_lattice = states[:, params.L:].sum(axis=1) == 0
    lattice_basis = enumerate_basis(params.L, lattice.particle_count, lattice.cap)
    vector = np.zeros(len(lattice_basis), dtype=complex)
    vector[lattice_basis.indices_of(states[in_lattice, :params.L])] = state_at_T2.coefficients[in_lattice]
    auxiliary_weight = float(np.sum(np.abs(state_at_T2.coefficients[~in_lattice]) ** 2))

    system = eigh(build_hamiltonian(params, lattice.cap))
    probabilities = np.abs(system.eigenvectors.conj().T @ vector) ** 2

    classes: List[Optional[StateClass]] = [None] * len(system)
    if classify_states:
        reports: List[ClassificationReport] = [
            classify(system.state(k), thresholds, params, index=k, cap=lattice.cap)
            for k in range(len(system))
        ]
        classes = [report.state_class for report in mark_edge_states(reports, params, thresholds)]

    table = ProjectionTable(system.eigenvalues, probabilities, classes, auxiliary_weight)
    logger.info(
        f"Projection onto t=0 eigenstates: total={table.total():.10f}, "
        f"self-localized={table.self_localized_probability():.4f}, auxiliary={auxiliary_weight:.2e}"
    )
    return table
