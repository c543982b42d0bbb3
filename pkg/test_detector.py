"""
Tests for self-localized state detection.

Synthetic states are symmetrized products of an extended vector phi and a
localized part chi with disjoint support, so every decomposition path has an
exact answer to recover.
"""
import math

import numpy as np
import pytest

from src.analysis.detector import (
    ClassificationReport,
    ScreeningThresholds,
    StateClass,
    ansatz_fidelities,
    classify,
    classify_spectrum,
    decompose_two_particle,
    detect_one_localized,
    edge_manifold,
    edge_state_flags,
    exclude_edge_states,
    fraction_scan,
    reconstruct,
    refine_chi,
    split_pair,
    subspace_fidelity,
    summarize_reports,
)
from src.analysis.observables import one_body_density_matrix
from src.models.fockspace import (
    ManyBodyState,
    SymmetricTensor,
    enumerate_basis,
    symmetrize_values,
    tensor_from_vector,
    tensors_from_columns,
)
from src.models.model import ModelParams, build_effective_hamiltonian, build_hamiltonian
from src.models.spectral import eigh
from src.utils.errors import ConfigError
from src.utils.failure_tracker import FailureTracker

L = 12


def _extended(excluded, length: int = L) -> np.ndarray:
    """Flat vector over every site except the excluded ones."""
    phi = np.ones(length)
    phi[list(excluded)] = 0.0
    return phi / np.linalg.norm(phi)


def _unit(site: int, length: int = L) -> np.ndarray:
    e = np.zeros(length)
    e[site] = 1.0
    return e


def _ansatz_state(phi: np.ndarray, chi: np.ndarray) -> ManyBodyState:
    return reconstruct(phi, chi)


def _random_state(length: int, N: int, seed: int) -> ManyBodyState:
    basis = enumerate_basis(length, N)
    rng = np.random.default_rng(seed)
    coefficients = rng.normal(size=len(basis))
    return ManyBodyState(basis, coefficients / np.linalg.norm(coefficients))


def test_threshold_validation():
    with pytest.raises(ConfigError):
        ScreeningThresholds(sv_sum_min=1.5)
    with pytest.raises(ConfigError):
        ScreeningThresholds(fidelity_min=0.0)
    with pytest.raises(ConfigError):
        ScreeningThresholds(ratio_max=0.9)
    assert ScreeningThresholds().for_ensembles().ipr_phi_max == pytest.approx(0.06)


def test_split_pair_recovers_orthogonal_vectors():
    a = _unit(4)
    b = _extended([4])
    split = split_pair(0.7 * (np.outer(a, b) + np.outer(b, a)))
    assert split.pair_structure
    assert not split.ambiguous
    assert abs(np.vdot(split.localized, a)) == pytest.approx(1.0, abs=1e-10)
    assert abs(np.vdot(split.extended, b)) == pytest.approx(1.0, abs=1e-10)
    assert abs(split.amplitude) == pytest.approx(0.7, abs=1e-10)


def test_reconstruct_is_normalized_and_ansatz_fidelity_is_one():
    phi = _extended([2, 7])
    chi = np.outer(_unit(2), _unit(7))
    state = _ansatz_state(phi, chi)
    assert state.is_normalized(1e-12)
    symmetric_chi = 0.5 * (chi + chi.T)
    fidelity = ansatz_fidelities(tensor_from_vector(state).values, phi, symmetric_chi[None])[0]
    assert fidelity == pytest.approx(1.0, abs=1e-10)


def test_two_particle_ansatz_is_recovered():
    site = 4
    phi, chi = _extended([site]), _unit(site)
    state = _ansatz_state(phi, chi)

    found_phi, found_chi, trace = decompose_two_particle(tensor_from_vector(state))
    assert abs(np.vdot(found_phi, phi)) == pytest.approx(1.0, abs=1e-8)
    assert abs(np.vdot(found_chi, chi)) == pytest.approx(1.0, abs=1e-8)
    assert trace.pattern_ok

    report = classify(state)
    assert report.state_class == StateClass.TWO_PARTICLE_ALL
    assert report.localized_sites == (site + 1,)
    assert report.fidelity_reconstruction > 1.0 - 1e-8


def test_correlated_ansatz_is_recovered():
    site = 6
    phi = _extended([site])
    chi = np.outer(_unit(site), _unit(site))
    report = classify(_ansatz_state(phi, chi))
    assert report.state_class == StateClass.CORRELATED_ALL
    assert report.localized_sites == (site + 1,)
    assert report.fidelity_reconstruction > 1.0 - 1e-8
    assert report.ipr_chi == pytest.approx(1.0, abs=1e-8)
    assert abs(np.vdot(report.phi, phi)) == pytest.approx(1.0, abs=1e-8)


def test_independent_ansatz_is_recovered():
    a, b = 3, 8
    phi = _extended([a, b])
    chi = np.outer(_unit(a), _unit(b))
    report = classify(_ansatz_state(phi, chi))
    assert report.state_class == StateClass.INDEPENDENT_ALL
    assert set(report.localized_sites) == {a + 1, b + 1}
    assert report.fidelity_reconstruction > 1.0 - 1e-8
    assert float(np.sum(report.singular_values)) > 0.8
    assert all(value > 0.9 for value in report.extended_state_overlaps.values())


def test_one_localized_state_is_detected():
    """One boson pinned on a site, two bosons spread over the rest."""
    site = 5
    rest = _extended([site])
    values = np.einsum("i,j,k->ijk", _unit(site), rest, rest)
    values = values + np.transpose(values, (1, 0, 2)) + np.transpose(values, (1, 2, 0))
    tensor = SymmetricTensor(values / np.linalg.norm(values))
    assert detect_one_localized(tensor)


def test_random_state_on_long_lattice_is_rejected():
    report = classify(_random_state(48, 3, seed=12))
    assert report.state_class == StateClass.NOT_SELF_LOCALIZED
    assert not report.is_self_localized


def test_single_particle_states_are_never_self_localized():
    state = ManyBodyState.from_fock(enumerate_basis(4, 1), (0, 1, 0, 0))
    assert classify(state).state_class == StateClass.NOT_SELF_LOCALIZED


def test_classification_is_limited_to_three_particles():
    with pytest.raises(ValueError):
        classify(ManyBodyState.from_fock(enumerate_basis(3, 4), (4, 0, 0)))


def test_report_record_is_serializable():
    record = classify(_ansatz_state(_extended([4]), _unit(4)), index=3).to_record()
    assert record['class'] == StateClass.TWO_PARTICLE_ALL.value
    assert record['index'] == 3
    assert record['localized_sites'] == [5]


def test_refine_chi_returns_unit_symmetric_tensor():
    params = ModelParams(L=8, N=3, U=20.0, V=10.0, xi=-math.pi / 4)
    state = _random_state(8, 3, seed=4)
    chi, fidelity = refine_chi(state, _extended([], 8), params)
    assert chi.values.shape == (8, 8)
    assert chi.is_symmetric(1e-10)
    assert chi.norm() == pytest.approx(1.0, abs=1e-10)
    assert 0.0 <= fidelity <= 1.0


def test_subspace_fidelity_recovers_chi_split_over_two_tensors():
    phi = _extended([], 8)
    chi_a = np.outer(_unit(2, 8), _unit(2, 8))
    chi_b = np.outer(_unit(5, 8), _unit(5, 8))
    psi_values = tensor_from_vector(reconstruct(phi, (chi_a + chi_b) / math.sqrt(2))).values
    stack = np.stack([chi_a, chi_b])

    single = ansatz_fidelities(psi_values, phi, stack)
    assert np.allclose(single, 1.0 / math.sqrt(2), atol=1e-10)

    chi, fidelity = subspace_fidelity(psi_values, phi, stack)
    assert fidelity == pytest.approx(1.0, abs=1e-10)
    assert abs(np.vdot(chi, (chi_a + chi_b) / math.sqrt(2))) == pytest.approx(1.0, abs=1e-10)


def test_refine_chi_groups_near_degenerate_effective_levels():
    params = ModelParams(L=8, N=3, U=20.0, V=10.0, xi=-math.pi / 4)
    phi = _extended([], 8)
    hamiltonian = build_effective_hamiltonian(params.with_particles(2), phi)
    system = eigh(hamiltonian)
    stack = tensors_from_columns(hamiltonian.basis, system.eigenvectors)
    gaps = np.diff(system.eigenvalues)
    k = int(np.argmin(np.where(gaps > 1e-6, gaps, np.inf)))
    state = reconstruct(phi, (stack[k] + stack[k + 1]) / math.sqrt(2))

    _, split = refine_chi(state, phi, params, level_tol=0.0)
    assert split < 0.97
    _, grouped = refine_chi(state, phi, params, level_tol=2.0 * gaps[k] / params.J)
    assert grouped > 1.0 - 1e-8


def test_non_interacting_spectrum_has_no_self_localized_states():
    params = ModelParams(L=28, N=2, U=0.0, V=10.0, xi=-math.pi / 4)
    counts = summarize_reports(classify_spectrum(params))
    assert sum(counts.values()) == math.comb(29, 2)
    assert counts[StateClass.TWO_PARTICLE_ALL.value] == 0


def test_stricter_thresholds_never_accept_more():
    params = ModelParams(L=L, N=2, U=20.0, V=10.0, xi=-math.pi / 4)
    strict = ScreeningThresholds(
        sv_sum_min=0.99, extended_overlap_min=0.99, ipr_chi_min_two_particle=0.99,
        fidelity_min=0.99, ipr_phi_max=0.2,
    )
    loose = {r.index for r in classify_spectrum(params) if r.is_self_localized}
    tight = {r.index for r in classify_spectrum(params, strict) if r.is_self_localized}
    assert tight <= loose


def test_edge_manifold_vectors_have_unit_weight():
    manifold = edge_manifold(ModelParams(L=L, N=3, U=20.0, V=10.0, xi=-math.pi / 4))
    for k in range(manifold.size):
        assert manifold.vector_weight(manifold.vectors[:, k]) == pytest.approx(1.0, abs=1e-10)
    bulk = _unit(L // 2)
    assert 0.0 <= manifold.vector_weight(bulk) <= 1.0


def test_exclude_edge_states_drops_boundary_candidates():
    params = ModelParams(L=L, N=2, U=20.0, V=10.0, xi=-math.pi / 4)
    manifold = edge_manifold(params)
    assert manifold.size > 0
    edge = ClassificationReport(StateClass.TWO_PARTICLE_ALL, np.zeros(2), phi=manifold.vectors[:, 0])
    bulk = ClassificationReport(StateClass.TWO_PARTICLE_ALL, np.zeros(2), phi=_unit(L // 2))
    rejected = ClassificationReport(StateClass.NOT_SELF_LOCALIZED, np.zeros(2), phi=manifold.vectors[:, 0])
    kept = exclude_edge_states([edge, bulk, rejected], params)
    assert len(kept) == 2
    assert kept[0] is bulk and kept[1] is rejected


def _product_density(*orbitals: np.ndarray) -> np.ndarray:
    values = symmetrize_values(np.einsum("i,j,k->ijk", *orbitals))
    return one_body_density_matrix(values / np.linalg.norm(values))


def test_boundary_orbital_occupation_flags_one_localized_states():
    params = ModelParams(L=16, N=3, U=0.0, V=10.0, xi=-math.pi / 4)
    manifold = edge_manifold(params)
    assert manifold.size > 0
    orbitals = eigh(build_hamiltonian(params.with_particles(1))).eigenvectors
    bulk = [orbitals[:, k] for k in range(params.L) if manifold.vector_weight(orbitals[:, k]) < 0.5]
    edge_orbital = manifold.vectors[:, 0]

    # degenerate natural orbitals can come out as any mixture of the occupied ones
    mixed = (edge_orbital + bulk[0] + bulk[1]) / math.sqrt(3)
    assert manifold.vector_weight(mixed) < 0.9
    edge = ClassificationReport(
        StateClass.ONE_LOCALIZED, np.zeros(3), localized_orbital=mixed,
        density_matrix=_product_density(edge_orbital, bulk[0], bulk[1]),
    )
    interior = ClassificationReport(
        StateClass.ONE_LOCALIZED, np.zeros(3), localized_orbital=bulk[0],
        density_matrix=_product_density(bulk[0], bulk[1], bulk[2]),
    )
    assert manifold.orbital_occupation(edge.density_matrix) == pytest.approx(1.0, abs=1e-10)
    assert edge_state_flags([edge, interior], params) == [True, False]


def test_fraction_scan_keeps_grid_order():
    params = ModelParams(L=8, N=2, U=0.0, V=10.0, xi=-math.pi / 4)
    grid = [{'U': 20.0}, {'U': 0.0}]
    tracker = FailureTracker()
    rows = fraction_scan(grid, params, failure_tracker=tracker)
    assert [row.point for row in rows] == grid
    assert all(row.total == math.comb(9, 2) for row in rows)
    assert rows[1].fraction(StateClass.TWO_PARTICLE_ALL) == 0.0
    assert len(tracker) == 0
    record = rows[0].to_record()
    assert 0.0 <= record['fraction_two_particle'] <= 1.0


def test_fraction_scan_rejects_non_finite_values():
    with pytest.raises(ValueError):
        fraction_scan([{'U': float('nan')}], ModelParams(L=4, N=2))


@pytest.mark.slow
def test_three_particle_self_localized_states_are_classified():
    params = ModelParams(L=28, N=3, J=1.0, U=20.0, V=10.0, p=1, q=4, xi=-math.pi / 4)
    reports = classify_spectrum(params)

    independent = min(reports, key=lambda r: abs(r.energy + 20.5333))
    assert independent.state_class == StateClass.INDEPENDENT_ALL
    assert set(independent.localized_sites) == {6, 22}
    assert independent.fidelity_reconstruction > 0.9
    assert independent.fidelity_effective > 0.9

    correlated = min(reports, key=lambda r: abs(r.energy - 40.3268))
    assert correlated.state_class == StateClass.CORRELATED_ALL
    assert correlated.localized_sites == (20,)
    assert correlated.fidelity_reconstruction > 0.9


@pytest.mark.slow
def test_non_interacting_three_particle_spectrum_has_no_localized_states():
    params = ModelParams(L=16, N=3, U=0.0, V=10.0, xi=-math.pi / 4)
    counts = summarize_reports(classify_spectrum(params))
    assert sum(counts.values()) == math.comb(18, 3)
    assert counts[StateClass.NOT_SELF_LOCALIZED.value] == math.comb(18, 3)


@pytest.mark.slow
def test_strong_interactions_without_potential_give_only_correlated_states():
    params = ModelParams(L=16, N=3, U=2000.0, V=0.0, xi=-math.pi / 4)
    rows = fraction_scan([{'U': 2000.0}, {'U': 20000.0}], params)
    for row in rows:
        assert row.fraction(StateClass.INDEPENDENT_ALL) == 0.0
        assert row.fraction(StateClass.CORRELATED_ALL) > 0.0
