"""
Tests for the eigensolver and SVD wrappers.
"""
import numpy as np
import pytest

from src.models.fockspace import ManyBodyState
from src.models.model import ModelParams, build_hamiltonian
from src.models.spectral import eigh, fix_phase, svd
from src.utils.errors import NonHermitianError


def _random_hermitian(size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    return A + A.conj().T


def test_eigh_contract_on_random_hermitian_matrix():
    matrix = _random_hermitian(40, seed=1)
    system = eigh(matrix, verify=True)
    assert np.all(np.diff(system.eigenvalues) >= 0)
    assert system.max_residual(matrix) < 1e-10 * 40 * np.max(np.abs(matrix))
    assert system.orthonormality_error() < 1e-10


def test_eigh_attaches_basis_for_hamiltonians():
    H = build_hamiltonian(ModelParams(L=5, N=2, U=3.0, V=1.0))
    system = eigh(H)
    assert len(system) == H.dimension
    state = system.state(0)
    assert isinstance(state, ManyBodyState)
    assert state.energy == pytest.approx(system.eigenvalues[0])
    assert state.is_normalized()


def test_eigh_without_basis_cannot_build_states():
    with pytest.raises(ValueError):
        eigh(np.eye(2)).state(0)


def test_eigh_rejects_non_hermitian_input():
    matrix = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(NonHermitianError):
        eigh(matrix)


def test_eigh_rejects_non_square_input():
    with pytest.raises(ValueError):
        eigh(np.zeros((2, 3)))


def test_eigh_of_empty_matrix():
    assert len(eigh(np.zeros((0, 0)))) == 0


def test_svd_reconstructs_and_sorts():
    rng = np.random.default_rng(2)
    M = rng.normal(size=(6, 36)) + 1j * rng.normal(size=(6, 36))
    M /= np.linalg.norm(M)
    result = svd(M)
    assert np.all(np.diff(result.singular_values) <= 0)
    np.testing.assert_allclose(result.reconstruct(), M, atol=1e-12)
    assert np.sum(result.singular_values ** 2) == pytest.approx(1.0, abs=1e-10)


def test_svd_gauge_makes_pivots_real_positive():
    rng = np.random.default_rng(4)
    result = svd(rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5)))
    for column in result.left_vectors.T:
        pivot = column[np.argmax(np.abs(column))]
        assert abs(pivot.imag) < 1e-12
        assert pivot.real > 0


def test_svd_rejects_non_finite_input():
    with pytest.raises(ValueError):
        svd(np.array([[1.0, np.nan]]))


def test_fix_phase():
    vector = np.array([0.1, -2.0j, 0.5])
    fixed = fix_phase(vector)
    assert fixed[1] == pytest.approx(2.0)
    np.testing.assert_allclose(np.abs(fixed), np.abs(vector))
    np.testing.assert_array_equal(fix_phase(np.zeros(3)), np.zeros(3))
