"""
Tests for the Fock basis and the first/second quantization bridge.
"""
import math

import numpy as np
import pytest

from src.models.fockspace import (
    FockBasis,
    ManyBodyState,
    SymmetricTensor,
    enumerate_basis,
    symmetrize_values,
    tensor_from_vector,
    tensors_from_columns,
    vector_from_tensor,
)
from src.utils.errors import (
    CapacityError,
    DimensionMismatchError,
    SymmetryViolationError,
    ZeroStateError,
)


def _random_state(L: int, N: int, seed: int = 7) -> ManyBodyState:
    basis = enumerate_basis(L, N)
    rng = np.random.default_rng(seed)
    coefficients = rng.normal(size=len(basis)) + 1j * rng.normal(size=len(basis))
    return ManyBodyState(basis, coefficients / np.linalg.norm(coefficients))


def test_basis_size_and_order():
    """Basis holds C(L+N-1, N) states in descending lexicographic order."""
    basis = enumerate_basis(4, 3)
    assert len(basis) == math.comb(6, 3)
    assert tuple(basis.states[0]) == (3, 0, 0, 0)
    assert tuple(basis.states[-1]) == (0, 0, 0, 3)
    rows = [tuple(row) for row in basis.states.tolist()]
    assert rows == sorted(rows, reverse=True)
    assert np.all(basis.states.sum(axis=1) == 3)


def test_basis_size_for_three_bosons_on_28_sites():
    assert len(enumerate_basis(28, 3)) == 4060


def test_basis_is_cached_and_read_only():
    assert enumerate_basis(5, 2) is enumerate_basis(5, 2)
    with pytest.raises(ValueError):
        enumerate_basis(5, 2).states[0, 0] = 9


def test_index_of_matches_position():
    basis = enumerate_basis(5, 2)
    for i, row in enumerate(basis.states):
        assert basis.index_of(row) == i


def test_index_of_rejects_foreign_occupations():
    basis = enumerate_basis(3, 2)
    with pytest.raises(DimensionMismatchError):
        basis.index_of((1, 1, 1))
    with pytest.raises(DimensionMismatchError):
        basis.index_of((2, 0))


def test_capacity_error_above_cap():
    with pytest.raises(CapacityError):
        FockBasis(28, 3, cap=1000)


def test_zero_particles_and_single_site():
    assert len(FockBasis(4, 0)) == 1
    assert len(FockBasis(1, 5)) == 1


def test_invalid_sizes_raise():
    with pytest.raises(ValueError):
        FockBasis(0, 1)
    with pytest.raises(ValueError):
        FockBasis(3, -1)


def test_tensor_of_fock_states():
    """|2,0> puts all weight on psi[0,0]; |1,1> splits it evenly over psi[0,1] and psi[1,0]."""
    basis = enumerate_basis(2, 2)
    doubly = tensor_from_vector(ManyBodyState.from_fock(basis, (2, 0))).values
    assert doubly[0, 0] == pytest.approx(1.0)
    assert abs(doubly[0, 1]) == pytest.approx(0.0)

    split = tensor_from_vector(ManyBodyState.from_fock(basis, (1, 1))).values
    assert split[0, 1] == pytest.approx(1.0 / math.sqrt(2.0))
    assert split[1, 0] == pytest.approx(1.0 / math.sqrt(2.0))
    assert abs(split[1, 1]) == pytest.approx(0.0)


def test_tensor_preserves_norm_and_symmetry():
    state = _random_state(4, 3)
    tensor = tensor_from_vector(state)
    assert tensor.values.shape == (4, 4, 4)
    assert tensor.norm() == pytest.approx(1.0, abs=1e-12)
    assert tensor.is_symmetric(1e-12)


def test_vector_from_tensor_inverts_tensor_from_vector():
    state = _random_state(5, 3, seed=11)
    restored = vector_from_tensor(tensor_from_vector(state), state.basis)
    np.testing.assert_allclose(restored.coefficients, state.coefficients, atol=1e-12)


def test_tensors_from_columns_matches_single_conversion():
    state_a = _random_state(4, 2, seed=1)
    state_b = _random_state(4, 2, seed=2)
    stack = tensors_from_columns(state_a.basis, np.stack([state_a.coefficients, state_b.coefficients], axis=1))
    np.testing.assert_allclose(stack[0], tensor_from_vector(state_a).values, atol=1e-14)
    np.testing.assert_allclose(stack[1], tensor_from_vector(state_b).values, atol=1e-14)


def test_asymmetric_tensor_is_rejected():
    values = np.zeros((3, 3))
    values[0, 1] = 1.0
    with pytest.raises(SymmetryViolationError):
        vector_from_tensor(SymmetricTensor(values), enumerate_basis(3, 2))


def test_symmetrize_values_makes_tensor_symmetric():
    rng = np.random.default_rng(3)
    tensor = SymmetricTensor(symmetrize_values(rng.normal(size=(3, 3, 3))))
    assert tensor.is_symmetric(1e-14)


def test_tensor_shape_must_match_basis():
    with pytest.raises(DimensionMismatchError):
        vector_from_tensor(SymmetricTensor(np.zeros((3, 3))), enumerate_basis(4, 2))


def test_unnormalized_state_is_rejected():
    basis = enumerate_basis(3, 2)
    state = ManyBodyState(basis, 2.0 * ManyBodyState.from_fock(basis, (2, 0, 0)).coefficients)
    with pytest.raises(ValueError):
        tensor_from_vector(state)


def test_zero_state_cannot_be_normalized():
    basis = enumerate_basis(3, 2)
    with pytest.raises(ZeroStateError):
        ManyBodyState(basis, np.zeros(len(basis))).normalized()


def test_coefficient_length_is_checked():
    with pytest.raises(DimensionMismatchError):
        ManyBodyState(enumerate_basis(3, 2), np.zeros(4))


def test_inner_product():
    basis = enumerate_basis(3, 2)
    a = ManyBodyState.from_fock(basis, (1, 1, 0))
    b = ManyBodyState(basis, (a.coefficients + ManyBodyState.from_fock(basis, (0, 0, 2)).coefficients) / math.sqrt(2.0))
    assert a.inner(a) == pytest.approx(1.0)
    assert a.inner(b) == pytest.approx(1.0 / math.sqrt(2.0))
    with pytest.raises(DimensionMismatchError):
        a.inner(ManyBodyState.from_fock(enumerate_basis(4, 2), (1, 1, 0, 0)))
