"""
Bosonic Fock space on a one-dimensional lattice.

Provides:
- FockBasis: every occupation vector of N bosons on L sites, lexicographically descending
- ManyBodyState: coefficient vector over a FockBasis (second quantization)
- SymmetricTensor: amplitudes psi[i1, ..., iN] over ordered site tuples (first quantization)

The two pictures are tied by
    c_n = sqrt(N! / prod_j n_j!) * psi[sorted positions of n]
so that the sum of |psi|^2 over all ordered tuples equals the sum of |c_n|^2.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import (
    CapacityError,
    DimensionMismatchError,
    SymmetryViolationError,
    ZeroStateError,
)

logger = logging.getLogger(__name__)

DEFAULT_BASIS_CAP = 2 ** 24


def _descending_occupations(L: int, N: int) -> Iterator[Tuple[int, ...]]:
    """Yield occupation tuples in lexicographically descending order."""
    if L == 1:
        yield (N,)
        return
    for first in range(N, -1, -1):
        for rest in _descending_occupations(L - 1, N - first):
            yield (first,) + rest


class FockBasis:
    """
    Ordered occupation-number basis for N bosons on L sites.

    Instances are immutable: the state table is a read-only array and the
    lookup dictionary is never modified after construction.
    """

    def __init__(self, L: int, N: int, cap: int = DEFAULT_BASIS_CAP):
        if L < 1:
            raise ValueError(f"Lattice needs at least one site, got L={L}")
        if N < 0:
            raise ValueError(f"Particle number must be non-negative, got N={N}")

        size = math.comb(L + N - 1, N)
        if size > cap:
            raise CapacityError(
                f"Fock basis for L={L}, N={N} has {size} states, above the cap of {cap}"
            )

        self.L = L
        self.N = N
        states = np.array(list(_descending_occupations(L, N)), dtype=np.int64).reshape(size, L)
        states.setflags(write=False)
        self.states = states
        self.index: Dict[Tuple[int, ...], int] = {
            tuple(row): i for i, row in enumerate(states.tolist())
        }
        logger.debug(f"Enumerated Fock basis L={L} N={N}: {size} states")

    def __len__(self) -> int:
        return self.states.shape[0]

    def __repr__(self) -> str:
        return f"FockBasis(L={self.L}, N={self.N}, size={len(self)})"

    @property
    def size(self) -> int:
        return len(self)

    def index_of(self, occupations: Sequence[int]) -> int:
        """Ordinal of an occupation vector."""
        key = tuple(int(n) for n in occupations)
        if len(key) != self.L or sum(key) != self.N:
            raise DimensionMismatchError(
                f"Occupation vector {key} is not a state of L={self.L}, N={self.N}"
            )
        return self.index[key]

    def indices_of(self, occupations: np.ndarray) -> np.ndarray:
        """Vectorized index lookup for a (M, L) array of occupation vectors."""
        rows = np.asarray(occupations).tolist()
        return np.fromiter((self.index[tuple(r)] for r in rows), dtype=np.int64, count=len(rows))

    @cached_property
    def fock_weights(self) -> np.ndarray:
        """sqrt(prod_j n_j! / N!) per basis state."""
        factorials = np.array([math.factorial(k) for k in range(self.N + 1)], dtype=float)
        prod = np.prod(factorials[self.states], axis=1)
        return np.sqrt(prod / math.factorial(self.N))

    @cached_property
    def ordered_to_basis(self) -> np.ndarray:
        """Basis ordinal of every ordered site tuple, flattened in C order (length L**N)."""
        if self.N == 0:
            return np.zeros(1, dtype=np.int64)
        tuples = np.indices((self.L,) * self.N).reshape(self.N, -1).T
        occupations = np.zeros((tuples.shape[0], self.L), dtype=np.int64)
        rows = np.arange(tuples.shape[0])
        for column in tuples.T:
            np.add.at(occupations, (rows, column), 1)
        return self.indices_of(occupations)

    @cached_property
    def basis_to_ordered(self) -> np.ndarray:
        """Flat index of the sorted position tuple of every basis state."""
        if self.N == 0:
            return np.zeros(1, dtype=np.int64)
        sites = np.arange(self.L)
        flat = np.empty(len(self), dtype=np.int64)
        shape = (self.L,) * self.N
        for i, row in enumerate(self.states):
            positions = np.repeat(sites, row)
            flat[i] = np.ravel_multi_index(tuple(positions), shape)
        return flat


@lru_cache(maxsize=64)
def enumerate_basis(L: int, N: int, cap: int = DEFAULT_BASIS_CAP) -> FockBasis:
    """
    Complete, deterministically ordered Fock basis.

    Cached: repeated requests for the same (L, N, cap) share one immutable instance.
    """
    return FockBasis(L, N, cap)


@dataclass(frozen=True)
class ManyBodyState:
    """Coefficients over a Fock basis, optionally tagged with the eigenvalue they belong to."""
    basis: FockBasis
    coefficients: np.ndarray
    energy: Optional[float] = None

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients)
        if coefficients.shape != (len(self.basis),):
            raise DimensionMismatchError(
                f"Coefficient vector of shape {coefficients.shape} does not match basis size {len(self.basis)}"
            )
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def from_fock(cls, basis: FockBasis, occupations: Sequence[int]) -> "ManyBodyState":
        """Single Fock state |n_1, ..., n_L>."""
        coefficients = np.zeros(len(basis), dtype=complex)
        coefficients[basis.index_of(occupations)] = 1.0
        return cls(basis, coefficients)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def normalized(self) -> "ManyBodyState":
        norm = self.norm()
        if norm == 0.0:
            raise ZeroStateError("Cannot normalize the zero state")
        return ManyBodyState(self.basis, self.coefficients / norm, self.energy)

    def inner(self, other: "ManyBodyState") -> complex:
        """<self|other>."""
        if other.basis is not self.basis and (other.basis.L, other.basis.N) != (self.basis.L, self.basis.N):
            raise DimensionMismatchError("States live in different Fock spaces")
        return complex(np.vdot(self.coefficients, other.coefficients))


@dataclass(frozen=True)
class SymmetricTensor:
    """First-quantized amplitudes, shape (L,) * N."""
    values: np.ndarray = field(repr=False)

    @property
    def order(self) -> int:
        return self.values.ndim

    @property
    def extent(self) -> int:
        return self.values.shape[0] if self.values.ndim else 0

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def symmetry_error(self) -> float:
        """Largest deviation between the tensor and any of its index permutations."""
        if self.order < 2:
            return 0.0
        return max(
            float(np.max(np.abs(self.values - np.transpose(self.values, perm))))
            for perm in itertools.permutations(range(self.order))
        )

    def is_symmetric(self, tol: float = 1e-8) -> bool:
        return self.symmetry_error() <= tol

    def as_matrix(self) -> np.ndarray:
        """Reshape to (L, L**(N-1)): first index against the remaining ones."""
        return self.values.reshape(self.extent, -1)


def symmetrize_values(values: np.ndarray) -> np.ndarray:
    """Average of an array over all permutations of its axes."""
    if values.ndim < 2:
        return np.array(values, copy=True)
    perms = list(itertools.permutations(range(values.ndim)))
    return sum(np.transpose(values, perm) for perm in perms) / len(perms)


def tensor_from_vector(state: ManyBodyState, check_norm: bool = True) -> SymmetricTensor:
    """Symmetric first-quantized tensor of a normalized Fock-space state."""
    if check_norm and not state.is_normalized(1e-8):
        raise ValueError(f"State must be normalized, norm is {state.norm():.3e}")
    basis = state.basis
    gather = basis.ordered_to_basis
    flat = state.coefficients[gather] * basis.fock_weights[gather]
    return SymmetricTensor(flat.reshape((basis.L,) * basis.N))


def tensors_from_columns(basis: FockBasis, columns: np.ndarray) -> np.ndarray:
    """
    Convert many coefficient vectors at once.

    Args:
        basis: Fock basis of the columns
        columns: array of shape (len(basis), K)

    Returns:
        Array of shape (K,) + (L,) * N
    """
    columns = np.asarray(columns)
    if columns.ndim != 2 or columns.shape[0] != len(basis):
        raise DimensionMismatchError(
            f"Expected columns of shape ({len(basis)}, K), got {columns.shape}"
        )
    gather = basis.ordered_to_basis
    flat = columns[gather, :] * basis.fock_weights[gather][:, None]
    return flat.T.reshape((columns.shape[1],) + (basis.L,) * basis.N)


def vector_from_tensor(
    tensor: SymmetricTensor,
    basis: FockBasis,
    renormalize: bool = False,
    tol: float = 1e-8
) -> ManyBodyState:
    """Fock-space coefficients of a symmetric tensor; inverse of tensor_from_vector."""
    expected = (basis.L,) * basis.N
    if tensor.values.shape != expected:
        raise DimensionMismatchError(
            f"Tensor of shape {tensor.values.shape} does not match basis L={basis.L}, N={basis.N}"
        )
    error = tensor.symmetry_error()
    if error > tol:
        raise SymmetryViolationError(f"Tensor is not symmetric: deviation {error:.3e} > {tol:.1e}")

    flat = tensor.values.reshape(-1)
    coefficients = flat[basis.basis_to_ordered] / basis.fock_weights
    state = ManyBodyState(basis, coefficients)
    if renormalize:
        state = state.normalized()
    return state
