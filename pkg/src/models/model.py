"""
Bose-Hubbard Hamiltonians on a one-dimensional superlattice.

H = -J sum_<ab> (b+_a b_b + h.c.) + sum_j V_j n_j + U/2 sum_j n_j (n_j - 1)
with V_j = V cos(2 pi beta (j + 1/2) + xi), beta = p/q, sites j = 1..L.

Also builds the effective (N-1)-particle Hamiltonian seen by the localized
particles when one particle occupies an extended single-particle state phi:
the potential becomes V_j + 2U |phi_j|^2, optionally with the pair-breaking
term U sum_ij (phi*_i phi_j b+_i b+_j b_j b_j + h.c.).
"""
import logging
import math
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.models.fockspace import DEFAULT_BASIS_CAP, FockBasis, enumerate_basis
from src.utils.errors import ConfigError, DimensionMismatchError

logger = logging.getLogger(__name__)

BOUNDARIES = ("open", "periodic")

# (a, b, t): term -t (b+_a b_b + b+_b b_a), 0-based sites
Bond = Tuple[int, int, float]


@dataclass(frozen=True)
class ModelParams:
    """All Hamiltonian parameters. Energies in units of J."""
    L: int
    N: int
    J: float = 1.0
    U: float = 0.0
    V: float = 0.0
    p: int = 1
    q: int = 4
    xi: float = 0.0
    boundary: str = "open"

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.N < 0:
            raise ConfigError(f"N must be >= 0, got {self.N}")
        if self.p < 1 or self.q < 1:
            raise ConfigError(f"p and q must be positive integers, got p={self.p}, q={self.q}")
        if math.gcd(self.p, self.q) != 1:
            raise ConfigError(f"p/q = {self.p}/{self.q} is not in lowest terms")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}, got '{self.boundary}'")

    @property
    def beta(self) -> float:
        return self.p / self.q

    def with_particles(self, N: int) -> "ModelParams":
        return replace(self, N=N)

    def with_overrides(self, **overrides: Any) -> "ModelParams":
        return replace(self, **overrides)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class HamiltonianMatrix:
    """Dense Hamiltonian over a Fock basis."""
    basis: FockBasis
    entries: np.ndarray

    def __post_init__(self):
        size = len(self.basis)
        if self.entries.shape != (size, size):
            raise DimensionMismatchError(
                f"Matrix of shape {self.entries.shape} does not match basis size {size}"
            )

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T))) if self.dimension else 0.0

    def nonzero_entries(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, values) of the nonzero entries, row-major."""
        rows, cols = np.nonzero(self.entries)
        return rows, cols, self.entries[rows, cols]


def onsite_potential(params: ModelParams, j: int) -> float:
    """V_j for a 1-based site index."""
    if not 1 <= j <= params.L:
        raise IndexError(f"Site {j} outside 1..{params.L}")
    return params.V * math.cos(2.0 * math.pi * params.beta * (j + 0.5) + params.xi)


def potential_profile(params: ModelParams) -> np.ndarray:
    """V_j for every site, as an array indexed 0..L-1."""
    sites = np.arange(1, params.L + 1)
    return params.V * np.cos(2.0 * np.pi * params.beta * (sites + 0.5) + params.xi)


def chain_bonds(L: int, J: float, boundary: str = "open") -> List[Bond]:
    """Nearest-neighbour bonds of a chain; periodic adds the L-1 <-> 0 bond when L > 2."""
    bonds = [(a, a + 1, J) for a in range(L - 1)]
    if boundary == "periodic" and L > 2:
        bonds.append((L - 1, 0, J))
    return bonds


def hopping_operator(basis: FockBasis, bonds: Sequence[Bond]) -> np.ndarray:
    """Dense matrix of -sum t (b+_a b_b + h.c.) over the given bonds."""
    size = len(basis)
    matrix = np.zeros((size, size))
    states = basis.states

    for a, b, t in bonds:
        for src, dst in ((b, a), (a, b)):
            movable = np.nonzero(states[:, src] > 0)[0]
            if movable.size == 0:
                continue
            targets = np.array(states[movable])
            amplitude = np.sqrt((targets[:, dst] + 1) * targets[:, src])
            targets[:, dst] += 1
            targets[:, src] -= 1
            np.add.at(matrix, (basis.indices_of(targets), movable), -t * amplitude)

    return matrix


def interaction_diagonal(basis: FockBasis, potential: np.ndarray, U: float) -> np.ndarray:
    """sum_j V_j n_j + U/2 n_j (n_j - 1) for each basis state."""
    states = basis.states.astype(float)
    return states @ np.asarray(potential) + 0.5 * U * np.sum(states * (states - 1.0), axis=1)


def number_operator_diagonal(basis: FockBasis, sites: Sequence[int]) -> np.ndarray:
    """Total occupation of the given 0-based sites for each basis state."""
    return basis.states[:, list(sites)].sum(axis=1).astype(float)


@lru_cache(maxsize=4)
def _chain_hopping(L: int, N: int, J: float, boundary: str, cap: int) -> np.ndarray:
    basis = enumerate_basis(L, N, cap)
    matrix = hopping_operator(basis, chain_bonds(L, J, boundary))
    matrix.setflags(write=False)
    return matrix


def build_hamiltonian(params: ModelParams, cap: int = DEFAULT_BASIS_CAP) -> HamiltonianMatrix:
    """Bose-Hubbard Hamiltonian of the superlattice."""
    basis = enumerate_basis(params.L, params.N, cap)
    entries = np.array(_chain_hopping(params.L, params.N, params.J, params.boundary, cap))
    entries[np.diag_indices_from(entries)] += interaction_diagonal(
        basis, potential_profile(params), params.U
    )
    logger.debug(f"Built H for L={params.L} N={params.N} U={params.U} V={params.V} xi={params.xi:.6f}")
    return HamiltonianMatrix(basis, entries)


def pair_breaking_operator(basis: FockBasis, phi: np.ndarray) -> np.ndarray:
    """Matrix of sum_ij phi*_i phi_j b+_i b+_j b_j b_j (without the U prefactor or h.c.)."""
    size = len(basis)
    matrix = np.zeros((size, size), dtype=np.result_type(phi, float))
    states = basis.states

    for j in range(basis.L):
        movable = np.nonzero(states[:, j] >= 2)[0]
        if movable.size == 0:
            continue
        source = states[movable]
        n_j = source[:, j].astype(float)
        for i in range(basis.L):
            coefficient = np.conj(phi[i]) * phi[j]
            if coefficient == 0:
                continue
            if i == j:
                matrix[movable, movable] += coefficient * n_j * (n_j - 1.0)
                continue
            targets = np.array(source)
            amplitude = np.sqrt(n_j * (n_j - 1.0)) * np.sqrt(n_j - 1.0) * np.sqrt(targets[:, i] + 1.0)
            targets[:, j] -= 1
            targets[:, i] += 1
            np.add.at(matrix, (basis.indices_of(targets), movable), coefficient * amplitude)

    return matrix


def build_effective_hamiltonian(
    params: ModelParams,
    phi: np.ndarray,
    include_pair_breaking: bool = False,
    cap: int = DEFAULT_BASIS_CAP
) -> HamiltonianMatrix:
    """
    Effective Hamiltonian of the localized particles.

    Args:
        params: model parameters whose N is already the reduced particle number
        phi: unit-norm single-particle state of the extended particle
        include_pair_breaking: add U (phi*_i phi_j b+_i b+_j b_j b_j + h.c.)
        cap: Fock basis size cap

    Returns:
        HamiltonianMatrix over the (L, N) basis of params
    """
    phi = np.asarray(phi)
    if phi.shape != (params.L,):
        raise DimensionMismatchError(f"phi has shape {phi.shape}, expected ({params.L},)")
    norm = np.linalg.norm(phi)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"phi must be unit norm, got {norm:.6e}")

    basis = enumerate_basis(params.L, params.N, cap)

    entries = np.array(_chain_hopping(params.L, params.N, params.J, params.boundary, cap))
    if include_pair_breaking and params.U != 0.0 and params.N >= 2:
        pair = params.U * pair_breaking_operator(basis, phi)
        entries = entries + pair + pair.conj().T
    entries[np.diag_indices_from(entries)] += interaction_diagonal(
        basis, effective_potential(params, phi), params.U
    )

    return HamiltonianMatrix(basis, entries)


def single_particle_hamiltonian(params: ModelParams) -> np.ndarray:
    """L x L matrix of H^(1)."""
    return build_hamiltonian(params.with_particles(1)).entries


def build_matrix(
    basis: FockBasis,
    bonds: Sequence[Bond],
    potential: np.ndarray,
    U: float
) -> HamiltonianMatrix:
    """Hamiltonian for an arbitrary bond list, used for lattices with attached auxiliary sites."""
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (basis.L,):
        raise DimensionMismatchError(f"Potential has shape {potential.shape}, expected ({basis.L},)")
    entries = hopping_operator(basis, bonds)
    entries[np.diag_indices_from(entries)] += interaction_diagonal(basis, potential, U)
    return HamiltonianMatrix(basis, entries)


def effective_potential(params: ModelParams, phi: np.ndarray) -> np.ndarray:
    """V_j + 2U |phi_j|^2."""
    phi = np.asarray(phi)
    if phi.shape != (params.L,):
        raise DimensionMismatchError(f"phi has shape {phi.shape}, expected ({params.L},)")
    return potential_profile(params) + 2.0 * params.U * np.abs(phi) ** 2


def describe(params: ModelParams, basis: Optional[FockBasis] = None) -> str:
    """One-line summary for log messages."""
    size = len(basis) if basis is not None else math.comb(params.L + params.N - 1, params.N)
    return (
        f"L={params.L} N={params.N} J={params.J:g} U={params.U:g} V={params.V:g} "
        f"beta={params.p}/{params.q} xi={params.xi:.6f} {params.boundary} (dim {size})"
    )
