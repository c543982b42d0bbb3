"""
Density correlations and localization measures.

C1_i = <n_i>
C2_ij = <b+_i b+_j b_j b_i>
C3_ijk = <b+_i b+_j b+_k b_k b_j b_i>
IPR(v) = sum |v|^4 / (sum |v|^2)^2
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.models.fockspace import ManyBodyState, SymmetricTensor
from src.utils.errors import OrderError, ZeroStateError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorrelationSet:
    """Raw normal-ordered correlations up to the requested order."""
    c1: np.ndarray
    c2: Optional[np.ndarray] = None
    c3: Optional[np.ndarray] = None

    @property
    def max_order(self) -> int:
        return 3 if self.c3 is not None else 2 if self.c2 is not None else 1


def _check_order(max_order: int, N: int):
    if not 1 <= max_order <= 3:
        raise OrderError(f"Correlation order must be 1, 2 or 3, got {max_order}")
    if max_order > N:
        raise OrderError(f"Correlation order {max_order} exceeds particle number {N}")


def correlations(state: ManyBodyState, max_order: int = 2) -> CorrelationSet:
    """Correlations computed from Fock coefficients and occupation numbers."""
    N = state.basis.N
    _check_order(max_order, N)

    probabilities = np.abs(state.coefficients) ** 2
    occupations = state.basis.states.astype(float)
    L = state.basis.L

    c1 = probabilities @ occupations
    if max_order == 1:
        return CorrelationSet(c1)

    second = np.einsum("d,di,dj->ij", probabilities, occupations, occupations)
    c2 = second - np.diag(c1)
    if max_order == 2:
        return CorrelationSet(c1, c2)

    c3 = np.einsum("d,di,dj,dk->ijk", probabilities, occupations, occupations, occupations, optimize=True)
    sites = np.arange(L)
    c3[sites, sites, :] -= second
    c3[sites, :, sites] -= second
    c3[:, sites, sites] -= second
    c3[sites, sites, sites] += 2.0 * c1
    return CorrelationSet(c1, c2, c3)


def correlations_from_tensor(tensor: SymmetricTensor, max_order: int = 2) -> CorrelationSet:
    """Same correlations from the first-quantized amplitudes."""
    N = tensor.order
    _check_order(max_order, N)

    weights = np.abs(tensor.values) ** 2
    c1 = N * weights.reshape(tensor.extent, -1).sum(axis=1)
    c2 = c3 = None
    if max_order >= 2:
        c2 = N * (N - 1) * weights.reshape(tensor.extent, tensor.extent, -1).sum(axis=2)
    if max_order >= 3:
        c3 = N * (N - 1) * (N - 2) * weights.reshape((tensor.extent,) * 3 + (-1,)).sum(axis=3)
    return CorrelationSet(c1, c2, c3)


def ipr(values: np.ndarray) -> float:
    """Inverse participation ratio of any nonzero array."""
    weights = np.abs(np.asarray(values)) ** 2
    total = float(np.sum(weights))
    if total == 0.0:
        raise ZeroStateError("IPR of a zero vector is undefined")
    return float(np.sum(weights ** 2) / total ** 2)


def ipr_vector(v: np.ndarray) -> float:
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError(f"Expected a vector, got shape {v.shape}")
    return ipr(v)


def ipr_two_particle(chi: np.ndarray) -> float:
    chi = np.asarray(chi)
    if chi.ndim != 2 or chi.shape[0] != chi.shape[1]:
        raise ValueError(f"Expected an L x L tensor, got shape {chi.shape}")
    return ipr(chi)


def one_body_density_matrix(values: np.ndarray) -> np.ndarray:
    """
    rho_ab = <b+_b b_a> of a first-quantized amplitude array with N = values.ndim.

    Trace equals N times the squared norm of the amplitudes.
    """
    values = np.asarray(values)
    if values.ndim == 1:
        return np.outer(values, values.conj())
    matrix = values.reshape(values.shape[0], -1)
    return values.ndim * (matrix @ matrix.conj().T)


def localization_sites(density: np.ndarray, count: int = 1) -> List[int]:
    """1-based sites of the `count` highest local maxima of a density profile."""
    density = np.asarray(density, dtype=float)
    padded = np.concatenate(([-np.inf], density, [-np.inf]))
    peaks = np.nonzero((density >= padded[:-2]) & (density >= padded[2:]))[0]
    ranked = peaks[np.argsort(-density[peaks], kind="stable")]
    return [int(site) + 1 for site in ranked[:count]]
