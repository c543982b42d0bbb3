"""
Dense Hermitian eigendecomposition and SVD with explicit numerical contracts.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg

from src.models.fockspace import FockBasis, ManyBodyState
from src.models.model import HamiltonianMatrix
from src.utils.errors import ConvergenceError, NonHermitianError, NumericalContractError

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
CONTRACT_TOL = 1e-10


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues ascending, eigenvectors as orthonormal columns."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    basis: Optional[FockBasis] = None

    def __len__(self) -> int:
        return self.eigenvalues.shape[0]

    def state(self, k: int) -> ManyBodyState:
        """k-th eigenvector as a ManyBodyState tagged with its energy."""
        if self.basis is None:
            raise ValueError("EigenSystem has no Fock basis attached")
        return ManyBodyState(self.basis, self.eigenvectors[:, k], float(self.eigenvalues[k]))

    def max_residual(self, matrix: np.ndarray) -> float:
        residuals = matrix @ self.eigenvectors - self.eigenvectors * self.eigenvalues
        return float(np.max(np.linalg.norm(residuals, axis=0))) if len(self) else 0.0

    def orthonormality_error(self) -> float:
        gram = self.eigenvectors.conj().T @ self.eigenvectors
        return float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if len(self) else 0.0


@dataclass(frozen=True)
class SvdResult:
    """M = left_vectors @ diag(singular_values) @ right_vectors."""
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors


def fix_phase(vector: np.ndarray) -> np.ndarray:
    """Rotate a vector so its largest-magnitude entry is real and positive."""
    vector = np.asarray(vector)
    pivot = vector[np.argmax(np.abs(vector))]
    if pivot == 0:
        return vector
    return vector * (np.conj(pivot) / abs(pivot))


def _as_array(H: Union[HamiltonianMatrix, np.ndarray]) -> np.ndarray:
    return H.entries if isinstance(H, HamiltonianMatrix) else np.asarray(H)


def eigh(H: Union[HamiltonianMatrix, np.ndarray], verify: bool = False) -> EigenSystem:
    """
    Full eigendecomposition of a Hermitian matrix.

    Raises:
        NonHermitianError: if max|H - H^dagger| exceeds 1e-10 (relative to max|H| when larger than 1)
        ConvergenceError: if LAPACK fails
        NumericalContractError: if verify is set and the residual/orthonormality contract fails
    """
    matrix = _as_array(H)
    basis = H.basis if isinstance(H, HamiltonianMatrix) else None
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"eigh needs a square matrix, got shape {matrix.shape}")
    if matrix.shape[0] == 0:
        return EigenSystem(np.zeros(0), np.zeros((0, 0)), basis)

    scale = max(1.0, float(np.max(np.abs(matrix))))
    asymmetry = float(np.max(np.abs(matrix - matrix.conj().T)))
    if asymmetry > HERMITIAN_TOL * scale:
        raise NonHermitianError(f"Matrix is not Hermitian: max|H - H^dagger| = {asymmetry:.3e}")

    symmetric = 0.5 * (matrix + matrix.conj().T)
    try:
        eigenvalues, eigenvectors = scipy.linalg.eigh(symmetric)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise ConvergenceError(f"eigh did not converge: {e}") from e

    system = EigenSystem(eigenvalues, eigenvectors, basis)
    if verify:
        bound = CONTRACT_TOL * scale * matrix.shape[0]
        residual = system.max_residual(symmetric)
        if residual > bound:
            raise NumericalContractError(f"Eigen residual {residual:.3e} exceeds {bound:.3e}")
        overlap_error = system.orthonormality_error()
        if overlap_error > CONTRACT_TOL:
            raise NumericalContractError(f"Eigenvectors not orthonormal: {overlap_error:.3e}")
    return system


def svd(M: np.ndarray, fix_gauge: bool = True) -> SvdResult:
    """
    Thin SVD with singular values descending.

    With fix_gauge set, every left vector is phase-fixed so its largest-magnitude
    entry is real positive; the matching right row absorbs the conjugate phase.
    """
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("svd input contains non-finite entries")

    try:
        left, values, right = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesdd")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        logger.warning("gesdd failed, retrying SVD with gesvd")
        try:
            left, values, right = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            raise ConvergenceError(f"SVD did not converge: {e}") from e

    if fix_gauge and values.size:
        pivots = left[np.argmax(np.abs(left), axis=0), np.arange(left.shape[1])]
        magnitudes = np.abs(pivots)
        phases = np.where(magnitudes > 0, pivots / np.where(magnitudes > 0, magnitudes, 1.0), 1.0)
        left = left * np.conj(phases)
        right = right * phases[:, None]

    return SvdResult(values, left, right)
