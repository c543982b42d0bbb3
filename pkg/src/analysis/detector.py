"""
Self-localized eigenstate detection.

An N-boson eigenstate is self-localized when it factorizes as the symmetrized
product of one extended particle phi and an (N-1)-particle localized part chi:
    Psi = Sym(phi (x) chi)

Pipeline per eigenstate:
1. SVD of the tensor reshaped to L x L^(N-1)
2. Singular-value pattern screening (three dominant: independent, two dominant: correlated)
3. Extraction of phi and chi from the leading singular subspace
4. Screening on extended-state overlaps, IPR(chi) and reconstruction fidelity
5. Optional validation against the effective Hamiltonian eigenstates (refine_chi)
6. Exclusion of non-interacting edge states

Inside degenerate singular subspaces the vectors are chosen as the greedy
maximum-IPR directions, so the output does not depend on how LAPACK picks a
basis for the subspace.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache, partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from src.analysis.observables import (
    correlations_from_tensor,
    ipr,
    localization_sites,
    one_body_density_matrix,
)
from src.models.fockspace import (
    DEFAULT_BASIS_CAP,
    ManyBodyState,
    SymmetricTensor,
    enumerate_basis,
    symmetrize_values,
    tensor_from_vector,
    tensors_from_columns,
    vector_from_tensor,
)
from src.models.model import ModelParams, build_effective_hamiltonian, build_hamiltonian
from src.models.spectral import eigh, fix_phase, svd
from src.utils.errors import CapacityError, ConfigError, DimensionMismatchError, ZeroStateError
from src.utils.failure_tracker import FailureTracker
from src.utils.thread_pool_manager import ParallelTaskRunner, Task

logger = logging.getLogger(__name__)

AMBIGUITY_TOL = 1e-6
DEGENERACY_TOL = 1e-6
DEGENERATE_LEVEL_TOL = 1e-2  # H_eff level grouping, units of |J|


class StateClass(str, Enum):
    """Detection outcome for one eigenstate."""
    INDEPENDENT_ALL = "IndependentALL"
    CORRELATED_ALL = "CorrelatedALL"
    ONE_LOCALIZED = "OneLocalized"
    TWO_PARTICLE_ALL = "TwoParticleALL"
    NOT_SELF_LOCALIZED = "NotSelfLocalized"


SELF_LOCALIZED_CLASSES = (
    StateClass.INDEPENDENT_ALL,
    StateClass.CORRELATED_ALL,
    StateClass.TWO_PARTICLE_ALL,
)


@dataclass(frozen=True)
class ScreeningThresholds:
    """Screening thresholds; *_min are lower bounds, *_max upper bounds."""
    sv_sum_min: float = 0.8
    extended_overlap_min: float = 0.9
    ipr_chi_min_independent: float = 0.4
    ipr_chi_min_correlated: float = 0.8
    ipr_chi_min_two_particle: float = 0.8
    fidelity_min: float = 0.9
    ipr_phi_max: float = 0.3
    ratio_max: float = 1.5
    slice_weight_min: float = 0.8
    other_density_max: float = 0.4
    edge_ipr_min: float = 0.4
    edge_fidelity_min: float = 0.9
    require_effective_fidelity: bool = True

    def __post_init__(self):
        for name, value in self.to_dict().items():
            if name in ("ratio_max", "require_effective_fidelity"):
                continue
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"Threshold {name}={value} must lie in (0, 1]")
        if self.ratio_max < 1.0:
            raise ConfigError(f"Threshold ratio_max={self.ratio_max} must be >= 1")

    def with_overrides(self, **overrides: Any) -> "ScreeningThresholds":
        return replace(self, **overrides)

    def for_ensembles(self, ipr_phi_max: float = 0.06) -> "ScreeningThresholds":
        return replace(self, ipr_phi_max=ipr_phi_max)

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass
class DecompositionTrace:
    """Intermediate vectors and amplitudes of one decomposition."""
    singular_values: np.ndarray
    pattern_ok: bool = True
    ambiguous: bool = False
    vectors: Dict[str, np.ndarray] = field(default_factory=dict)
    amplitudes: Dict[str, complex] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class ClassificationReport:
    """Outcome of screening one eigenstate."""
    state_class: StateClass
    singular_values: np.ndarray
    energy: Optional[float] = None
    index: Optional[int] = None
    phi: Optional[np.ndarray] = field(default=None, repr=False)
    chi: Optional[np.ndarray] = field(default=None, repr=False)
    fidelity_reconstruction: Optional[float] = None
    fidelity_effective: Optional[float] = None
    ipr_chi: Optional[float] = None
    ipr_phi: Optional[float] = None
    extended_state_overlaps: Dict[str, float] = field(default_factory=dict)
    localized_sites: Tuple[int, ...] = ()
    checks: Dict[str, bool] = field(default_factory=dict)
    localized_orbital: Optional[np.ndarray] = field(default=None, repr=False)
    density_matrix: Optional[np.ndarray] = field(default=None, repr=False)
    edge_state: bool = False
    trace: Optional[DecompositionTrace] = field(default=None, repr=False, compare=False)

    @property
    def is_self_localized(self) -> bool:
        return self.state_class != StateClass.NOT_SELF_LOCALIZED

    def to_record(self) -> Dict[str, Any]:
        """JSON-serializable summary (one JSON line per eigenstate)."""
        return {
            'index': self.index,
            'energy': self.energy,
            'class': self.state_class.value,
            'edge_state': self.edge_state,
            'singular_values': [float(s) for s in self.singular_values],
            'fidelity_reconstruction': self.fidelity_reconstruction,
            'fidelity_effective': self.fidelity_effective,
            'ipr_chi': self.ipr_chi,
            'ipr_phi': self.ipr_phi,
            'extended_state_overlaps': dict(self.extended_state_overlaps),
            'localized_sites': list(self.localized_sites),
            'checks': dict(self.checks),
        }


# ---------------------------------------------------------------------------
# Subspace localization
# ---------------------------------------------------------------------------

def _coefficients(params: np.ndarray, k: int, complex_: bool) -> np.ndarray:
    """Unit coefficient vectors from hyperspherical angles (and phases), one row per parameter row."""
    params = np.atleast_2d(params)
    coefficients = np.ones((params.shape[0], k))
    for m in range(k - 1):
        angle = params[:, m]
        coefficients[:, m] *= np.cos(angle)
        coefficients[:, m + 1:] *= np.sin(angle)[:, None]
    if complex_:
        phases = np.hstack([np.zeros((params.shape[0], 1)), params[:, k - 1:]])
        coefficients = coefficients * np.exp(1j * phases)
    return coefficients


def _parameter_grid(k: int, complex_: bool) -> np.ndarray:
    axes = [np.linspace(0.0, np.pi, 24, endpoint=False)] * (k - 1)
    if complex_:
        axes += [np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)] * (k - 1)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _max_ipr_direction(Q: np.ndarray) -> np.ndarray:
    """Coefficients c (unit) maximizing IPR(Q @ c) for orthonormal columns Q."""
    k = Q.shape[1]
    if k == 1:
        return np.ones(1, dtype=Q.dtype)

    complex_ = np.iscomplexobj(Q)
    grid = _parameter_grid(k, complex_)
    candidates = Q @ _coefficients(grid, k, complex_).T
    scores = np.sum(np.abs(candidates) ** 4, axis=0)
    best = int(np.argmax(scores))

    def objective(x: np.ndarray) -> float:
        v = Q @ _coefficients(x, k, complex_)[0]
        return -float(np.sum(np.abs(v) ** 4))

    result = scipy.optimize.minimize(
        objective,
        grid[best],
        method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000},
    )
    x = result.x if result.fun <= -scores[best] else grid[best]
    return _coefficients(x, k, complex_)[0]


def localize_subspace(Q: np.ndarray) -> np.ndarray:
    """
    Unitary R such that the columns of Q @ R are greedy maximum-IPR directions.

    Column 0 is the most localized vector in span(Q), column 1 the most
    localized in the orthogonal complement of column 0, and so on.
    """
    k = Q.shape[1]
    basis = np.eye(k, dtype=Q.dtype)
    columns = []
    while basis.shape[1] > 0:
        c = _max_ipr_direction(Q @ basis)
        columns.append(basis @ c)
        if basis.shape[1] == 1:
            break
        basis = basis @ scipy.linalg.null_space(c.conj()[None, :])
    return np.stack(columns, axis=1)


@dataclass(frozen=True)
class PairSplit:
    """M ~ amplitude * (localized (x) extended + extended (x) localized)."""
    localized: np.ndarray
    extended: np.ndarray
    amplitude: complex
    ambiguous: bool
    pair_structure: bool


def _global_phase(A: np.ndarray) -> complex:
    pivot = A.flat[np.argmax(np.abs(A))]
    return pivot / abs(pivot) if pivot != 0 else 1.0


def split_pair(M: np.ndarray) -> PairSplit:
    """
    Split a symmetric L x L matrix of the form a (x) b + b (x) a into its two vectors.

    For a real symmetric matrix the two largest-magnitude eigenvalues of such a
    form have opposite signs with eigenvectors (a' +- b')/sqrt(2), which fixes
    a and b uniquely. Otherwise the leading two-dimensional left singular
    subspace is localized by maximum IPR.
    """
    M = np.asarray(M)
    symmetric = 0.5 * (M + M.T)
    if not np.any(symmetric):
        raise ZeroStateError("Cannot split a zero matrix")

    phase = _global_phase(symmetric)
    rotated = symmetric * np.conj(phase)
    first = second = None
    pair_structure = False

    if np.max(np.abs(rotated.imag)) <= 1e-10 * np.max(np.abs(rotated)):
        eigenvalues, eigenvectors = scipy.linalg.eigh(rotated.real)
        order = np.argsort(-np.abs(eigenvalues), kind="stable")[:2]
        lam, vec = eigenvalues[order], eigenvectors[:, order]
        if lam.size == 2 and lam[0] * lam[1] < 0:
            plus = vec[:, int(np.argmax(lam))]
            minus = vec[:, int(np.argmin(lam))]
            first = (plus + minus) / math.sqrt(2.0)
            second = (plus - minus) / math.sqrt(2.0)
            pair_structure = True

    if first is None:
        left = svd(symmetric).left_vectors[:, :2]
        if left.shape[1] < 2:
            first, second = left[:, 0], np.zeros_like(left[:, 0])
        else:
            rotation = localize_subspace(left)
            local = left @ rotation
            first, second = local[:, 0], local[:, 1]

    first, second = fix_phase(first), fix_phase(second)
    ipr_first = ipr(first) if np.any(first) else 0.0
    ipr_second = ipr(second) if np.any(second) else 0.0
    localized, extended = (first, second) if ipr_first >= ipr_second else (second, first)
    amplitude = complex(np.einsum("j,k,jk->", localized.conj(), extended.conj(), M))

    return PairSplit(
        localized=localized,
        extended=extended,
        amplitude=amplitude,
        ambiguous=abs(ipr_first - ipr_second) < AMBIGUITY_TOL,
        pair_structure=pair_structure,
    )


# ---------------------------------------------------------------------------
# Reconstruction and fidelities
# ---------------------------------------------------------------------------

def ansatz_fidelities(psi_values: np.ndarray, phi: np.ndarray, chi_stack: np.ndarray) -> np.ndarray:
    """
    |<Psi|Sym(phi (x) chi_k)>| / ||Sym(phi (x) chi_k)|| for a stack of symmetric chi_k.

    Closed form for unit phi and symmetric chi:
        <Psi|Sym(phi (x) chi)> = N <Psi|phi (x) chi>
        ||Sym(phi (x) chi)||^2 = N ||chi||^2 + N (N-1) ||phi^dagger chi||^2
    """
    N = psi_values.ndim
    phi = np.asarray(phi) / np.linalg.norm(phi)
    chi_stack = np.asarray(chi_stack)
    K = chi_stack.shape[0]

    contracted = np.tensordot(phi, psi_values.conj(), axes=([0], [0]))
    chi_axes = list(range(1, N))
    overlaps = N * np.tensordot(chi_stack, contracted, axes=(chi_axes, list(range(N - 1))))

    g = np.tensordot(chi_stack, phi.conj(), axes=([1], [0])).reshape(K, -1)
    norms2 = (
        N * np.sum(np.abs(chi_stack.reshape(K, -1)) ** 2, axis=1)
        + N * (N - 1) * np.sum(np.abs(g) ** 2, axis=1)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        fidelities = np.where(norms2 > 0, np.abs(overlaps) / np.sqrt(norms2), 0.0)
    return np.clip(fidelities, 0.0, 1.0)


def reconstruct(phi: np.ndarray, chi: np.ndarray, cap: int = DEFAULT_BASIS_CAP) -> ManyBodyState:
    """Normalized Sym(phi (x) chi), summed over the N placements of phi."""
    phi = np.asarray(phi)
    chi = np.asarray(chi)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(chi))):
        raise ValueError("phi and chi must be finite")
    if phi.ndim != 1 or chi.ndim < 1:
        raise DimensionMismatchError(f"Need a vector phi and a tensor chi, got {phi.shape}, {chi.shape}")
    L = phi.shape[0]
    if any(extent != L for extent in chi.shape):
        raise DimensionMismatchError(f"chi of shape {chi.shape} does not match L={L}")

    N = chi.ndim + 1
    product = np.multiply.outer(phi, symmetrize_values(chi))
    values = sum(np.moveaxis(product, 0, position) for position in range(N))
    norm = np.linalg.norm(values)
    if norm <= 1e-14:
        raise ZeroStateError("Symmetrized product vanishes")
    return vector_from_tensor(SymmetricTensor(values / norm), enumerate_basis(L, N, cap))


def _level_clusters(energies: np.ndarray, tol: float) -> List[np.ndarray]:
    """Index groups of ascending energies whose consecutive gaps are <= tol."""
    if energies.size == 0:
        return []
    breaks = np.nonzero(np.diff(energies) > tol)[0] + 1
    return np.split(np.arange(energies.size), breaks)


def subspace_fidelity(
    psi_values: np.ndarray,
    phi: np.ndarray,
    chi_stack: np.ndarray
) -> Tuple[np.ndarray, float]:
    """
    Best ansatz fidelity over chi in the span of chi_stack.

    With o_k = <Psi|Sym(phi (x) chi_k)> and the Gram matrix
        G_kl = N <chi_k|chi_l> + N (N-1) <phi^dagger chi_k|phi^dagger chi_l>
    the optimum is c = G^-1 o* and the fidelity is sqrt(o^T G^-1 o*).

    Returns:
        (normalized optimal chi, fidelity)
    """
    N = psi_values.ndim
    phi = np.asarray(phi) / np.linalg.norm(phi)
    chi_stack = np.asarray(chi_stack)
    K = chi_stack.shape[0]

    contracted = np.tensordot(phi, psi_values.conj(), axes=([0], [0]))
    overlaps = N * np.tensordot(chi_stack, contracted, axes=(list(range(1, N)), list(range(N - 1))))
    flat = chi_stack.reshape(K, -1)
    g = np.tensordot(chi_stack, phi.conj(), axes=([1], [0])).reshape(K, -1)
    gram = N * (flat.conj() @ flat.T) + N * (N - 1) * (g.conj() @ g.T)

    weights = overlaps.conj()
    coefficients = scipy.linalg.pinvh(gram) @ weights
    fidelity = math.sqrt(min(max(float(np.real(np.vdot(weights, coefficients))), 0.0), 1.0))
    chi = np.tensordot(coefficients, chi_stack, axes=([0], [0]))
    norm = np.linalg.norm(chi)
    if norm <= 1e-14:
        return chi_stack[0], 0.0
    return chi / norm, fidelity


def refine_chi(
    psi: ManyBodyState,
    phi: np.ndarray,
    params: ModelParams,
    include_pair_breaking: bool = False,
    cap: int = DEFAULT_BASIS_CAP,
    level_tol: Optional[float] = None
) -> Tuple[SymmetricTensor, float]:
    """
    Best effective-Hamiltonian chi' for a given extended state phi.

    Eigenvalues of H_eff closer than level_tol * |J| (default DEGENERATE_LEVEL_TOL)
    are grouped, and chi' is the best combination inside the group, so a chi
    split across a near-degenerate pair is not penalized.

    Args:
        psi: N-particle state
        phi: unit-norm extended single-particle state
        params: parameters of the N-particle model (N is reduced internally)

    Returns:
        (chi', fidelity of Sym(phi (x) chi') against psi)
    """
    N = psi.basis.N
    if N < 2:
        raise ValueError("refine_chi needs at least two particles")
    if params.L != psi.basis.L:
        raise DimensionMismatchError(f"params.L={params.L} does not match state L={psi.basis.L}")
    if level_tol is None:
        level_tol = DEGENERATE_LEVEL_TOL
    if level_tol < 0.0 or not math.isfinite(level_tol):
        raise ValueError(f"level_tol must be finite and >= 0, got {level_tol}")

    reduced = params.with_particles(N - 1)
    hamiltonian = build_effective_hamiltonian(reduced, phi, include_pair_breaking, cap)
    system = eigh(hamiltonian)
    stack = tensors_from_columns(hamiltonian.basis, system.eigenvectors)
    psi_values = tensor_from_vector(psi).values

    best_chi, best_fidelity = None, -1.0
    for cluster in _level_clusters(system.eigenvalues, max(level_tol * abs(params.J), DEGENERACY_TOL)):
        if cluster.size == 1:
            chi = stack[cluster[0]]
            fidelity = float(ansatz_fidelities(psi_values, phi, chi[None])[0])
        else:
            chi, fidelity = subspace_fidelity(psi_values, phi, stack[cluster])
        if fidelity > best_fidelity:
            best_chi, best_fidelity = chi, fidelity
    return SymmetricTensor(best_chi), best_fidelity


# ---------------------------------------------------------------------------
# Decompositions
# ---------------------------------------------------------------------------

def _leading(values: np.ndarray, count: int) -> np.ndarray:
    padded = np.zeros(count)
    padded[:min(count, values.size)] = values[:count]
    return padded


def _phase_fixed_terms(columns: np.ndarray, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Phase-fix each column; the matching row absorbs the conjugate phase."""
    columns = np.array(columns)
    rows = np.array(rows)
    for m in range(columns.shape[1]):
        pivot = columns[np.argmax(np.abs(columns[:, m])), m]
        if pivot != 0:
            phase = pivot / abs(pivot)
            columns[:, m] *= np.conj(phase)
            rows[m] *= phase
    return columns, rows


def _normalized(values: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(values)
    if norm == 0:
        raise ZeroStateError("Cannot normalize a zero array")
    return values / norm


def _chi_density(chi: np.ndarray) -> np.ndarray:
    return np.real(np.diag(one_body_density_matrix(chi / np.linalg.norm(chi))))


def decompose_two_particle(psi: SymmetricTensor) -> Tuple[np.ndarray, np.ndarray, DecompositionTrace]:
    """
    Split a two-particle tensor Psi_ij = phi_i chi_j + phi_j chi_i.

    Returns:
        (phi, chi, trace) with phi the lower-IPR and chi the higher-IPR vector
    """
    if psi.order != 2:
        raise DimensionMismatchError(f"Expected an order-2 tensor, got order {psi.order}")

    singular_values = svd(psi.values).singular_values
    split = split_pair(psi.values)
    phi = _normalized(split.extended)
    chi = _normalized(split.localized)

    trace = DecompositionTrace(
        singular_values=_leading(singular_values, 2),
        pattern_ok=split.pair_structure,
        ambiguous=split.ambiguous,
        vectors={'phi': phi, 'chi': chi},
        amplitudes={'pair': split.amplitude},
    )
    if split.ambiguous:
        trace.notes.append("phi/chi assignment ambiguous: IPRs equal within tolerance")
        logger.debug("Two-particle split is ambiguous")
    return phi, chi, trace


def _rejected(singular_values: np.ndarray, checks: Dict[str, bool], trace: DecompositionTrace) -> ClassificationReport:
    return ClassificationReport(
        state_class=StateClass.NOT_SELF_LOCALIZED,
        singular_values=singular_values,
        checks=checks,
        trace=trace,
    )


def decompose_three_independent(
    psi: SymmetricTensor,
    thresholds: ScreeningThresholds = ScreeningThresholds()
) -> ClassificationReport:
    """
    Three-dominant path: two bosons localized on different sites.

    The leading three-dimensional left singular subspace is localized greedily:
    s~ (most localized), s (next), s_f (extended). The rotated right rows w~, w
    split into (nu_l, nu_f) and (mu_l, mu_f); phi = s_f and
        chi = a_nu <phi|nu_f> Sym(s~, nu_l) + a_mu <phi|mu_f> Sym(s, mu_l) + w_ll
    """
    if psi.order != 3:
        raise DimensionMismatchError(f"Expected an order-3 tensor, got order {psi.order}")

    L = psi.extent
    result = svd(psi.as_matrix())
    sv = _leading(result.singular_values, 3)
    trace = DecompositionTrace(singular_values=sv)

    ratio = float(sv.max() / sv.min()) if sv.min() > 0 else math.inf
    checks = {
        'sv_sum': float(sv.sum()) > thresholds.sv_sum_min,
        'sv_ratio': ratio <= thresholds.ratio_max,
    }
    if not all(checks.values()) or result.singular_values.size < 3:
        trace.pattern_ok = False
        return _rejected(sv, checks, trace)

    Q = result.left_vectors[:, :3]
    rotation = localize_subspace(Q)
    rows = rotation.conj().T @ (sv[:, None] * result.right_vectors[:3])
    columns, rows = _phase_fixed_terms(Q @ rotation, rows)
    s_tilde, s_local, s_ext = columns.T
    w_tilde, w_lf, w_ll = (row.reshape(L, L) for row in rows)

    nu = split_pair(w_tilde)
    mu = split_pair(w_lf)
    phi = _normalized(s_ext)

    overlaps = {
        's_f|mu_f': float(abs(np.vdot(s_ext, mu.extended))),
        's_f|nu_f': float(abs(np.vdot(s_ext, nu.extended))),
        'mu_f|nu_f': float(abs(np.vdot(mu.extended, nu.extended))),
    }
    checks['extended_overlaps'] = all(v > thresholds.extended_overlap_min for v in overlaps.values())

    c_nu = np.vdot(phi, nu.extended)
    c_mu = np.vdot(phi, mu.extended)
    chi = (
        nu.amplitude * c_nu * (np.outer(s_tilde, nu.localized) + np.outer(nu.localized, s_tilde))
        + mu.amplitude * c_mu * (np.outer(s_local, mu.localized) + np.outer(mu.localized, s_local))
        + w_ll
    )
    chi = _normalized(0.5 * (chi + chi.T))
    ipr_chi = ipr(chi)
    checks['ipr_chi'] = ipr_chi > thresholds.ipr_chi_min_independent

    fidelity = float(ansatz_fidelities(psi.values, phi, chi[None])[0])
    trace.ambiguous = nu.ambiguous or mu.ambiguous
    trace.vectors.update({
        's_tilde_l': s_tilde, 's_l': s_local, 's_f': s_ext,
        'nu_l': nu.localized, 'nu_f': nu.extended,
        'mu_l': mu.localized, 'mu_f': mu.extended,
        'w_ll': w_ll,
    })
    trace.amplitudes.update({'nu': nu.amplitude, 'mu': mu.amplitude})

    accepted = all(checks.values())
    return ClassificationReport(
        state_class=StateClass.INDEPENDENT_ALL if accepted else StateClass.NOT_SELF_LOCALIZED,
        singular_values=sv,
        phi=phi,
        chi=chi,
        fidelity_reconstruction=fidelity,
        ipr_chi=ipr_chi,
        ipr_phi=ipr(phi),
        extended_state_overlaps=overlaps,
        localized_sites=tuple(localization_sites(_chi_density(chi), 2)),
        checks=checks,
        trace=trace,
    )


def decompose_three_correlated(
    psi: SymmetricTensor,
    thresholds: ScreeningThresholds = ScreeningThresholds()
) -> ClassificationReport:
    """
    Two-dominant path: two bosons bound on the same site.

    s_l (localized) and s_f (extended) span the leading two-dimensional left
    singular subspace; the s_l row w_lf splits into (mu_l, mu_f); phi = s_f and
        chi = a_mu <phi|mu_f> Sym(s_l, mu_l) + w_ll
    """
    if psi.order != 3:
        raise DimensionMismatchError(f"Expected an order-3 tensor, got order {psi.order}")

    L = psi.extent
    result = svd(psi.as_matrix())
    sv = _leading(result.singular_values, 2)
    trace = DecompositionTrace(singular_values=sv)
    checks = {'sv_sum': float(sv.sum()) > thresholds.sv_sum_min}
    if not checks['sv_sum'] or result.singular_values.size < 2:
        trace.pattern_ok = False
        return _rejected(sv, checks, trace)

    Q = result.left_vectors[:, :2]
    if abs(sv[0] - sv[1]) <= DEGENERACY_TOL * sv[0]:
        rotation = localize_subspace(Q)
    else:
        order = np.argsort([-ipr(Q[:, 0]), -ipr(Q[:, 1])], kind="stable")
        rotation = np.eye(2)[:, order]
    rows = rotation.conj().T @ (sv[:, None] * result.right_vectors[:2])
    columns, rows = _phase_fixed_terms(Q @ rotation, rows)
    s_local, s_ext = columns.T
    w_lf, w_ll = (row.reshape(L, L) for row in rows)

    mu = split_pair(w_lf)
    phi = _normalized(s_ext)
    overlaps = {'s_f|mu_f': float(abs(np.vdot(s_ext, mu.extended)))}
    checks['extended_overlaps'] = overlaps['s_f|mu_f'] > thresholds.extended_overlap_min

    c_mu = np.vdot(phi, mu.extended)
    chi = mu.amplitude * c_mu * (np.outer(s_local, mu.localized) + np.outer(mu.localized, s_local)) + w_ll
    chi = _normalized(0.5 * (chi + chi.T))
    ipr_chi = ipr(chi)
    checks['ipr_chi'] = ipr_chi > thresholds.ipr_chi_min_correlated

    fidelity = float(ansatz_fidelities(psi.values, phi, chi[None])[0])
    trace.ambiguous = mu.ambiguous
    trace.vectors.update({
        's_l': s_local, 's_f': s_ext,
        'mu_l': mu.localized, 'mu_f': mu.extended,
        'w_ll': w_ll,
    })
    trace.amplitudes['mu'] = mu.amplitude

    accepted = all(checks.values())
    return ClassificationReport(
        state_class=StateClass.CORRELATED_ALL if accepted else StateClass.NOT_SELF_LOCALIZED,
        singular_values=sv,
        phi=phi,
        chi=chi,
        fidelity_reconstruction=fidelity,
        ipr_chi=ipr_chi,
        ipr_phi=ipr(phi),
        extended_state_overlaps=overlaps,
        localized_sites=tuple(localization_sites(_chi_density(chi), 1)),
        checks=checks,
        trace=trace,
    )


def one_localized_weights(psi: SymmetricTensor) -> Tuple[int, float, np.ndarray]:
    """
    (i_a, slice weight, density) for the most occupied site i_a.

    The slice weight is N * sum |Psi[i_a, j, k, ...]|^2 over j, k, ... != i_a:
    the probability of exactly one boson on i_a.
    """
    N = psi.order
    density = correlations_from_tensor(psi, 1).c1
    site = int(np.argmax(density))
    weights = np.abs(psi.values[site]) ** 2
    for axis in range(N - 1):
        index = [slice(None)] * (N - 1)
        index[axis] = site
        weights[tuple(index)] = 0.0
    return site, float(N * np.sum(weights)), density


def detect_one_localized(psi: SymmetricTensor, thresholds: ScreeningThresholds = ScreeningThresholds()) -> bool:
    """True when exactly one boson sits on a dominant site and no other site is strongly occupied."""
    site, slice_weight, density = one_localized_weights(psi)
    others = np.delete(density, site)
    return slice_weight > thresholds.slice_weight_min and bool(np.all(others < thresholds.other_density_max))


def _localized_orbital(psi: SymmetricTensor) -> np.ndarray:
    """Most localized natural orbital among those with occupation >= 1/2."""
    occupations, orbitals = scipy.linalg.eigh(one_body_density_matrix(psi.values))
    candidates = [k for k in range(len(occupations)) if occupations[k] >= 0.5] or [len(occupations) - 1]
    best = max(candidates, key=lambda k: ipr(orbitals[:, k]))
    return fix_phase(orbitals[:, best])


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def _validate_fidelity(
    report: ClassificationReport,
    psi: ManyBodyState,
    thresholds: ScreeningThresholds,
    params: Optional[ModelParams],
    include_pair_breaking: bool,
    cap: int
) -> ClassificationReport:
    """Attach the effective-Hamiltonian fidelity and apply the fidelity screen."""
    checks = dict(report.checks)
    fidelity_effective = None
    if params is not None and thresholds.require_effective_fidelity:
        _, fidelity_effective = refine_chi(psi, report.phi, params, include_pair_breaking, cap)
        checks['fidelity'] = fidelity_effective > thresholds.fidelity_min
    else:
        checks['fidelity'] = (report.fidelity_reconstruction or 0.0) > thresholds.fidelity_min

    state_class = report.state_class if checks['fidelity'] else StateClass.NOT_SELF_LOCALIZED
    return replace(report, state_class=state_class, fidelity_effective=fidelity_effective, checks=checks)


def _classify_two_particle(
    psi: ManyBodyState,
    tensor: SymmetricTensor,
    thresholds: ScreeningThresholds,
    params: Optional[ModelParams],
    include_pair_breaking: bool,
    cap: int
) -> ClassificationReport:
    phi, chi, trace = decompose_two_particle(tensor)
    ipr_chi, ipr_phi = ipr(chi), ipr(phi)
    checks = {
        'sv_sum': float(np.sum(trace.singular_values)) > thresholds.sv_sum_min,
        'unambiguous': not trace.ambiguous,
        'ipr_chi': ipr_chi > thresholds.ipr_chi_min_two_particle,
        'ipr_phi': ipr_phi < thresholds.ipr_phi_max,
    }
    report = ClassificationReport(
        state_class=StateClass.TWO_PARTICLE_ALL if all(checks.values()) else StateClass.NOT_SELF_LOCALIZED,
        singular_values=trace.singular_values,
        phi=phi,
        chi=chi,
        fidelity_reconstruction=float(ansatz_fidelities(tensor.values, phi, chi[None])[0]),
        ipr_chi=ipr_chi,
        ipr_phi=ipr_phi,
        localized_sites=tuple(localization_sites(np.abs(chi) ** 2, 1)),
        checks=checks,
        trace=trace,
    )
    if report.is_self_localized:
        report = _validate_fidelity(report, psi, thresholds, params, include_pair_breaking, cap)
    return report


def _classify_three_particle(
    psi: ManyBodyState,
    tensor: SymmetricTensor,
    thresholds: ScreeningThresholds,
    params: Optional[ModelParams],
    include_pair_breaking: bool,
    cap: int
) -> ClassificationReport:
    independent = decompose_three_independent(tensor, thresholds)
    if independent.is_self_localized:
        independent = _validate_fidelity(independent, psi, thresholds, params, include_pair_breaking, cap)
        if independent.is_self_localized:
            if decompose_three_correlated(tensor, thresholds).is_self_localized:
                logger.info(
                    f"State at E={psi.energy} passes both independent and correlated screening; "
                    f"keeping {StateClass.INDEPENDENT_ALL.value}"
                )
            return independent

    correlated = decompose_three_correlated(tensor, thresholds)
    if correlated.is_self_localized:
        correlated = _validate_fidelity(correlated, psi, thresholds, params, include_pair_breaking, cap)
        if correlated.is_self_localized:
            return correlated

    site, slice_weight, density = one_localized_weights(tensor)
    others = np.delete(density, site)
    checks = {
        'slice_weight': slice_weight > thresholds.slice_weight_min,
        'other_density': bool(np.all(others < thresholds.other_density_max)),
    }
    if all(checks.values()):
        return ClassificationReport(
            state_class=StateClass.ONE_LOCALIZED,
            singular_values=independent.singular_values,
            localized_sites=(site + 1,),
            checks=checks,
            localized_orbital=_localized_orbital(tensor),
            density_matrix=one_body_density_matrix(tensor.values),
        )

    return ClassificationReport(
        state_class=StateClass.NOT_SELF_LOCALIZED,
        singular_values=independent.singular_values,
        checks={**independent.checks, **checks},
        trace=independent.trace,
    )


def classify(
    psi: ManyBodyState,
    thresholds: ScreeningThresholds = ScreeningThresholds(),
    params: Optional[ModelParams] = None,
    include_pair_breaking: bool = False,
    index: Optional[int] = None,
    cap: int = DEFAULT_BASIS_CAP
) -> ClassificationReport:
    """
    Classify one normalized eigenstate.

    Three particles: independent path, then correlated, then one-localized; the
    first passing class wins. Two particles: the two-particle path. When params
    are given, the fidelity screen uses the best effective-Hamiltonian chi'.
    """
    N = psi.basis.N
    if N > 3:
        raise ValueError(f"Classification supports N <= 3, got N={N}")

    if N < 2:
        report = ClassificationReport(StateClass.NOT_SELF_LOCALIZED, singular_values=np.zeros(0))
    else:
        tensor = tensor_from_vector(psi)
        if N == 2:
            report = _classify_two_particle(psi, tensor, thresholds, params, include_pair_breaking, cap)
        else:
            report = _classify_three_particle(psi, tensor, thresholds, params, include_pair_breaking, cap)

    report = replace(report, energy=psi.energy, index=index)
    logger.debug(f"State {index} (E={psi.energy}): {report.state_class.value}")
    return report


# ---------------------------------------------------------------------------
# Edge states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeManifold:
    """Boundary-localized single-particle eigenstates of the open chain."""
    vectors: np.ndarray
    energies: np.ndarray

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    def vector_weight(self, v: np.ndarray) -> float:
        """||P v|| / ||v|| with P the projector on the manifold."""
        if self.size == 0:
            return 0.0
        v = np.asarray(v)
        return float(np.linalg.norm(self.vectors.conj().T @ v) / np.linalg.norm(v))

    def tensor_weight(self, chi: np.ndarray) -> float:
        """sqrt(Tr(P rho) / Tr(rho)) with rho the one-body density matrix of chi."""
        chi = np.asarray(chi)
        if chi.ndim == 1:
            return self.vector_weight(chi)
        if self.size == 0:
            return 0.0
        rho = one_body_density_matrix(chi)
        projected = np.real(np.trace(self.vectors.conj().T @ rho @ self.vectors))
        return float(math.sqrt(max(projected, 0.0) / np.real(np.trace(rho))))

    def orbital_occupation(self, rho: np.ndarray) -> float:
        """Largest occupation of a single orbital inside the manifold, the top eigenvalue of P rho P."""
        if self.size == 0:
            return 0.0
        projected = self.vectors.conj().T @ np.asarray(rho) @ self.vectors
        return float(np.max(scipy.linalg.eigvalsh(projected)))


def edge_manifold(params: ModelParams, ipr_min: float = 0.4) -> EdgeManifold:
    """
    Single-particle eigenstates of the open chain with IPR > ipr_min whose
    density maximum lies in the first or last unit cell.
    """
    return _edge_manifold(params.with_overrides(N=1, U=0.0, boundary="open"), ipr_min)


@lru_cache(maxsize=32)
def _edge_manifold(single: ModelParams, ipr_min: float) -> EdgeManifold:
    system = eigh(build_hamiltonian(single))
    cell = min(single.q, single.L)
    selected = []
    for k in range(len(system)):
        v = system.eigenvectors[:, k]
        peak = int(np.argmax(np.abs(v) ** 2))
        if ipr(v) > ipr_min and (peak < cell or peak >= single.L - cell):
            selected.append(k)
    logger.debug(f"Edge manifold for L={single.L}: {len(selected)} states")
    return EdgeManifold(system.eigenvectors[:, selected], system.eigenvalues[selected])


def edge_score(report: ClassificationReport, manifold: EdgeManifold) -> float:
    """
    Largest overlap of phi, chi or the localized orbital with the edge manifold.

    For one-localized states the edge-orbital occupation of the full one-body
    density matrix counts too: a boson held by a boundary orbital scores ~1 even
    when the most localized natural orbital is mixed with bulk orbitals.
    """
    scores = [0.0]
    if report.phi is not None:
        scores.append(manifold.vector_weight(report.phi))
    if report.chi is not None:
        scores.append(manifold.tensor_weight(report.chi))
    if report.localized_orbital is not None:
        scores.append(manifold.vector_weight(report.localized_orbital))
    if report.density_matrix is not None:
        scores.append(min(manifold.orbital_occupation(report.density_matrix), 1.0))
    return max(scores)


def edge_state_flags(
    candidates: Sequence[ClassificationReport],
    params: ModelParams,
    thresholds: ScreeningThresholds = ScreeningThresholds()
) -> List[bool]:
    """True for accepted candidates that match a non-interacting edge state."""
    manifold = edge_manifold(params, thresholds.edge_ipr_min)
    return [
        report.is_self_localized and edge_score(report, manifold) > thresholds.edge_fidelity_min
        for report in candidates
    ]


def exclude_edge_states(
    candidates: Sequence[ClassificationReport],
    params: ModelParams,
    thresholds: ScreeningThresholds = ScreeningThresholds()
) -> List[ClassificationReport]:
    """Drop candidates whose phi or chi matches a boundary-localized single-particle state."""
    flags = edge_state_flags(candidates, params, thresholds)
    return [report for report, edge in zip(candidates, flags) if not edge]


def mark_edge_states(
    reports: Sequence[ClassificationReport],
    params: ModelParams,
    thresholds: ScreeningThresholds = ScreeningThresholds()
) -> List[ClassificationReport]:
    """Keep every report but downgrade edge-state candidates to NotSelfLocalized."""
    flags = edge_state_flags(reports, params, thresholds)
    marked = []
    for report, edge in zip(reports, flags):
        if edge:
            report = replace(
                report,
                state_class=StateClass.NOT_SELF_LOCALIZED,
                edge_state=True,
                checks={**report.checks, 'not_edge_state': False},
            )
        marked.append(report)
    return marked


# ---------------------------------------------------------------------------
# Spectra and scans
# ---------------------------------------------------------------------------

def classify_spectrum(
    params: ModelParams,
    thresholds: ScreeningThresholds = ScreeningThresholds(),
    include_pair_breaking: bool = False,
    exclude_edges: bool = True,
    cap: int = DEFAULT_BASIS_CAP
) -> List[ClassificationReport]:
    """Diagonalize H for params and classify every eigenstate, in ascending energy order."""
    started = time.time()
    system = eigh(build_hamiltonian(params, cap))
    reports = [
        classify(system.state(k), thresholds, params, include_pair_breaking, index=k, cap=cap)
        for k in range(len(system))
    ]
    if exclude_edges:
        reports = mark_edge_states(reports, params, thresholds)
    counts = summarize_reports(reports)
    logger.info(
        f"Classified {len(reports)} states (U={params.U:g}, V={params.V:g}, xi={params.xi:.6f}) "
        f"in {time.time() - started:.1f}s: "
        + ", ".join(f"{name}={count}" for name, count in counts.items() if count)
    )
    return reports


def summarize_reports(reports: Sequence[ClassificationReport]) -> Dict[str, int]:
    """Count of reports per class, every class present."""
    counts = {state_class.value: 0 for state_class in StateClass}
    for report in reports:
        counts[report.state_class.value] += 1
    return counts


@dataclass(frozen=True)
class FractionRow:
    """Class counts and fractions at one grid point."""
    point: Dict[str, float]
    total: int
    counts: Dict[str, int]

    def fraction(self, state_class: StateClass) -> float:
        return self.counts.get(state_class.value, 0) / self.total if self.total else 0.0

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = dict(self.point)
        record['total'] = self.total
        record['fraction_independent'] = self.fraction(StateClass.INDEPENDENT_ALL)
        record['fraction_correlated'] = self.fraction(StateClass.CORRELATED_ALL)
        record['fraction_one_localized'] = self.fraction(StateClass.ONE_LOCALIZED)
        record['fraction_two_particle'] = self.fraction(StateClass.TWO_PARTICLE_ALL)
        return record


def _scan_point(
    params: ModelParams,
    thresholds: ScreeningThresholds,
    include_pair_breaking: bool,
    exclude_edges: bool,
    cap: int
) -> Dict[str, int]:
    reports = classify_spectrum(params, thresholds, include_pair_breaking, exclude_edges, cap)
    return summarize_reports(reports)


def _point_label(point: Dict[str, float]) -> str:
    return ",".join(f"{key}={value:g}" for key, value in point.items())


def fraction_scan(
    grid: Sequence[Dict[str, float]],
    params: ModelParams,
    thresholds: ScreeningThresholds = ScreeningThresholds(),
    runner: Optional[ParallelTaskRunner] = None,
    include_pair_breaking: bool = False,
    exclude_edges: bool = True,
    cap: int = DEFAULT_BASIS_CAP,
    failure_tracker: Optional[FailureTracker] = None
) -> List[FractionRow]:
    """
    Class fractions over a grid of parameter overrides, e.g. [{'U': 0, 'V': 10}, ...] or [{'xi': 0.1}, ...].

    Rows come back in grid order. A failing point is tracked and skipped;
    if every point fails on capacity, CapacityError is raised.
    """
    for point in grid:
        for key, value in point.items():
            if not math.isfinite(float(value)):
                raise ValueError(f"Grid value {key}={value} is not finite")

    runner = runner or ParallelTaskRunner(1)
    tracker = failure_tracker if failure_tracker is not None else FailureTracker()
    tasks = [
        Task(
            id=i,
            label=_point_label(point),
            func=partial(
                _scan_point, params.with_overrides(**point), thresholds,
                include_pair_breaking, exclude_edges, cap
            ),
        )
        for i, point in enumerate(grid)
    ]

    rows = []
    for point, task in zip(grid, runner.run(tasks)):
        if not task.succeeded:
            tracker.track_exception(task.label, task.error, details=dict(point))
            continue
        counts = task.result
        rows.append(FractionRow(point=dict(point), total=sum(counts.values()), counts=counts))

    if grid and not rows and all(isinstance(task.error, CapacityError) for task in tasks):
        raise CapacityError(f"Every grid point exceeded the basis cap: {tasks[0].error}")
    return rows
