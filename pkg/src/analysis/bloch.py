"""
Single-particle band structure of the superlattice under periodic boundaries,
and projection of extended states onto Bloch states.

Bloch states on the q-site unit cell:
    psi_(q c + s) = exp(i k q c) u_s / sqrt(M),   M = L / q cells
with u the eigenvectors of h(k) = H0 + T exp(i k q) + T^dagger exp(-i k q).
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List

import numpy as np
import scipy.linalg

from src.models.model import ModelParams, potential_profile
from src.utils.errors import DimensionMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BandStructure:
    """q bands over the momenta k in (-pi/q, pi/q], ascending."""
    momenta: np.ndarray
    bands: np.ndarray               # (q, M) energies, ascending at each k
    bloch_states: np.ndarray        # (L, q, M)
    translation_phases: np.ndarray  # (q, M) eigenvalues of the unit-cell translation
    q: int
    L: int

    @property
    def cell_count(self) -> int:
        return self.momenta.size

    def band_widths(self) -> np.ndarray:
        return self.bands.max(axis=1) - self.bands.min(axis=1)

    def partner_indices(self) -> np.ndarray:
        """Index of -k for every k (k = pi/q and k = 0 pair with themselves)."""
        period = 2.0 * math.pi / self.q
        partners = np.empty(self.cell_count, dtype=int)
        for i, k in enumerate(self.momenta):
            distance = np.abs(((self.momenta + k + period / 2) % period) - period / 2)
            partners[i] = int(np.argmin(distance))
        return partners

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {'band': b, 'k': float(k), 'energy': float(self.bands[b, m])}
            for b in range(self.q)
            for m, k in enumerate(self.momenta)
        ]


@dataclass(frozen=True)
class BlochWeights:
    """|<psi(band, k)|phi>|^2 over the band structure grid."""
    weights: np.ndarray  # (q, M)
    bands: BandStructure

    def total(self) -> float:
        return float(self.weights.sum())

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {'band': b, 'k': float(k), 'weight': float(self.weights[b, m])}
            for b in range(self.bands.q)
            for m, k in enumerate(self.bands.momenta)
        ]


def momentum_grid(L: int, q: int) -> np.ndarray:
    """k = 2 pi m / L with k in (-pi/q, pi/q], ascending."""
    cells = L // q
    m = np.arange(-((cells - 1) // 2), cells // 2 + 1)
    return 2.0 * math.pi * m / L


def bloch_hamiltonian(params: ModelParams, k: float) -> np.ndarray:
    """q x q Bloch Hamiltonian h(k)."""
    q = params.q
    onsite = potential_profile(params.with_overrides(L=q))
    h = np.diag(onsite).astype(complex)
    for s in range(q - 1):
        h[s, s + 1] += -params.J
        h[s + 1, s] += -params.J
    hop = -params.J * np.exp(1j * k * q)
    h[q - 1, 0] += hop
    h[0, q - 1] += np.conj(hop)
    return h


def band_structure(params: ModelParams) -> BandStructure:
    """
    Diagonalize H^(1) under periodic boundaries, labelled by momentum.

    Raises:
        DimensionMismatchError: if L is not a multiple of q
    """
    L, q = params.L, params.q
    if L % q != 0:
        raise DimensionMismatchError(f"L={L} is not a multiple of q={q}")
    if params.boundary != "periodic":
        logger.info("band_structure always uses periodic boundaries; ignoring boundary='%s'", params.boundary)

    momenta = momentum_grid(L, q)
    cells = L // q
    bands = np.empty((q, momenta.size))
    states = np.empty((L, q, momenta.size), dtype=complex)
    cell_index = np.repeat(np.arange(cells), q)
    sublattice = np.tile(np.arange(q), cells)

    for m, k in enumerate(momenta):
        energies, vectors = scipy.linalg.eigh(bloch_hamiltonian(params, k))
        bands[:, m] = energies
        envelope = np.exp(1j * k * q * cell_index) / math.sqrt(cells)
        states[:, :, m] = envelope[:, None] * vectors[sublattice, :]

    shifted = np.roll(states, -q, axis=0)
    phases = np.einsum("lbm,lbm->bm", states.conj(), shifted)

    return BandStructure(
        momenta=momenta, bands=bands, bloch_states=states,
        translation_phases=phases, q=q, L=L,
    )


def bloch_projection(phi: np.ndarray, bands: BandStructure) -> BlochWeights:
    """Weights |<psi(band, k)|phi>|^2; sum to 1 for a unit phi."""
    phi = np.asarray(phi)
    if phi.shape != (bands.L,):
        raise DimensionMismatchError(f"phi has shape {phi.shape}, expected ({bands.L},)")
    norm = np.linalg.norm(phi)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"phi must be unit norm, got {norm:.6e}")
    amplitudes = np.einsum("lbm,l->bm", bands.bloch_states.conj(), phi)
    return BlochWeights(weights=np.abs(amplitudes) ** 2, bands=bands)


def standing_wave_score(weights: BlochWeights) -> float:
    """1 - sum |w(k) - w(-k)| / sum (w(k) + w(-k)); 1 for a perfect standing wave."""
    w = weights.weights
    mirrored = w[:, weights.bands.partner_indices()]
    denominator = float(np.sum(w + mirrored))
    if denominator == 0.0:
        return 0.0
    return 1.0 - float(np.sum(np.abs(w - mirrored))) / denominator


def middle_band_weight(weights: BlochWeights) -> float:
    """Fraction of the weight in the middle band(s): the two middle ones for even q."""
    q = weights.bands.q
    middle = weights.weights[(q - 1) // 2: q // 2 + 1]
    total = weights.total()
    return float(middle.sum() / total) if total else 0.0
