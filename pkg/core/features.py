"""Projection kernel, sDM feature map and spectral power baselines."""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.fft
import scipy.signal

from core.errors import InvalidArgumentError
from core.models import DmdResult, FeatureLayout, FeatureVector, PsdMatrix, SdmFeatures, TrialMatrix

logger = logging.getLogger(__name__)

STANDARD_BANDS: Tuple[Tuple[float, float], ...] = (
    (0.0, 1.0), (1.0, 4.0), (4.0, 8.0), (8.0, 13.0),
    (13.0, 30.0), (30.0, 80.0), (80.0, 150.0), (150.0, 500.0),
)
HIGH_GAMMA: Tuple[float, float] = (80.0, 150.0)
EDGE_ISOMETRY = np.sqrt(2.0)


def projection_kernel(Phi_i: np.ndarray, Phi_j: np.ndarray) -> float:
    """||Phi_i^H Phi_j||_F^2."""
    Phi_i = np.atleast_2d(Phi_i)
    Phi_j = np.atleast_2d(Phi_j)
    if Phi_i.shape[0] != Phi_j.shape[0]:
        raise InvalidArgumentError(f"Mode matrices have {Phi_i.shape[0]} and {Phi_j.shape[0]} channels")
    cross = Phi_i.conj().T @ Phi_j
    return float(np.sum(cross.real ** 2 + cross.imag ** 2))


def _stack_modes(mode_sets: Sequence[np.ndarray]) -> np.ndarray:
    n_channels = {m.shape[0] for m in mode_sets}
    if len(n_channels) != 1:
        raise InvalidArgumentError(f"Mode sets disagree on the channel count: {sorted(n_channels)}")
    width = max(m.shape[1] for m in mode_sets)
    # zero columns leave every kernel value unchanged
    stacked = np.zeros((len(mode_sets), n_channels.pop(), width), dtype=complex)
    for n, modes in enumerate(mode_sets):
        stacked[n, :, :modes.shape[1]] = modes
    return stacked


def kernel_row(modes: np.ndarray, mode_sets: Sequence[np.ndarray]) -> np.ndarray:
    """Projection kernel of one mode set against each of ``mode_sets``."""
    if not mode_sets:
        return np.zeros(0)
    stacked = _stack_modes(list(mode_sets) + [modes])
    cross = np.einsum('pk,npl->nkl', stacked[-1].conj(), stacked[:-1])
    return np.sum(cross.real ** 2 + cross.imag ** 2, axis=(1, 2))


def gram_matrix(mode_sets: Sequence[np.ndarray]) -> np.ndarray:
    n_sets = len(mode_sets)
    if n_sets == 0:
        return np.zeros((0, 0))
    stacked = _stack_modes(mode_sets)
    gram = np.zeros((n_sets, n_sets))
    for i in range(n_sets):
        cross = np.einsum('pk,npl->nkl', stacked[i].conj(), stacked[i:])
        values = np.sum(cross.real ** 2 + cross.imag ** 2, axis=(1, 2))
        gram[i, i:] = values
        gram[i:, i] = values
    return gram


def feature_map(modes: np.ndarray) -> np.ndarray:
    """[vec Re(Phi Phi^H), vec Im(Phi Phi^H)]; its dot product is the projection kernel."""
    hermitian = modes @ modes.conj().T
    return np.concatenate([hermitian.real.ravel(), hermitian.imag.ravel()])


def sdm_features(modes: np.ndarray, source_rank: Optional[int] = None,
                 band: Optional[Tuple[float, float]] = None) -> SdmFeatures:
    modes = np.atleast_2d(modes)
    hermitian = modes @ modes.conj().T
    matrix = (hermitian.real + hermitian.real.T) / 2.0
    imaginary = (hermitian.imag - hermitian.imag.T) / 2.0
    residual = float(np.max(np.abs(imaginary))) if imaginary.size else 0.0
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if residual > 1e-8 * max(scale, 1e-300) and scale > 0:
        logger.debug(f"sDM imaginary residual {residual:.3e} relative to {scale:.3e}")
    return SdmFeatures(
        matrix=matrix,
        source_rank=modes.shape[1] if source_rank is None else source_rank,
        band=band,
        imaginary=imaginary,
        imaginary_residual=residual,
    )


def split_sn_se(features: SdmFeatures) -> Tuple[FeatureVector, FeatureVector]:
    matrix = features.matrix
    upper = np.triu_indices(matrix.shape[0], k=1)
    bands = (features.band,) if features.band is not None else ()
    sndm = FeatureVector(values=np.diag(matrix).copy(), layout=FeatureLayout.SNDM,
                         rank=features.source_rank, bands=bands)
    sedm = FeatureVector(values=matrix[upper].copy(), layout=FeatureLayout.SEDM,
                         rank=features.source_rank, bands=bands)
    return sndm, sedm


def assemble_sdm(sndm: np.ndarray, sedm: np.ndarray) -> np.ndarray:
    """Inverse of split_sn_se: rebuild the symmetric matrix."""
    n_channels = len(sndm)
    if len(sedm) != n_channels * (n_channels - 1) // 2:
        raise InvalidArgumentError(f"seDM length {len(sedm)} does not match {n_channels} channels")
    matrix = np.zeros((n_channels, n_channels))
    upper = np.triu_indices(n_channels, k=1)
    matrix[upper] = sedm
    matrix = matrix + matrix.T
    matrix[np.diag_indices(n_channels)] = sndm
    return matrix


def vectorize(features: SdmFeatures, layout: FeatureLayout) -> np.ndarray:
    matrix = features.matrix
    if layout == FeatureLayout.FULL_VEC:
        return matrix.ravel().copy()
    sndm, sedm = split_sn_se(features)
    if layout == FeatureLayout.SNDM:
        return sndm.values
    if layout == FeatureLayout.SEDM:
        return sedm.values
    if layout == FeatureLayout.SNDM_SEDM:
        return np.concatenate([sndm.values, sedm.values])
    if layout == FeatureLayout.SDM:
        return np.concatenate([sndm.values, EDGE_ISOMETRY * sedm.values])
    raise InvalidArgumentError(f"Layout {layout.value} is not a single-matrix layout")


def _validate_bands(bands: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    checked = []
    for low, high in bands:
        if not (np.isfinite(low) and np.isfinite(high)) or low < 0 or high <= low:
            raise InvalidArgumentError(f"Invalid band [{low}, {high})")
        checked.append((float(low), float(high)))
    ordered = sorted(checked)
    for (low_a, high_a), (low_b, _) in zip(ordered, ordered[1:]):
        if low_b < high_a:
            raise InvalidArgumentError(f"Bands [{low_a}, {high_a}) and starting at {low_b} overlap")
    return checked


def band_mask(frequencies: np.ndarray, band: Tuple[float, float], nyquist: float) -> np.ndarray:
    """Half-open [low, high) on |f|; a band reaching Nyquist also includes it."""
    low, high = band
    magnitude = np.abs(frequencies)
    mask = (magnitude >= low) & (magnitude < high)
    if high >= nyquist * (1 - 1e-12):
        mask |= np.isclose(magnitude, nyquist, rtol=1e-12, atol=0.0)
    return mask


def frequency_filtered_sdm(result: DmdResult, bands: Sequence[Tuple[float, float]]) -> List[SdmFeatures]:
    bands = _validate_bands(bands)
    nyquist = 1.0 / (2.0 * result.dt)
    filtered = []
    for band in bands:
        mask = band_mask(result.frequencies, band, nyquist)
        if not np.any(mask):
            n_channels = result.n_channels
            filtered.append(SdmFeatures(matrix=np.zeros((n_channels, n_channels)), source_rank=result.rank_used,
                                        band=band, imaginary=np.zeros((n_channels, n_channels))))
            continue
        filtered.append(sdm_features(result.modes[:, mask], source_rank=result.rank_used, band=band))
    return filtered


def psd(trial: TrialMatrix, nfft: int = 512) -> PsdMatrix:
    """One-sided Hamming-window periodogram, normalized by window energy.

    The one-sided bins sum to sum((x*w)**2) / sum(w**2) per channel.
    Trials longer than ``nfft`` are truncated, shorter ones zero-padded.
    """
    if nfft < 2:
        raise InvalidArgumentError(f"nfft must be at least 2, got {nfft}")
    segment = trial.data[:, :nfft]
    window = scipy.signal.get_window('hamming', segment.shape[1], fftbins=False)
    spectrum = scipy.fft.rfft(segment * window, n=nfft, axis=1)
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / (nfft * np.sum(window ** 2))
    if nfft % 2 == 0:
        power[:, 1:-1] *= 2.0
    else:
        power[:, 1:] *= 2.0
    freqs = scipy.fft.rfftfreq(nfft, d=trial.dt)
    return PsdMatrix(values=power, freqs=freqs, nfft=nfft, window="hamming")


def band_power(spectrum: PsdMatrix, band: Tuple[float, float]) -> FeatureVector:
    low, high = band
    nyquist = spectrum.freqs[-1]
    if low < 0 or high < low or low > nyquist:
        raise InvalidArgumentError(f"Band [{low}, {high}] lies outside [0, {nyquist}]")
    mask = (spectrum.freqs >= low) & (spectrum.freqs <= high)
    if not np.any(mask):
        raise InvalidArgumentError(f"No PSD bins fall in band [{low}, {high}]")
    return FeatureVector(values=spectrum.values[:, mask].mean(axis=1), layout=FeatureLayout.BAND_POWER,
                         bands=((float(low), float(high)),))
