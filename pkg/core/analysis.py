"""Statistics maps for interpreting sDM features."""
import logging
from typing import Sequence, Union

import numpy as np
import scipy.stats

from core.errors import InvalidArgumentError
from core.models import CorrelationSpectrum, FeatureVector, FMap, PsdMatrix, ReproducibilityReport, SdmFeatures

logger = logging.getLogger(__name__)

Z_CLIP = 1.0 - 1e-12
ZERO_VARIANCE = 1e-24


def _as_samples(features: Union[np.ndarray, Sequence]) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return np.asarray(features, dtype=float)
    rows = []
    for item in features:
        if isinstance(item, SdmFeatures):
            rows.append(item.matrix)
        elif isinstance(item, FeatureVector):
            rows.append(item.values)
        else:
            rows.append(np.asarray(item, dtype=float))
    return np.asarray(rows, dtype=float)


def anova_f_map(features: Union[Sequence[SdmFeatures], np.ndarray], labels: Sequence[int]) -> FMap:
    """One-way ANOVA F statistic for every feature component.

    Components with zero within-group variance get +inf when the group
    means differ and 0 when they do not.
    """
    samples = _as_samples(features)
    labels = np.asarray(labels)
    if samples.shape[0] != len(labels):
        raise InvalidArgumentError(f"Got {samples.shape[0]} feature sets for {len(labels)} labels")
    groups, counts = np.unique(labels, return_counts=True)
    if len(groups) < 2 or np.any(counts < 2):
        raise InvalidArgumentError("ANOVA needs at least two groups with at least two samples each")

    n_samples = samples.shape[0]
    between_dof = len(groups) - 1
    within_dof = n_samples - len(groups)
    grand_mean = samples.mean(axis=0)
    between = np.zeros(samples.shape[1:])
    within = np.zeros(samples.shape[1:])
    for group, count in zip(groups, counts):
        members = samples[labels == group]
        group_mean = members.mean(axis=0)
        between += count * (group_mean - grand_mean) ** 2
        within += np.sum((members - group_mean) ** 2, axis=0)

    scale = max(float(np.max(np.abs(samples))), 1e-300) ** 2 * n_samples
    no_within = within <= ZERO_VARIANCE * scale
    no_between = between <= ZERO_VARIANCE * scale
    infinite = no_within & ~no_between

    with np.errstate(divide='ignore', invalid='ignore'):
        values = (between / between_dof) / (within / within_dof)
    values = np.where(no_within, np.where(infinite, np.inf, 0.0), values)
    p_values = np.where(infinite, 0.0, scipy.stats.f.sf(np.where(infinite, 0.0, values), between_dof, within_dof))

    flags = ()
    if np.any(infinite):
        message = f"{int(infinite.sum())} components have zero within-group variance, F set to +inf"
        logger.warning(message)
        flags = (message,)
    return FMap(values=values, dof=(between_dof, within_dof), p_values=p_values, infinite=infinite, flags=flags)


def reproducibility(features: Union[Sequence[FeatureVector], np.ndarray], labels: Sequence[int],
                    z_transform: bool = False) -> ReproducibilityReport:
    """Mean pairwise Pearson correlation between trials of the same class.

    With ``z_transform`` each correlation is mapped through atanh before
    averaging, so per-class values are in z units.
    """
    samples = _as_samples(features)
    samples = samples.reshape(samples.shape[0], -1)
    labels = np.asarray(labels)
    if samples.shape[0] != len(labels):
        raise InvalidArgumentError(f"Got {samples.shape[0]} feature vectors for {len(labels)} labels")
    classes, counts = np.unique(labels, return_counts=True)
    if not np.any(counts >= 2):
        raise InvalidArgumentError("Reproducibility needs at least two trials in some class")

    per_class = {}
    n_pairs = {}
    skipped = 0
    for label, count in zip(classes, counts):
        if count < 2:
            continue
        centered = samples[labels == label]
        centered = centered - centered.mean(axis=1, keepdims=True)
        norms = np.linalg.norm(centered, axis=1)
        constant = norms <= np.finfo(float).tiny
        safe = np.where(constant, 1.0, norms)
        correlation = np.clip((centered @ centered.T) / np.outer(safe, safe), -1.0, 1.0)

        upper = np.triu_indices(count, k=1)
        usable = ~(constant[upper[0]] | constant[upper[1]])
        skipped += int(np.count_nonzero(~usable))
        values = correlation[upper][usable]
        if values.size == 0:
            continue
        if z_transform:
            values = np.arctanh(np.clip(values, -Z_CLIP, Z_CLIP))
        per_class[int(label)] = float(values.mean())
        n_pairs[int(label)] = int(values.size)

    if skipped:
        logger.warning(f"Skipped {skipped} trial pairs with a constant feature vector")
    overall = float(np.mean(list(per_class.values()))) if per_class else float('nan')
    return ReproducibilityReport(per_class=per_class, overall=overall, z_transform=z_transform, n_pairs=n_pairs,
                                 skipped_pairs=skipped)


def sndm_psd_spectrum(sndm: Union[Sequence[FeatureVector], np.ndarray],
                      spectra: Sequence[PsdMatrix]) -> CorrelationSpectrum:
    """Correlation, per frequency bin, between snDM values and PSD values over all channels and trials."""
    sndm = _as_samples(sndm)
    if sndm.ndim != 2 or len(spectra) != sndm.shape[0]:
        raise InvalidArgumentError(f"Need one PSD per trial, got {len(spectra)} PSDs for {sndm.shape[0]} trials")
    freqs = spectra[0].freqs
    for spectrum in spectra:
        if spectrum.values.shape != (sndm.shape[1], len(freqs)) or not np.array_equal(spectrum.freqs, freqs):
            raise InvalidArgumentError("PSD shapes must match the snDM channels and share frequency bins")

    x = sndm.ravel()
    Y = np.concatenate([s.values for s in spectra], axis=0)
    x = x - x.mean()
    Y = Y - Y.mean(axis=0)
    x_norm = np.linalg.norm(x)
    y_norm = np.linalg.norm(Y, axis=0)
    degenerate = (y_norm <= np.finfo(float).tiny) | (x_norm <= np.finfo(float).tiny)
    with np.errstate(divide='ignore', invalid='ignore'):
        values = (x @ Y) / (x_norm * y_norm)
    values = np.where(degenerate, 0.0, np.clip(values, -1.0, 1.0))
    if np.any(degenerate):
        logger.warning(f"{int(degenerate.sum())} frequency bins have zero variance, correlation set to 0")
    return CorrelationSpectrum(freqs=freqs.copy(), values=values, degenerate=degenerate)
