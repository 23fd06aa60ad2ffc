"""Per-trial featurization with a cached SVD per trial."""
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.dmd import SvdFactors, dmd_from_svd, stacked_svd
from core.errors import ConfigError, InvalidArgumentError
from core.features import (HIGH_GAMMA, STANDARD_BANDS, band_power, frequency_filtered_sdm, gram_matrix, psd,
                           sdm_features, vectorize)
from core.models import Dataset, DmdResult, FeatureLayout, FeatureVector, StackedPair, TrialMatrix
from core.signals import choose_stack_factor, common_average_reference, hankel_stack
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

SINGLE_MATRIX_LAYOUTS = (FeatureLayout.SNDM, FeatureLayout.SEDM, FeatureLayout.SNDM_SEDM,
                         FeatureLayout.SDM, FeatureLayout.FULL_VEC)


@dataclass(frozen=True)
class FeatureSpec:
    layout: FeatureLayout = FeatureLayout.SNDM
    bands: Tuple[Tuple[float, float], ...] = ()
    inner_layout: FeatureLayout = FeatureLayout.SNDM
    kernel: bool = False
    car: bool = False
    nfft: int = 512
    stack_factor: Optional[int] = None

    def __post_init__(self):
        for name in ('layout', 'inner_layout'):
            value = getattr(self, name)
            if isinstance(value, str):
                object.__setattr__(self, name, FeatureLayout(value))
        object.__setattr__(self, 'bands', tuple((float(lo), float(hi)) for lo, hi in self.bands))
        if self.kernel and self.layout != FeatureLayout.FULL_VEC:
            raise ConfigError("The precomputed-kernel path needs the full sDM layout")
        if self.inner_layout not in (FeatureLayout.SNDM, FeatureLayout.SEDM, FeatureLayout.SNDM_SEDM):
            raise ConfigError(f"Inner layout {self.inner_layout.value} is not allowed for band features")

    @property
    def uses_rank(self) -> bool:
        return self.layout != FeatureLayout.BAND_POWER

    @property
    def effective_bands(self) -> Tuple[Tuple[float, float], ...]:
        if self.bands:
            return self.bands
        if self.layout == FeatureLayout.BAND_POWER:
            return (HIGH_GAMMA,)
        return STANDARD_BANDS

    @classmethod
    def from_name(cls, name: str, **kwargs: Any) -> "FeatureSpec":
        """Resolve CLI feature names; ``gram`` selects the kernel path."""
        if name == 'gram':
            return cls(layout=FeatureLayout.FULL_VEC, kernel=True, **kwargs)
        return cls(layout=FeatureLayout(name), **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layout": self.layout.value,
            "bands": [list(b) for b in self.bands],
            "inner_layout": self.inner_layout.value,
            "kernel": self.kernel,
            "car": self.car,
            "nfft": self.nfft,
            "stack_factor": self.stack_factor,
        }


def feature_length(spec: FeatureSpec, n_channels: int) -> int:
    edges = n_channels * (n_channels - 1) // 2
    single = {
        FeatureLayout.SNDM: n_channels,
        FeatureLayout.SEDM: edges,
        FeatureLayout.SNDM_SEDM: n_channels + edges,
        FeatureLayout.SDM: n_channels + edges,
        FeatureLayout.FULL_VEC: n_channels * n_channels,
    }
    if spec.layout in single:
        return single[spec.layout]
    if spec.layout == FeatureLayout.BAND_CONCATENATED:
        return single[spec.inner_layout] * len(spec.effective_bands)
    return n_channels * len(spec.effective_bands)


def clip_rank_grid(ranks: Sequence[int], available: int) -> Tuple[int, ...]:
    return tuple(sorted({min(int(r), available) for r in ranks}))


def result_features(result: DmdResult, spec: FeatureSpec) -> np.ndarray:
    if spec.layout in SINGLE_MATRIX_LAYOUTS:
        return vectorize(sdm_features(result.modes, source_rank=result.rank_used), spec.layout)
    if spec.layout == FeatureLayout.BAND_CONCATENATED:
        filtered = frequency_filtered_sdm(result, spec.effective_bands)
        return np.concatenate([vectorize(f, spec.inner_layout) for f in filtered])
    raise InvalidArgumentError(f"Layout {spec.layout.value} is not derived from modes")


def power_features(trial: TrialMatrix, spec: FeatureSpec) -> np.ndarray:
    spectrum = psd(trial, nfft=spec.nfft)
    return np.concatenate([band_power(spectrum, band).values for band in spec.effective_bands])


class TrialDecomposer:
    """Stacks a trial once, keeps its SVD, and runs DMD at any rank."""

    def __init__(self, trial: TrialMatrix, spec: FeatureSpec):
        self.trial = common_average_reference(trial) if spec.car else trial
        h = spec.stack_factor or choose_stack_factor(self.trial.n_channels, self.trial.n_samples)
        self.pair: StackedPair = hankel_stack(self.trial, h)
        self.factors: SvdFactors = stacked_svd(self.pair)

    @property
    def available_rank(self) -> int:
        return len(self.factors.s)

    def decompose(self, rank: int) -> DmdResult:
        return dmd_from_svd(self.pair, self.factors, rank, self.trial.dt)


def featurize_trial(trial: TrialMatrix, rank: Optional[int], spec: FeatureSpec,
                    trial_id: Optional[str] = None) -> FeatureVector:
    if spec.layout == FeatureLayout.BAND_POWER:
        values = power_features(common_average_reference(trial) if spec.car else trial, spec)
        return FeatureVector(values=values, layout=spec.layout, trial_id=trial_id, bands=spec.effective_bands)
    if rank is None:
        raise InvalidArgumentError(f"Layout {spec.layout.value} needs a rank")
    result = TrialDecomposer(trial, spec).decompose(rank)
    bands = spec.effective_bands if spec.layout == FeatureLayout.BAND_CONCATENATED else ()
    return FeatureVector(values=result_features(result, spec), layout=spec.layout, trial_id=trial_id,
                         rank=rank, bands=bands)


@dataclass
class FeatureBank:
    """Features of every trial in a dataset, cached per rank.

    Decompositions depend on one trial only, so features can be computed
    for the whole dataset up front without leaking across folds.
    """
    dataset: Dataset
    spec: FeatureSpec
    workers: int = 1
    _decomposers: Optional[List[TrialDecomposer]] = field(default=None, repr=False)
    _features: Dict[Optional[int], np.ndarray] = field(default_factory=dict, repr=False)
    _modes: Dict[int, List[np.ndarray]] = field(default_factory=dict, repr=False)
    _grams: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def with_spec(self, spec: FeatureSpec) -> "FeatureBank":
        """A bank for another layout over the same trials, sharing the SVDs when stacking agrees."""
        shared = self._decomposers if (spec.car, spec.stack_factor) == (self.spec.car, self.spec.stack_factor) \
            else None
        return FeatureBank(dataset=self.dataset, spec=spec, workers=self.workers, _decomposers=shared)

    def decomposers(self) -> List[TrialDecomposer]:
        if self._decomposers is None:
            logger.info(f"Computing stacked SVDs for {len(self.dataset)} trials")
            self._decomposers = parallel_map(lambda t: TrialDecomposer(t, self.spec), self.dataset.trials,
                                             self.workers)
        return self._decomposers

    @property
    def available_rank(self) -> int:
        if not self.spec.uses_rank:
            return 0
        return min(d.available_rank for d in self.decomposers())

    def rank_grid(self, ranks: Sequence[int]) -> Tuple[Optional[int], ...]:
        if not self.spec.uses_rank:
            return (None,)
        return clip_rank_grid(ranks, self.available_rank)

    def _results(self, rank: int) -> List[DmdResult]:
        return parallel_map(lambda d: d.decompose(rank), self.decomposers(), self.workers)

    def prepare(self, ranks: Sequence[Optional[int]]) -> None:
        for rank in ranks:
            if self.spec.kernel:
                self.gram(rank)
            else:
                self.features(rank)

    def features(self, rank: Optional[int]) -> np.ndarray:
        with self._lock:
            if rank not in self._features:
                if self.spec.layout == FeatureLayout.BAND_POWER:
                    trials = self.dataset.trials
                    if self.spec.car:
                        trials = [common_average_reference(t) for t in trials]
                    rows = parallel_map(lambda t: power_features(t, self.spec), trials, self.workers)
                else:
                    rows = [result_features(r, self.spec) for r in self._results(rank)]
                self._features[rank] = np.vstack(rows)
            return self._features[rank]

    def mode_sets(self, rank: int) -> List[np.ndarray]:
        with self._lock:
            if rank not in self._modes:
                self._modes[rank] = [r.modes for r in self._results(rank)]
            return self._modes[rank]

    def gram(self, rank: int) -> np.ndarray:
        modes = self.mode_sets(rank)
        with self._lock:
            if rank not in self._grams:
                self._grams[rank] = gram_matrix(modes)
            return self._grams[rank]
