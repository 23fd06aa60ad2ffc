"""Train/predict timing versus training-set size, with log-log exponent fits.

Feature extraction happens in ``prepare`` outside the timed regions, so
only model training and single-sample prediction are measured.
"""
import logging
import threading
import time
from abc import ABC, abstractmethod
from contextlib import contextmanager
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Type, Union

import numpy as np
import scipy.stats

from core.decoder import decision_function, train_kernel_l2svm, train_l1_classifier, train_linear_l2svm
from core.errors import InvalidArgumentError
from core.features import gram_matrix, kernel_row
from core.featurizer import FeatureBank, FeatureSpec
from core.models import ExponentFit, FeatureLayout, TimingSeries
from core.signals import generate_class_dataset

logger = logging.getLogger(__name__)

MIN_REPETITIONS = 3
RESOLUTION_MULTIPLE = 100
MAX_LOOPS = 10 ** 6

_timed_region_lock = threading.Lock()


@contextmanager
def timed_region():
    """Exclusive section for one measurement; nesting or concurrent use raises."""
    if not _timed_region_lock.acquire(blocking=False):
        raise RuntimeError("Another timed region is already running in this process")
    try:
        yield
    finally:
        _timed_region_lock.release()


class FakeClock:
    """Manually advanced clock for deterministic harness checks."""

    def __init__(self, start: float = 0.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


class ScalingPipeline(ABC):
    name = "pipeline"

    @abstractmethod
    def prepare(self, n_per_class: int, seed: int) -> None:
        """Build data and features for ``n_per_class`` training trials per class."""

    @abstractmethod
    def train(self) -> None:
        pass

    @abstractmethod
    def predict_one(self) -> None:
        pass


class StubPipeline(ScalingPipeline):
    """Advances a FakeClock by planted train and predict costs."""

    def __init__(self, clock: FakeClock, train_cost: Callable[[int], float],
                 predict_cost: Callable[[int], float], name: str = "stub"):
        self.clock = clock
        self.train_cost = train_cost
        self.predict_cost = predict_cost
        self.name = name
        self.n = 0

    def prepare(self, n_per_class: int, seed: int) -> None:
        self.n = n_per_class

    def train(self) -> None:
        self.clock.advance(self.train_cost(self.n))

    def predict_one(self) -> None:
        self.clock.advance(self.predict_cost(self.n))


class _SyntheticPipeline(ScalingPipeline):
    """Seeded, well-separated synthetic classes; one extra trial per dataset is held out for prediction.

    Low noise keeps the hinge solvers' epoch count flat in n, so the timing
    exponents reflect per-epoch cost.
    """

    layout = FeatureLayout.SDM

    def __init__(self, n_classes: int = 2, n_channels: int = 8, n_samples: int = 64, dt: float = 0.001,
                 rank: int = 8, cost: float = 1.0, noise: float = 0.05):
        self.n_classes = n_classes
        self.n_channels = n_channels
        self.n_samples = n_samples
        self.dt = dt
        self.rank = rank
        self.cost = cost
        self.noise = noise
        self.model = None

    def _spec(self) -> FeatureSpec:
        return FeatureSpec(layout=self.layout)

    def prepare(self, n_per_class: int, seed: int) -> None:
        dataset = generate_class_dataset(self.n_classes, n_per_class, self.n_channels, self.n_samples, self.dt,
                                         seed, noise=self.noise)
        held_out = generate_class_dataset(self.n_classes, 1, self.n_channels, self.n_samples, self.dt,
                                          seed + 1, noise=self.noise)
        self.labels = dataset.labels
        bank = FeatureBank(dataset, self._spec())
        self.rank = min(self.rank, bank.available_rank)
        self._featurize(bank, FeatureBank(held_out.subset([0]), self._spec()))
        self.model = None

    def _featurize(self, bank: FeatureBank, query: FeatureBank) -> None:
        self.features = bank.features(self.rank)
        self.query = query.features(self.rank)


class KernelSvmPipeline(_SyntheticPipeline):
    """Precomputed-kernel SVM; training includes building the Gram matrix."""

    name = "kernel-l2"
    layout = FeatureLayout.FULL_VEC

    def _spec(self) -> FeatureSpec:
        return FeatureSpec(layout=FeatureLayout.FULL_VEC, kernel=True)

    def _featurize(self, bank: FeatureBank, query: FeatureBank) -> None:
        self.mode_sets = bank.mode_sets(self.rank)
        self.query_modes = query.mode_sets(self.rank)[0]

    def train(self) -> None:
        self.model = train_kernel_l2svm(gram_matrix(self.mode_sets), self.labels, self.cost)

    def predict_one(self) -> None:
        row = kernel_row(self.query_modes, self.mode_sets)
        decision_function(self.model, row[None, :])


class LinearSvmPipeline(_SyntheticPipeline):
    name = "linear-l2"

    def train(self) -> None:
        self.model = train_linear_l2svm(self.features, self.labels, self.cost)

    def predict_one(self) -> None:
        decision_function(self.model, self.query)


class L1SndmPipeline(_SyntheticPipeline):
    name = "l1-sndm"
    layout = FeatureLayout.SNDM

    def train(self) -> None:
        self.model = train_l1_classifier(self.features, self.labels, self.cost)

    def predict_one(self) -> None:
        decision_function(self.model, self.query)


PIPELINES: Dict[str, Type[_SyntheticPipeline]] = {
    KernelSvmPipeline.name: KernelSvmPipeline,
    LinearSvmPipeline.name: LinearSvmPipeline,
    L1SndmPipeline.name: L1SndmPipeline,
}


def create_pipeline(name: str, **kwargs) -> ScalingPipeline:
    if name not in PIPELINES:
        raise InvalidArgumentError(f"Unknown pipeline {name!r}, expected one of {sorted(PIPELINES)}")
    return PIPELINES[name](**kwargs)


def fit_exponent(n_values: Sequence[float], times: Sequence[float]) -> ExponentFit:
    """Least squares on (ln n, ln t)."""
    n_values = np.asarray(n_values, dtype=float)
    times = np.asarray(times, dtype=float)
    if n_values.shape != times.shape or n_values.size < 2:
        raise InvalidArgumentError("Need at least two (n, time) points")
    if np.any(times <= 0) or np.any(n_values <= 0):
        raise InvalidArgumentError("Sizes and times must be positive")
    if len(np.unique(n_values)) < 2:
        raise InvalidArgumentError("Need at least two distinct sizes")

    log_n = np.log(n_values)
    log_t = np.log(times)
    fit = scipy.stats.linregress(log_n, log_t)
    residual = log_t - (fit.intercept + fit.slope * log_n)
    total = np.sum((log_t - log_t.mean()) ** 2)
    ss_res = float(np.sum(residual ** 2))
    if total > 0:
        r_squared = 1.0 - ss_res / total
    else:
        r_squared = 1.0 if ss_res <= 1e-24 else 0.0
    return ExponentFit(exponent=float(fit.slope), intercept=float(fit.intercept), r_squared=float(r_squared))


def _measure(action: Callable[[], None], clock: Callable[[], float], loops: int) -> float:
    with timed_region():
        started = clock()
        for _ in range(loops):
            action()
        return (clock() - started) / loops


def time_phase(action: Callable[[], None], repetitions: int, clock: Callable[[], float] = time.perf_counter,
               resolution: float = 0.0) -> Tuple[float, int]:
    """Median seconds per call after one discarded warm-up, and the loop count used.

    When a sample is within ``RESOLUTION_MULTIPLE`` ticks of the timer
    resolution, each sample repeats the action ten times more.
    """
    action()
    loops = 1
    while True:
        samples = [_measure(action, clock, loops) for _ in range(repetitions)]
        if resolution <= 0 or min(samples) * loops >= RESOLUTION_MULTIPLE * resolution or loops >= MAX_LOOPS:
            return float(np.median(samples)), loops
        loops *= 10


def run_scaling_benchmark(pipeline: Union[ScalingPipeline, str], n_values: Sequence[int], repetitions: int = 5,
                          seed: int = 0, clock: Callable[[], float] = time.perf_counter,
                          resolution: Optional[float] = None) -> TimingSeries:
    if isinstance(pipeline, str):
        pipeline = create_pipeline(pipeline)
    n_values = [int(n) for n in n_values]
    if len(n_values) < 2 or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise InvalidArgumentError(f"Need at least two strictly increasing sizes, got {n_values}")
    if repetitions < MIN_REPETITIONS:
        raise InvalidArgumentError(f"Need at least {MIN_REPETITIONS} repetitions, got {repetitions}")
    if resolution is None:
        resolution = time.get_clock_info('perf_counter').resolution if clock is time.perf_counter else 0.0

    train_seconds: List[float] = []
    predict_seconds: List[float] = []
    flags: List[str] = []
    for n in n_values:
        pipeline.prepare(n, seed + n)
        for phase, action, store in (("train", pipeline.train, train_seconds),
                                     ("predict", pipeline.predict_one, predict_seconds)):
            median, loops = time_phase(action, repetitions, clock, resolution)
            if loops > 1:
                message = f"{pipeline.name} {phase} at n={n}: timer too coarse, {loops} calls per sample"
                logger.warning(message)
                flags.append(message)
            if median <= 0:
                raise InvalidArgumentError(f"{pipeline.name} {phase} at n={n} measured a nonpositive time")
            store.append(median)
        logger.info(f"{pipeline.name} n={n}: train {train_seconds[-1]:.3e}s, predict {predict_seconds[-1]:.3e}s")

    return TimingSeries(
        pipeline=pipeline.name,
        n_values=n_values,
        train_seconds=train_seconds,
        predict_seconds=predict_seconds,
        repetitions=repetitions,
        train_fit=fit_exponent(n_values, train_seconds),
        predict_fit=fit_exponent(n_values, predict_seconds),
        flags=flags,
    )
