from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, List, Any, Sequence, Tuple

import numpy as np

from core.errors import InvalidArgumentError


def _frozen_array(values: Any, dtype: Any = float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class FeatureLayout(Enum):
    SNDM = "snDM"
    SEDM = "seDM"
    SNDM_SEDM = "snDM+seDM"
    SDM = "sdm"
    FULL_VEC = "full-vec"
    BAND_CONCATENATED = "band-concatenated"
    BAND_POWER = "band-power"


class SplitRule(Enum):
    CLASS_BALANCED = "class-balanced"
    GROUPED = "grouped"
    TIME_SEQUENCE = "time-sequence"


class Regularization(Enum):
    L2_HINGE = "L2-hinge"
    L1_LOGISTIC = "L1-logistic"
    L2_RIDGE = "L2-ridge"


@dataclass(frozen=True)
class TrialMatrix:
    data: np.ndarray
    dt: float
    channel_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise InvalidArgumentError(f"Trial data must be a channel x sample matrix, got shape {data.shape}")
        n_channels, n_samples = data.shape
        if n_channels < 1 or n_samples < 2:
            raise InvalidArgumentError(f"Trial needs P >= 1 and L >= 2, got P={n_channels}, L={n_samples}")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise InvalidArgumentError(f"Sampling interval must be positive, got dt={self.dt}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("Trial data contains non-finite entries")

        channel_ids = tuple(str(c) for c in self.channel_ids) if self.channel_ids else \
            tuple(f"ch{i:03d}" for i in range(n_channels))
        if len(channel_ids) != n_channels:
            raise InvalidArgumentError(f"Got {len(channel_ids)} channel ids for {n_channels} channels")

        object.__setattr__(self, 'data', _frozen_array(data))
        object.__setattr__(self, 'dt', float(self.dt))
        object.__setattr__(self, 'channel_ids', channel_ids)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "TrialMatrix":
        return TrialMatrix(data=data, dt=self.dt, channel_ids=self.channel_ids)


@dataclass(frozen=True)
class StackedPair:
    X: np.ndarray
    Xp: np.ndarray
    h: int
    n_channels: int

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]


@dataclass
class Dataset:
    trials: List[TrialMatrix]
    labels: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None
    name: str = "dataset"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.trials:
            raise InvalidArgumentError("Dataset needs at least one trial")
        first = self.trials[0]
        for index, trial in enumerate(self.trials):
            if trial.n_channels != first.n_channels:
                raise InvalidArgumentError(f"Trial {index} has {trial.n_channels} channels, expected {first.n_channels}")
            if trial.dt != first.dt:
                raise InvalidArgumentError(f"Trial {index} has dt={trial.dt}, expected {first.dt}")

        n_trials = len(self.trials)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (n_trials,):
                raise InvalidArgumentError(f"Expected {n_trials} labels, got shape {self.labels.shape}")
        if self.targets is not None:
            targets = np.asarray(self.targets, dtype=float)
            if targets.ndim == 1:
                targets = targets[:, None]
            if targets.shape[0] != n_trials:
                raise InvalidArgumentError(f"Expected {n_trials} target rows, got {targets.shape[0]}")
            self.targets = targets
        if self.groups is not None:
            self.groups = np.asarray(self.groups)
            if self.groups.shape != (n_trials,):
                raise InvalidArgumentError(f"Expected {n_trials} group ids, got shape {self.groups.shape}")

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def n_channels(self) -> int:
        return self.trials[0].n_channels

    @property
    def dt(self) -> float:
        return self.trials[0].dt

    @property
    def channel_ids(self) -> Tuple[str, ...]:
        return self.trials[0].channel_ids

    @property
    def task(self) -> Optional[str]:
        if self.labels is not None and self.targets is None:
            return "classification"
        if self.targets is not None and self.labels is None:
            return "regression"
        return None

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(
            trials=[self.trials[i] for i in indices],
            labels=None if self.labels is None else self.labels[indices],
            targets=None if self.targets is None else self.targets[indices],
            groups=None if self.groups is None else self.groups[indices],
            name=self.name,
            metadata=dict(self.metadata),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "n_trials": len(self.trials),
            "n_channels": self.n_channels,
            "dt": self.dt,
            "task": self.task,
            "metadata": self.metadata,
        }


@dataclass(frozen=True)
class SvdTruncation:
    rank: int
    singular_values: np.ndarray
    effective_rank: int
    tolerance: float


@dataclass(frozen=True)
class DmdResult:
    modes: np.ndarray
    eigenvalues: np.ndarray
    frequencies: np.ndarray
    growth_rates: np.ndarray
    amplitudes: np.ndarray
    rank_used: int
    dt: float
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    svd: Optional[SvdTruncation] = None
    warnings: Tuple[str, ...] = ()

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    @property
    def n_channels(self) -> int:
        return self.modes.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rank_used": self.rank_used,
            "n_modes": self.n_modes,
            "dt": self.dt,
            "frequencies": self.frequencies.tolist(),
            "growth_rates": self.growth_rates.tolist(),
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class SdmFeatures:
    matrix: np.ndarray
    source_rank: int
    band: Optional[Tuple[float, float]] = None
    imaginary: Optional[np.ndarray] = None
    imaginary_residual: float = 0.0

    @property
    def n_channels(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: FeatureLayout
    trial_id: Optional[str] = None
    rank: Optional[int] = None
    bands: Tuple[Tuple[float, float], ...] = ()

    def __len__(self) -> int:
        return len(self.values)

    def provenance(self) -> Dict[str, Any]:
        return {
            "layout": self.layout.value,
            "trial_id": self.trial_id,
            "rank": self.rank,
            "bands": [list(b) for b in self.bands],
        }


@dataclass(frozen=True)
class PsdMatrix:
    values: np.ndarray
    freqs: np.ndarray
    nfft: int
    window: str = "hamming"


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: np.ndarray
    regularization: Regularization
    hyperparameter: Any
    classes: Optional[np.ndarray] = None
    pairs: Tuple[Tuple[int, int], ...] = ()
    provenance: Dict[str, Any] = field(default_factory=dict)
    flags: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        hyper = self.hyperparameter
        if isinstance(hyper, np.ndarray):
            hyper = hyper.tolist()
        return {
            "kind": "linear",
            "regularization": self.regularization.value,
            "hyperparameter": hyper,
            "weights": np.asarray(self.weights).tolist(),
            "bias": np.asarray(self.bias).tolist(),
            "classes": None if self.classes is None else self.classes.tolist(),
            "pairs": [list(p) for p in self.pairs],
            "provenance": self.provenance,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class KernelModel:
    coefficients: np.ndarray
    bias: np.ndarray
    support_index: Tuple[np.ndarray, ...]
    training_index: np.ndarray
    cost: float
    classes: np.ndarray
    pairs: Tuple[Tuple[int, int], ...] = ()
    provenance: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "kernel",
            "regularization": Regularization.L2_HINGE.value,
            "hyperparameter": self.cost,
            "coefficients": [np.asarray(c).tolist() for c in self.coefficients],
            "bias": np.asarray(self.bias).tolist(),
            "support_index": [np.asarray(s).tolist() for s in self.support_index],
            "training_index": self.training_index.tolist(),
            "classes": self.classes.tolist(),
            "pairs": [list(p) for p in self.pairs],
            "provenance": self.provenance,
        }


@dataclass(frozen=True)
class Metric:
    kind: str
    value: float
    flags: Tuple[str, ...] = ()
    per_dimension: Optional[np.ndarray] = None


DEFAULT_COST_GRID = tuple(10.0 ** e for e in range(-1, 9))
DEFAULT_LAMBDA_GRID = tuple(10.0 ** e for e in range(-8, 9))
DEFAULT_RANK_GRID = (25, 50, 100, 200, 300, 600, 900)


@dataclass
class CvConfig:
    outer_folds: int = 10
    outer_repeats: int = 10
    inner_folds: int = 10
    inner_repeats: int = 10
    split_rule: SplitRule = SplitRule.CLASS_BALANCED
    cost_grid: Tuple[float, ...] = DEFAULT_COST_GRID
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID
    rank_grid: Tuple[int, ...] = DEFAULT_RANK_GRID
    seed: int = 0
    workers: int = 1
    oversample: bool = True
    track_indices: bool = False

    def __post_init__(self):
        if isinstance(self.split_rule, str):
            self.split_rule = SplitRule(self.split_rule)
        self.cost_grid = tuple(float(c) for c in self.cost_grid)
        self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
        self.rank_grid = tuple(int(r) for r in self.rank_grid)
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise InvalidArgumentError("Cross-validation needs at least 2 folds in both loops")
        if self.outer_repeats < 1 or self.inner_repeats < 1:
            raise InvalidArgumentError("Repeat counts must be at least 1")
        if not self.cost_grid or not self.lambda_grid or not self.rank_grid:
            raise InvalidArgumentError("Hyperparameter grids must be nonempty")
        if any(c <= 0 for c in self.cost_grid):
            raise InvalidArgumentError("Cost grid values must be positive")
        if any(v < 0 for v in self.lambda_grid):
            raise InvalidArgumentError("Lambda grid values must be nonnegative")
        if any(r < 1 for r in self.rank_grid):
            raise InvalidArgumentError("Rank grid values must be positive")

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "CvConfig":
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "outer_folds": self.outer_folds,
            "outer_repeats": self.outer_repeats,
            "inner_folds": self.inner_folds,
            "inner_repeats": self.inner_repeats,
            "split_rule": self.split_rule.value,
            "cost_grid": list(self.cost_grid),
            "lambda_grid": list(self.lambda_grid),
            "rank_grid": list(self.rank_grid),
            "seed": self.seed,
            "workers": self.workers,
            "oversample": self.oversample,
            "track_indices": self.track_indices,
        }


@dataclass
class FoldResult:
    repeat: int
    fold: int
    metric: float
    rank: Optional[int]
    hyperparameter: Any
    test_index: np.ndarray
    inner_score: float
    seconds: Dict[str, float] = field(default_factory=dict)

    def to_row(self) -> Dict[str, Any]:
        hyper = self.hyperparameter
        if isinstance(hyper, (list, tuple, np.ndarray)):
            hyper = ";".join(f"{v:.17g}" for v in np.ravel(hyper))
        return {
            "repeat": self.repeat,
            "fold": self.fold,
            "metric": self.metric,
            "rank": self.rank,
            "hyperparameter": hyper,
            "inner_score": self.inner_score,
            "n_test": len(self.test_index),
        }


@dataclass
class FitRecord:
    repeat: int
    fold: int
    stage: str
    train_index: np.ndarray
    test_index: np.ndarray


@dataclass
class CvReport:
    metric_kind: str
    folds: List[FoldResult]
    fold_assignments: Dict[int, np.ndarray]
    config: Dict[str, Any]
    timings: Dict[str, float] = field(default_factory=dict)
    fit_log: List[FitRecord] = field(default_factory=list)

    @property
    def repeat_means(self) -> np.ndarray:
        repeats = sorted({f.repeat for f in self.folds})
        return np.array([np.mean([f.metric for f in self.folds if f.repeat == r]) for r in repeats])

    @property
    def mean(self) -> float:
        return float(np.mean(self.repeat_means))

    @property
    def std(self) -> float:
        return float(np.std(self.repeat_means))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": self.metric_kind,
            "mean": self.mean,
            "std": self.std,
            "repeat_means": self.repeat_means.tolist(),
            "n_folds": len(self.folds),
            "timings": self.timings,
            "config": self.config,
            "fold_assignments": {str(r): a.tolist() for r, a in self.fold_assignments.items()},
        }


@dataclass(frozen=True)
class FMap:
    values: np.ndarray
    dof: Tuple[int, int]
    p_values: Optional[np.ndarray] = None
    infinite: Optional[np.ndarray] = None
    flags: Tuple[str, ...] = ()


@dataclass
class ReproducibilityReport:
    per_class: Dict[int, float]
    overall: float
    z_transform: bool
    n_pairs: Dict[int, int] = field(default_factory=dict)
    skipped_pairs: int = 0

    def back_transformed(self) -> Dict[int, float]:
        """Per-class means on the correlation scale."""
        if not self.z_transform:
            return dict(self.per_class)
        return {k: float(np.tanh(v)) for k, v in self.per_class.items()}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "overall": self.overall,
            "z_transform": self.z_transform,
            "n_pairs": {str(k): v for k, v in self.n_pairs.items()},
            "skipped_pairs": self.skipped_pairs,
        }


@dataclass(frozen=True)
class CorrelationSpectrum:
    freqs: np.ndarray
    values: np.ndarray
    degenerate: np.ndarray

    @property
    def peak_frequency(self) -> float:
        return float(self.freqs[int(np.argmax(self.values))])


@dataclass
class ExponentFit:
    exponent: float
    intercept: float
    r_squared: float


@dataclass
class TimingSeries:
    pipeline: str
    n_values: List[int]
    train_seconds: List[float]
    predict_seconds: List[float]
    repetitions: int
    train_fit: Optional[ExponentFit] = None
    predict_fit: Optional[ExponentFit] = None
    flags: List[str] = field(default_factory=list)

    def rows(self) -> List[Dict[str, Any]]:
        rows = []
        for n, train, predict in zip(self.n_values, self.train_seconds, self.predict_seconds):
            rows.append({"pipeline": self.pipeline, "n": n, "phase": "train", "median_seconds": train,
                         "repetitions": self.repetitions})
            rows.append({"pipeline": self.pipeline, "n": n, "phase": "predict", "median_seconds": predict,
                         "repetitions": self.repetitions})
        return rows
