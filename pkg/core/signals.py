"""Trial construction, synthetic generators and light preprocessing."""
import logging
import math
from typing import Optional, Sequence

import numpy as np

from core.errors import InvalidArgumentError
from core.models import Dataset, StackedPair, TrialMatrix

logger = logging.getLogger(__name__)


def _check_finite(**params: float) -> None:
    for name, value in params.items():
        if not np.isfinite(value):
            raise InvalidArgumentError(f"Parameter {name} must be finite, got {value}")


def sample_count(dt: float, duration: float) -> int:
    return int(round(duration / dt))


def generate_fig1_signal(dt: float, duration: float, positions: Sequence[float]) -> TrialMatrix:
    """Sum of a decaying 13 Hz and a growing 8 Hz travelling-free sine field.

    X1(p, t) = sech(p + 3) * 0.25**t * sin(2*pi*13*t)
    X2(p, t) = sech(p - 3) * 2**t * sin(2*pi*8*t)
    sampled at t = 0, dt, 2*dt, ... for every position p.
    """
    positions = np.asarray(positions, dtype=float)
    _check_finite(dt=dt, duration=duration)
    if positions.size == 0:
        raise InvalidArgumentError("At least one position is required")
    if not np.all(np.isfinite(positions)):
        raise InvalidArgumentError("Positions must be finite")
    if dt <= 0 or duration <= 0:
        raise InvalidArgumentError(f"dt and duration must be positive, got dt={dt}, duration={duration}")

    n_samples = sample_count(dt, duration)
    t = np.arange(n_samples) * dt
    x1 = (1.0 / np.cosh(positions + 3.0))[:, None] * (0.25 ** t * np.sin(2 * np.pi * 13.0 * t))[None, :]
    x2 = (1.0 / np.cosh(positions - 3.0))[:, None] * (2.0 ** t * np.sin(2 * np.pi * 8.0 * t))[None, :]
    channel_ids = tuple(f"p{p:+.2f}" for p in positions)
    return TrialMatrix(data=x1 + x2, dt=dt, channel_ids=channel_ids)


def fig1_trial() -> TrialMatrix:
    return generate_fig1_signal(dt=0.001, duration=0.5, positions=np.arange(-10.0, 10.0 + 1e-9, 0.25))


def _default_informative_channels(n_classes: int, n_channels: int) -> np.ndarray:
    return np.round(np.linspace(0, n_channels - 1, n_classes + 2)[1:-1]).astype(int)


def generate_class_dataset(n_classes: int, trials_per_class: int, P: int, L: int, dt: float, seed: int,
                           noise: float = 0.3,
                           class_freqs: Optional[Sequence[float]] = None,
                           informative_channels: Optional[Sequence[int]] = None,
                           background_freq: float = 10.0,
                           amplitude: float = 1.0) -> Dataset:
    """Classes differ by a localized (sech-profile) oscillation on one channel.

    Every trial carries a broad background oscillation shared by all classes;
    class ``c`` adds an oscillation at ``class_freqs[c]`` centred on
    ``informative_channels[c]``. Per-trial variability is white noise with
    standard deviation ``noise``, so ``noise=0`` yields identical trials
    within a class.
    """
    for name, value in (("n_classes", n_classes), ("trials_per_class", trials_per_class), ("P", P), ("L", L)):
        if value < 1:
            raise InvalidArgumentError(f"{name} must be at least 1, got {value}")
    if L < 2:
        raise InvalidArgumentError(f"L must be at least 2, got {L}")
    _check_finite(dt=dt, noise=noise)
    if dt <= 0 or noise < 0:
        raise InvalidArgumentError(f"Need dt > 0 and noise >= 0, got dt={dt}, noise={noise}")

    rng = np.random.default_rng(seed)
    if class_freqs is None:
        class_freqs = np.linspace(0.07, 0.13, n_classes) / dt if n_classes > 1 else [0.1 / dt]
    class_freqs = np.asarray(class_freqs, dtype=float)
    if informative_channels is None:
        informative_channels = _default_informative_channels(n_classes, P)
    informative_channels = np.asarray(informative_channels, dtype=int)
    if len(class_freqs) != n_classes or len(informative_channels) != n_classes:
        raise InvalidArgumentError("Need one frequency and one informative channel per class")

    positions = np.arange(P, dtype=float)
    t = np.arange(L) * dt
    background_profile = 1.0 / np.cosh((positions - (P - 1) / 2.0) / max(P / 4.0, 1.0))
    background = background_profile[:, None] * np.sin(2 * np.pi * background_freq * t + np.pi / 4)[None, :]

    class_phases = rng.uniform(0, 2 * np.pi, size=n_classes)
    templates = []
    for c in range(n_classes):
        profile = 1.0 / np.cosh(positions - positions[informative_channels[c]])
        wave = np.sin(2 * np.pi * class_freqs[c] * t + class_phases[c])
        templates.append(background + amplitude * profile[:, None] * wave[None, :])

    trials = []
    labels = []
    channel_ids = tuple(f"ch{i:03d}" for i in range(P))
    for c in range(n_classes):
        for _ in range(trials_per_class):
            data = templates[c] + noise * rng.standard_normal((P, L))
            trials.append(TrialMatrix(data=data, dt=dt, channel_ids=channel_ids))
            labels.append(c)

    group_size = max(1, math.ceil(trials_per_class / 10))
    groups = np.tile(np.arange(trials_per_class) // group_size, n_classes)

    logger.debug(f"Generated class dataset: {n_classes} classes x {trials_per_class} trials, P={P}, L={L}")
    return Dataset(
        trials=trials,
        labels=np.asarray(labels),
        groups=groups,
        name="synthetic-classes",
        metadata={
            "seed": seed,
            "noise": noise,
            "class_freqs": class_freqs.tolist(),
            "informative_channels": informative_channels.tolist(),
            "background_freq": background_freq,
        },
    )


def generate_regression_dataset(n_trials: int, P: int, L: int, dt: float, n_targets: int, seed: int,
                                noise: float = 0.1, n_groups: int = 10) -> Dataset:
    """Trials whose localized source amplitudes are the regression targets.

    Groups are contiguous blocks in trial order, so the same dataset serves
    grouped and time-sequence splits.
    """
    for name, value in (("n_trials", n_trials), ("P", P), ("n_targets", n_targets), ("n_groups", n_groups)):
        if value < 1:
            raise InvalidArgumentError(f"{name} must be at least 1, got {value}")
    if L < 2 or dt <= 0 or noise < 0:
        raise InvalidArgumentError(f"Invalid regression dataset parameters L={L}, dt={dt}, noise={noise}")

    rng = np.random.default_rng(seed)
    positions = np.arange(P, dtype=float)
    t = np.arange(L) * dt
    centres = _default_informative_channels(n_targets, P)
    freqs = np.linspace(0.05, 0.15, n_targets) / dt if n_targets > 1 else np.array([0.1 / dt])
    phases = rng.uniform(0, 2 * np.pi, size=n_targets)
    sources = np.stack([
        (1.0 / np.cosh(positions - positions[centres[m]]))[:, None] * np.sin(2 * np.pi * freqs[m] * t + phases[m])[None, :]
        for m in range(n_targets)
    ])

    targets = rng.uniform(0.2, 1.5, size=(n_trials, n_targets))
    channel_ids = tuple(f"ch{i:03d}" for i in range(P))
    trials = []
    for n in range(n_trials):
        data = np.tensordot(targets[n], sources, axes=1) + noise * rng.standard_normal((P, L))
        trials.append(TrialMatrix(data=data, dt=dt, channel_ids=channel_ids))

    groups = (np.arange(n_trials) * n_groups) // n_trials
    return Dataset(
        trials=trials,
        targets=targets,
        groups=groups,
        name="synthetic-regression",
        metadata={"seed": seed, "noise": noise, "source_channels": centres.tolist(), "source_freqs": freqs.tolist()},
    )


def common_average_reference(trial: TrialMatrix) -> TrialMatrix:
    if trial.n_channels < 2:
        raise InvalidArgumentError("Common-average reference needs at least 2 channels")
    data = trial.data - trial.data.mean(axis=0, keepdims=True)
    return trial.with_data(data)


def choose_stack_factor(P: int, L: int) -> int:
    """Smallest integer h with h >= (L + 1) / (P + 1)."""
    if P < 1 or L < 2:
        raise InvalidArgumentError(f"Need P >= 1 and L >= 2, got P={P}, L={L}")
    return max(1, -(-(L + 1) // (P + 1)))


def hankel_stack(trial: TrialMatrix, h: int) -> StackedPair:
    n_channels, n_samples = trial.data.shape
    if h < 1:
        raise InvalidArgumentError(f"Stacking factor must be at least 1, got {h}")
    if n_samples <= h:
        raise InvalidArgumentError(f"Trial of {n_samples} samples is too short for stacking factor {h}")

    n_columns = n_samples - h
    X = np.vstack([trial.data[:, i:i + n_columns] for i in range(h)])
    Xp = np.vstack([trial.data[:, i + 1:i + 1 + n_columns] for i in range(h)])
    return StackedPair(X=X, Xp=Xp, h=h, n_channels=n_channels)
