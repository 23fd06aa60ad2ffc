import numpy as np
import pytest

from core.models import CvConfig
from core.signals import fig1_trial, generate_class_dataset, generate_regression_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fig1():
    return fig1_trial()


@pytest.fixture(scope="session")
def class_dataset():
    """Three well separated classes, small enough for a full nested run."""
    return generate_class_dataset(n_classes=3, trials_per_class=10, P=6, L=60, dt=0.001, seed=3, noise=0.05)


@pytest.fixture(scope="session")
def regression_dataset():
    return generate_regression_dataset(n_trials=40, P=6, L=60, dt=0.001, n_targets=2, seed=5, noise=0.02)


@pytest.fixture
def small_cv():
    return CvConfig(outer_folds=3, outer_repeats=1, inner_folds=2, inner_repeats=1,
                    cost_grid=(1.0, 100.0), lambda_grid=(1e-3, 1.0, 1e3), rank_grid=(4,), seed=0)
