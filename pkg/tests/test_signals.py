import numpy as np
import pytest

from core.errors import InvalidArgumentError
from core.models import Dataset, TrialMatrix
from core.signals import (choose_stack_factor, common_average_reference, generate_class_dataset,
                          generate_fig1_signal, hankel_stack)


def test_fig1_preset_shape(fig1):
    assert fig1.n_channels == 81
    assert fig1.n_samples == 500
    assert fig1.dt == 0.001


def test_fig1_first_sample_is_zero(fig1):
    assert np.all(fig1.data[:, 0] == 0.0)


def test_fig1_single_position_matches_closed_form():
    trial = generate_fig1_signal(dt=0.25, duration=0.5, positions=[-3.0])
    t = 0.25
    expected = (1.0 / np.cosh(0.0)) * 0.25 ** t * np.sin(2 * np.pi * 13 * t) + \
        (1.0 / np.cosh(-6.0)) * 2 ** t * np.sin(2 * np.pi * 8 * t)
    assert trial.data[0, 1] == pytest.approx(expected, abs=1e-12)


def test_fig1_rejects_bad_parameters():
    with pytest.raises(InvalidArgumentError):
        generate_fig1_signal(dt=0.0, duration=0.5, positions=[0.0])
    with pytest.raises(InvalidArgumentError):
        generate_fig1_signal(dt=0.001, duration=0.5, positions=[np.nan])


def test_class_dataset_is_balanced_and_deterministic():
    first = generate_class_dataset(3, 40, P=8, L=50, dt=0.001, seed=11)
    second = generate_class_dataset(3, 40, P=8, L=50, dt=0.001, seed=11)
    assert len(first) == 120
    assert np.bincount(first.labels).tolist() == [40, 40, 40]
    for a, b in zip(first.trials, second.trials):
        assert np.array_equal(a.data, b.data)


def test_noiseless_class_trials_are_identical():
    dataset = generate_class_dataset(2, 3, P=5, L=40, dt=0.001, seed=0, noise=0.0)
    same_class = [t.data for t, label in zip(dataset.trials, dataset.labels) if label == 0]
    assert all(np.array_equal(same_class[0], other) for other in same_class[1:])


def test_common_average_reference_two_channels():
    trial = TrialMatrix(data=np.array([[3.0, 1.0], [1.0, 5.0]]), dt=0.01)
    referenced = common_average_reference(trial)
    assert np.allclose(referenced.data, [[1.0, -2.0], [-1.0, 2.0]])


def test_common_average_reference_identical_channels(rng):
    wave = rng.standard_normal(20)
    referenced = common_average_reference(TrialMatrix(data=np.tile(wave, (4, 1)), dt=0.01))
    assert np.all(referenced.data == 0.0)


def test_common_average_reference_zero_column_mean(rng):
    referenced = common_average_reference(TrialMatrix(data=rng.standard_normal((4, 10)), dt=0.01))
    assert np.all(np.abs(referenced.data.mean(axis=0)) < 1e-12)


def test_common_average_reference_is_idempotent(rng):
    once = common_average_reference(TrialMatrix(data=rng.standard_normal((6, 40)), dt=0.01))
    twice = common_average_reference(once)
    assert np.allclose(twice.data, once.data, atol=1e-12)


@pytest.mark.parametrize("P,L,h", [(81, 500, 7), (60, 500, 9), (10, 5, 1), (6, 5, 1)])
def test_choose_stack_factor(P, L, h):
    assert choose_stack_factor(P, L) == h


def test_stack_factor_is_nonincreasing_in_channels():
    for L in (5, 60, 200, 500):
        factors = [choose_stack_factor(P, L) for P in range(1, 201)]
        assert all(b <= a for a, b in zip(factors, factors[1:]))


def test_hankel_stack_by_hand():
    pair = hankel_stack(TrialMatrix(data=np.array([[1.0, 2.0, 3.0, 4.0]]), dt=1.0), 2)
    assert np.array_equal(pair.X, [[1, 2], [2, 3]])
    assert np.array_equal(pair.Xp, [[2, 3], [3, 4]])


def test_hankel_stack_columns_and_shift(fig1):
    pair = hankel_stack(fig1, 7)
    assert pair.n_columns == 493
    assert np.array_equal(pair.Xp[:, :-1], pair.X[:, 1:])


def test_hankel_stack_unstacked(rng):
    data = rng.standard_normal((3, 8))
    pair = hankel_stack(TrialMatrix(data=data, dt=0.1), 1)
    assert np.array_equal(pair.X, data[:, :-1])
    assert np.array_equal(pair.Xp, data[:, 1:])


def test_hankel_stack_too_short():
    with pytest.raises(InvalidArgumentError):
        hankel_stack(TrialMatrix(data=np.ones((2, 3)), dt=0.1), 3)


def test_trial_matrix_validation():
    with pytest.raises(InvalidArgumentError):
        TrialMatrix(data=np.ones((2, 1)), dt=0.1)
    with pytest.raises(InvalidArgumentError):
        TrialMatrix(data=np.array([[1.0, np.inf]]), dt=0.1)
    with pytest.raises(InvalidArgumentError):
        TrialMatrix(data=np.ones((2, 4)), dt=-1.0)


def test_dataset_rejects_mixed_channel_counts():
    trials = [TrialMatrix(data=np.ones((2, 4)), dt=0.1), TrialMatrix(data=np.ones((3, 4)), dt=0.1)]
    with pytest.raises(InvalidArgumentError):
        Dataset(trials=trials)
