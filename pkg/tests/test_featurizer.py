import numpy as np
import pytest

from core.errors import ConfigError, InvalidArgumentError
from core.features import feature_map
from core.featurizer import FeatureBank, FeatureSpec, clip_rank_grid, feature_length, featurize_trial
from core.models import FeatureLayout


def test_fig1_sndm_length(fig1):
    vector = featurize_trial(fig1, 10, FeatureSpec(layout=FeatureLayout.SNDM), trial_id="fig1")
    assert len(vector) == 81
    assert vector.provenance()["rank"] == 10
    assert vector.trial_id == "fig1"


@pytest.mark.parametrize("spec,length", [
    (FeatureSpec(layout=FeatureLayout.SNDM_SEDM), 210),
    (FeatureSpec(layout=FeatureLayout.BAND_CONCATENATED), 160),
    (FeatureSpec(layout=FeatureLayout.FULL_VEC), 400),
    (FeatureSpec(layout=FeatureLayout.BAND_POWER), 20),
])
def test_feature_length_for_twenty_channels(spec, length):
    assert feature_length(spec, 20) == length


def test_band_concatenated_vector_length(class_dataset):
    trial = class_dataset.trials[0]
    vector = featurize_trial(trial, 4, FeatureSpec(layout=FeatureLayout.BAND_CONCATENATED))
    assert len(vector) == 8 * trial.n_channels
    assert len(vector.bands) == 8


def test_band_power_ignores_rank(class_dataset):
    spec = FeatureSpec(layout=FeatureLayout.BAND_POWER, bands=((80.0, 150.0), (8.0, 13.0)))
    vector = featurize_trial(class_dataset.trials[0], None, spec)
    assert len(vector) == 2 * class_dataset.n_channels
    assert not spec.uses_rank


def test_rank_required_for_mode_layouts(class_dataset):
    with pytest.raises(InvalidArgumentError):
        featurize_trial(class_dataset.trials[0], None, FeatureSpec())


def test_spec_names_and_validation():
    gram = FeatureSpec.from_name("gram")
    assert gram.kernel and gram.layout == FeatureLayout.FULL_VEC
    assert FeatureSpec.from_name("snDM+seDM").layout == FeatureLayout.SNDM_SEDM
    with pytest.raises(ConfigError):
        FeatureSpec(layout=FeatureLayout.SNDM, kernel=True)
    with pytest.raises(ConfigError):
        FeatureSpec(layout=FeatureLayout.BAND_CONCATENATED, inner_layout=FeatureLayout.SDM)


def test_clip_rank_grid():
    assert clip_rank_grid([25, 50, 100], 40) == (25, 40)


def test_bank_features_and_gram(class_dataset):
    bank = FeatureBank(class_dataset, FeatureSpec(layout=FeatureLayout.FULL_VEC, kernel=True))
    gram = bank.gram(4)
    psi = np.vstack([feature_map(m) for m in bank.mode_sets(4)])
    assert gram.shape == (len(class_dataset), len(class_dataset))
    assert np.allclose(gram, psi @ psi.T, rtol=1e-9)
    assert bank.features(4).shape == (len(class_dataset), class_dataset.n_channels ** 2)


def test_bank_rank_grid_is_clipped(class_dataset):
    bank = FeatureBank(class_dataset, FeatureSpec())
    assert bank.rank_grid([2, 10_000]) == (2, bank.available_rank)
    assert FeatureBank(class_dataset, FeatureSpec(layout=FeatureLayout.BAND_POWER)).rank_grid([5]) == (None,)


def test_with_spec_shares_decompositions(class_dataset):
    bank = FeatureBank(class_dataset, FeatureSpec())
    bank.features(3)
    other = bank.with_spec(FeatureSpec(layout=FeatureLayout.SEDM))
    assert other.decomposers() is bank.decomposers()
    referenced = bank.with_spec(FeatureSpec(car=True))
    assert referenced.decomposers() is not bank.decomposers()


def test_bank_matches_per_trial_featurization(class_dataset):
    spec = FeatureSpec(layout=FeatureLayout.SNDM_SEDM, car=True)
    bank = FeatureBank(class_dataset, spec, workers=2)
    expected = featurize_trial(class_dataset.trials[5], 3, spec).values
    assert np.allclose(bank.features(3)[5], expected)
