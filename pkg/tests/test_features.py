import numpy as np
import pytest

from core.dmd import decompose_trial
from core.errors import InvalidArgumentError
from core.features import (EDGE_ISOMETRY, STANDARD_BANDS, assemble_sdm, band_power, feature_map,
                           frequency_filtered_sdm, gram_matrix, kernel_row, projection_kernel, psd, sdm_features,
                           split_sn_se, vectorize)
from core.models import DmdResult, FeatureLayout, PsdMatrix, SdmFeatures, TrialMatrix


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _random_result(rng, n_channels, n_modes, dt=0.001):
    nyquist = 1.0 / (2 * dt)
    freqs = rng.uniform(-nyquist, nyquist, n_modes)
    freqs[0] = nyquist
    return DmdResult(modes=_complex(rng, (n_channels, n_modes)), eigenvalues=np.exp(2j * np.pi * freqs * dt),
                     frequencies=freqs, growth_rates=np.ones(n_modes), amplitudes=np.ones(n_modes, dtype=complex),
                     rank_used=n_modes, dt=dt)


def test_projection_kernel_of_orthonormal_set_is_its_size(rng):
    Q, _ = np.linalg.qr(_complex(rng, (6, 3)))
    assert projection_kernel(Q, Q) == pytest.approx(3.0)


def test_projection_kernel_of_orthogonal_spans_is_zero():
    identity = np.eye(4)
    assert projection_kernel(identity[:, :2], identity[:, 2:]) == 0.0


def test_projection_kernel_matches_double_loop(rng):
    A = _complex(rng, (5, 3))
    B = _complex(rng, (5, 3))
    expected = sum(abs(np.vdot(A[:, a], B[:, b])) ** 2 for a in range(3) for b in range(3))
    assert projection_kernel(A, B) == pytest.approx(expected, rel=1e-12)


def test_projection_kernel_rejects_channel_mismatch(rng):
    with pytest.raises(InvalidArgumentError):
        projection_kernel(_complex(rng, (4, 2)), _complex(rng, (5, 2)))


def test_kernel_equals_feature_map_inner_product():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        P = int(rng.integers(1, 51))
        A = _complex(rng, (P, int(rng.integers(1, 21))))
        B = _complex(rng, (P, int(rng.integers(1, 21))))
        value = projection_kernel(A, B)
        assert abs(value - feature_map(A) @ feature_map(B)) <= 1e-9 * max(1.0, value)


def test_gram_matrix_single_trial():
    modes = np.eye(5)[:, :2].astype(complex)
    assert np.array_equal(gram_matrix([modes]), [[2.0]])


def test_gram_matrix_is_symmetric_and_matches_feature_map(rng):
    mode_sets = [_complex(rng, (4, k)) for k in (2, 3, 1)]
    gram = gram_matrix(mode_sets)
    assert np.array_equal(gram, gram.T)
    psi = np.vstack([feature_map(m) for m in mode_sets])
    assert np.allclose(gram, psi @ psi.T, rtol=1e-9)


def test_kernel_row_matches_gram(rng):
    mode_sets = [_complex(rng, (4, 2)) for _ in range(3)]
    gram = gram_matrix(mode_sets)
    assert np.allclose(kernel_row(mode_sets[1], mode_sets), gram[1])


def test_single_real_mode_outer_product():
    phi = np.zeros((4, 1))
    phi[0, 0] = 1.0
    matrix = sdm_features(phi).matrix
    expected = np.zeros((4, 4))
    expected[0, 0] = 1.0
    assert np.array_equal(matrix, expected)


def test_conjugate_pair_gives_real_matrix(rng):
    phi = _complex(rng, (5, 1))
    features = sdm_features(np.hstack([phi, phi.conj()]))
    assert np.allclose(features.matrix, 2 * np.real(phi @ phi.conj().T))
    assert features.imaginary_residual < 1e-12


def test_sdm_follows_channel_permutations_and_ignores_mode_phases(rng):
    modes = _complex(rng, (7, 4))
    matrix = sdm_features(modes).matrix
    perm = rng.permutation(7)
    assert np.allclose(sdm_features(modes[perm]).matrix, matrix[np.ix_(perm, perm)])
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, 4))
    assert np.allclose(sdm_features(modes * phases).matrix, matrix)



def test_sdm_layout_reproduces_kernel_for_real_signals(fig1):
    result = decompose_trial(fig1, rank=10)
    vector = vectorize(sdm_features(result.modes), FeatureLayout.SDM)
    assert vector @ vector == pytest.approx(projection_kernel(result.modes, result.modes), rel=1e-9)


def test_split_identity():
    sndm, sedm = split_sn_se(SdmFeatures(matrix=np.eye(3), source_rank=3))
    assert np.array_equal(sndm.values, [1, 1, 1])
    assert np.array_equal(sedm.values, [0, 0, 0])


def test_split_two_channels_and_round_trip():
    matrix = np.array([[2.0, 7.0], [7.0, 3.0]])
    sndm, sedm = split_sn_se(SdmFeatures(matrix=matrix, source_rank=2))
    assert np.array_equal(sndm.values, [2.0, 3.0])
    assert np.array_equal(sedm.values, [7.0])
    assert np.array_equal(assemble_sdm(sndm.values, sedm.values), matrix)


def test_vectorize_lengths_and_scaling(rng):
    matrix = rng.standard_normal((5, 5))
    features = SdmFeatures(matrix=matrix + matrix.T, source_rank=5)
    assert len(vectorize(features, FeatureLayout.SNDM)) == 5
    assert len(vectorize(features, FeatureLayout.SEDM)) == 10
    assert len(vectorize(features, FeatureLayout.SNDM_SEDM)) == 15
    assert len(vectorize(features, FeatureLayout.FULL_VEC)) == 25
    sdm = vectorize(features, FeatureLayout.SDM)
    assert np.allclose(sdm[5:], EDGE_ISOMETRY * vectorize(features, FeatureLayout.SEDM))
    with pytest.raises(InvalidArgumentError):
        vectorize(features, FeatureLayout.BAND_POWER)


def test_fig1_bands_split_the_two_oscillators(fig1):
    result = decompose_trial(fig1, rank=10)
    low, high = frequency_filtered_sdm(result, [(0.0, 10.0), (10.0, 500.0)])
    slow = np.abs(np.abs(result.frequencies) - 8.0) < 0.1
    assert np.allclose(low.matrix, sdm_features(result.modes[:, slow]).matrix)
    assert np.allclose(high.matrix, sdm_features(result.modes[:, ~slow]).matrix)


def test_empty_band_is_zero_matrix(fig1):
    result = decompose_trial(fig1, rank=10)
    (empty,) = frequency_filtered_sdm(result, [(100.0, 200.0)])
    assert empty.matrix.shape == (81, 81)
    assert np.all(empty.matrix == 0)


def test_bands_partitioning_nyquist_sum_to_unfiltered():
    rng = np.random.default_rng(7)
    for _ in range(100):
        result = _random_result(rng, int(rng.integers(2, 8)), int(rng.integers(1, 10)))
        total = sum(f.matrix for f in frequency_filtered_sdm(result, STANDARD_BANDS))
        assert np.max(np.abs(total - sdm_features(result.modes).matrix)) <= 1e-10


def test_overlapping_bands_rejected(fig1):
    result = decompose_trial(fig1, rank=10)
    with pytest.raises(InvalidArgumentError):
        frequency_filtered_sdm(result, [(0.0, 10.0), (5.0, 20.0)])


def test_psd_peak_of_bin_centred_sine():
    dt = 1.0 / 512
    t = np.arange(512) * dt
    spectrum = psd(TrialMatrix(data=np.sin(2 * np.pi * 64 * t)[None, :], dt=dt), nfft=512)
    power = spectrum.values[0]
    peak = int(np.argmax(power))
    assert spectrum.freqs[peak] == pytest.approx(64.0)
    far = np.abs(np.arange(len(power)) - peak) >= 2
    assert 10 * np.log10(power[peak] / power[far].max()) >= 20


def test_psd_of_zero_trial_is_zero():
    spectrum = psd(TrialMatrix(data=np.zeros((2, 100)), dt=0.001))
    assert np.all(spectrum.values == 0)
    assert spectrum.window == "hamming"


def test_psd_parseval_with_window_correction(rng):
    data = rng.standard_normal((1, 512))
    spectrum = psd(TrialMatrix(data=data, dt=0.001), nfft=512)
    window = np.hamming(512)
    expected = np.sum((data[0] * window) ** 2) / np.sum(window ** 2)
    assert spectrum.values[0].sum() == pytest.approx(expected, rel=0.02)


def _flat(values, freqs):
    return PsdMatrix(values=np.atleast_2d(values), freqs=np.asarray(freqs, dtype=float), nfft=2 * (len(freqs) - 1))


def test_band_power_of_flat_spectrum():
    spectrum = _flat(np.full(5, 3.0), [0, 10, 20, 30, 40])
    assert band_power(spectrum, (10.0, 30.0)).values[0] == pytest.approx(3.0)


def test_band_power_full_axis_and_two_bins():
    spectrum = _flat([1.0, 4.0, 6.0, 9.0], [0, 10, 20, 30])
    assert band_power(spectrum, (0.0, 30.0)).values[0] == pytest.approx(5.0)
    assert band_power(spectrum, (10.0, 20.0)).values[0] == pytest.approx(5.0)


def test_band_power_outside_axis():
    with pytest.raises(InvalidArgumentError):
        band_power(_flat([1.0, 2.0], [0, 10]), (20.0, 30.0))
