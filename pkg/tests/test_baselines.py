"""Tests for the ordinary and frequency-domain comparison methods."""

import numpy as np
import pytest

from dpca.baselines import (
    BdpcModel,
    SmoothingSpec,
    bdpc_fit,
    bdpc_reconstruct,
    bdpc_scores,
    estimate_cross_spectrum,
    leading_eigenvectors,
    opc_fit,
    opc_reconstruct_lagged,
)
from dpca.core import SeriesPanel, total_variance
from dpca.errors import ConfigError, ShapeError
from dpca.simulation import generate_factor_panel, generate_panel


def _random_panel(T=120, m=3, seed=0):
    rng = np.random.default_rng(seed)
    return SeriesPanel(rng.standard_normal((T, m)) @ rng.standard_normal((m, m)) + 1.0)


def test_opc_eigen_decomposition():
    """Test descending eigenvalues, orthonormal loadings and centered scores."""
    panel = _random_panel()

    opc = opc_fit(panel, p=2)

    assert np.all(np.diff(opc.eigenvalues) <= 0)
    assert np.allclose(opc.loadings.T @ opc.loadings, np.eye(2), atol=1e-12)
    assert np.allclose(opc.scores, (panel.values - panel.values.mean(axis=0)) @ opc.loadings)


def test_opc_rejects_too_many_components():
    """Test that p cannot exceed the number of series."""
    with pytest.raises(ShapeError):
        opc_fit(_random_panel(m=2), p=3)


def test_opc_order_zero_mse_is_residual_eigenvalues():
    """Test that regressing on the first scores leaves the trailing eigenvalues."""
    panel = _random_panel(seed=1)
    opc = opc_fit(panel)

    fitted, value = opc_reconstruct_lagged(panel, opc.scores[:, 0], 0)

    assert fitted.T == panel.T
    assert abs(value - opc.eigenvalues[1:].sum()) < 1e-10


def test_opc_lagged_regression_drops_trailing_rows():
    """Test that k leads leave T-k rows and never fit worse than k=0 on them."""
    panel = generate_panel(100, seed=2)
    scores = opc_fit(panel).scores[:, 0]

    fitted, value = opc_reconstruct_lagged(panel, scores, 5)

    assert fitted.T == 95
    assert value < opc_reconstruct_lagged(panel, scores, 0)[1]


def test_cross_spectrum_integrates_to_covariance():
    """Test that the smoothed spectra sum to the population covariance."""
    panel = _random_panel(T=64, m=3, seed=3)
    centered = panel.values - panel.values.mean(axis=0)

    spectrum = estimate_cross_spectrum(panel, SmoothingSpec(span=5))

    total = spectrum.cross_spectra.sum(axis=0) * 2 * np.pi / panel.T
    assert np.allclose(total, centered.T @ centered / panel.T, atol=1e-12)
    assert spectrum.hermitian_error() == 0.0


def test_white_noise_spectrum_is_flat():
    """Test that independent white noise has density close to 1/(2 pi)."""
    panel = SeriesPanel(np.random.default_rng(4).standard_normal((8192, 2)))

    spectrum = estimate_cross_spectrum(panel, SmoothingSpec(span=801))

    density = spectrum.cross_spectra[:, 0, 0].real * 2 * np.pi
    assert np.all(np.abs(density - 1.0) < 0.25)
    assert np.abs(spectrum.cross_spectra[:, 0, 1]).max() * 2 * np.pi < 0.25


def test_one_step_shift_gives_linear_phase():
    """Test that delaying a series by one step turns the cross spectrum phase by the frequency."""
    T = 1024
    x = np.random.default_rng(6).standard_normal(T)
    panel = SeriesPanel(np.column_stack([x, np.roll(x, 1)]))

    spectrum = estimate_cross_spectrum(panel)

    # the smoothed phase stays within half a window of the frequency
    half_window = (spectrum.span // 2) * 2 * np.pi / T
    interior = np.arange(1, T // 2 - spectrum.span)
    phase = np.angle(spectrum.cross_spectra[interior, 0, 1])
    assert np.all(np.abs(phase - spectrum.frequencies[interior]) <= half_window + 1e-12)


def test_default_span_is_odd_root_of_length():
    """Test the default Daniell span and its width check."""
    assert SmoothingSpec().width(100) == 11
    assert SmoothingSpec().width(50) == 7
    with pytest.raises(ConfigError):
        SmoothingSpec(span=7).width(10)


def test_tapered_spectrum_stays_hermitian():
    """Test that a tapered estimate keeps exact Hermitian symmetry."""
    spectrum = estimate_cross_spectrum(_random_panel(T=90, seed=5), SmoothingSpec(taper=0.2))

    assert spectrum.hermitian_error() == 0.0


def test_leading_eigenvectors_are_conjugate_symmetric():
    """Test the Hermitian extension and the real zero frequency."""
    panel = _random_panel(T=40, seed=6)

    vectors = leading_eigenvectors(estimate_cross_spectrum(panel))

    assert np.allclose(vectors[1:], np.conj(vectors[1:][::-1]))
    assert np.all(vectors[0].imag == 0)
    assert np.allclose(np.linalg.norm(vectors, axis=1), 1.0)


def test_bdpc_order_zero_is_no_better_than_first_component():
    """Test that a zero-lag frequency filter cannot beat the best rank-one fit."""
    panel = _random_panel(T=100, seed=7)

    _, value = bdpc_reconstruct(panel, bdpc_fit(panel, 0))

    assert value >= opc_fit(panel).eigenvalues[1:].sum() - 1e-10


def test_bdpc_conventions():
    """Test that the eigenvector convention reverses c and projection copies it."""
    panel = generate_factor_panel(100, 3, lags=2, seed=8)

    eigen = bdpc_fit(panel, 3)
    projection = bdpc_fit(panel, 3, convention="projection")

    assert np.allclose(eigen.b, eigen.c[::-1])
    assert np.allclose(projection.b, projection.c)
    assert eigen.c.shape == (7, 3)


def test_bdpc_rejects_bad_arguments():
    """Test the lag range and convention checks."""
    panel = _random_panel(T=30)

    with pytest.raises(ConfigError):
        bdpc_fit(panel, 15)
    with pytest.raises(ConfigError):
        bdpc_fit(panel, -1)
    with pytest.raises(ConfigError):
        bdpc_fit(panel, 2, convention="other")


def test_bdpc_filter_and_reconstruction_by_hand():
    """Test scores and reconstruction against explicit sums over the sample."""
    rng = np.random.default_rng(9)
    panel = SeriesPanel(rng.standard_normal((6, 2)))
    c = rng.standard_normal((3, 2))
    b = rng.standard_normal((3, 2))
    means = panel.values.mean(axis=0)
    model = BdpcModel(M=1, c=c, b=b, means=means)
    z = panel.values - means

    f = bdpc_scores(panel, model)
    fitted, value = bdpc_reconstruct(panel, model)

    expected_f = np.zeros(6)
    for t in range(6):
        for k in (-1, 0, 1):
            if 0 <= t - k <= 5:
                expected_f[t] += z[t - k] @ c[1 + k]
    expected = np.tile(means, (6, 1))
    for t in range(6):
        for j in (-1, 0, 1):
            if 0 <= t + j <= 5:
                expected[t] += expected_f[t + j] * b[1 + j]
    assert np.allclose(f, expected_f)
    assert np.allclose(fitted.values, expected)
    assert abs(value - np.sum((panel.values - expected) ** 2) / 6) < 1e-12


def test_bdpc_model_must_match_panel():
    """Test that a filter for other series is rejected."""
    model = BdpcModel(M=0, c=np.ones((1, 3)), b=np.ones((1, 3)), means=np.zeros(3))

    with pytest.raises(ShapeError):
        bdpc_scores(_random_panel(m=2), model)


def test_bdpc_on_isotropic_noise_leaves_most_variance():
    """Test that one component of i.i.d. noise leaves about (m-1)/m of the variance."""
    m = 20
    panel = SeriesPanel(np.random.default_rng(7).standard_normal((2000, m)))

    _, error = bdpc_reconstruct(panel, bdpc_fit(panel, 10))

    expected = (m - 1) / m * total_variance(panel)
    assert 0.75 * expected <= error <= 1.25 * expected
