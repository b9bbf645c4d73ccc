"""Tests for M-scales and S-estimator dynamic principal components."""

from dataclasses import replace

import numpy as np
import pytest

from dpca.core import SeriesPanel, SolverConfig, mse, normalize_factor
from dpca.errors import ConfigError, ExactFitError, ShapeError
from dpca.robust import (
    MScaleSpec,
    RobustFitState,
    RobustOptions,
    RobustWeights,
    fit_s,
    fit_s_component,
    m_scale,
    robust_weights,
    scales_of_residuals,
    spherical_scores,
    srs,
    update_beta_alpha_robust,
    update_f_robust,
)
from dpca.simulation import contaminate, generate_factor_panel
from dpca.solver import fit_component, update_beta_alpha, update_f

SQUARE = MScaleSpec(family="square", b=1.0)


def _state(panel, k, scales, seed=0):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(panel.T + k)
    beta, alpha = update_beta_alpha(panel, f, k)
    return RobustFitState(k=k, f=f, beta=beta, alpha=alpha, scales=np.asarray(scales, dtype=float))


def test_rho_is_bounded_by_one():
    """Test that the biweight rho rises from 0 to 1 at the cutoff and stays there."""
    spec = MScaleSpec()

    values = spec.rho(np.array([0.0, spec.c / 2, spec.c, 2 * spec.c, -3 * spec.c]))

    assert values[0] == 0.0
    assert 0.0 < values[1] < 1.0
    assert values[2:].tolist() == [1.0, 1.0, 1.0]


def test_weight_is_derivative_over_argument():
    """Test that weight(u) * u matches the numerical derivative of rho."""
    spec = MScaleSpec(c=2.0)
    u = np.array([0.3, 1.1, 1.9, -0.7])
    h = 1e-6

    derivative = (spec.rho(u + h) - spec.rho(u - h)) / (2 * h)

    assert np.allclose(spec.weight(u) * u, derivative, atol=1e-6)
    assert spec.weight(np.array([0.0]))[0] == spec.max_weight
    assert spec.weight(np.array([2.5]))[0] == 0.0


def test_square_scale_is_root_mean_square():
    """Test that rho(x) = x**2 with b = 1 gives the root mean square."""
    x = np.array([3.0, -4.0, 0.0, 5.0])

    assert abs(m_scale(x, SQUARE) - np.sqrt(np.mean(x**2))) < 1e-14


def test_biweight_scale_solves_its_equation():
    """Test that the returned scale satisfies mean rho(x / s) = b."""
    spec = MScaleSpec()
    x = np.random.default_rng(0).standard_normal(500)

    s = m_scale(x, spec)

    assert s > 0
    assert abs(np.mean(spec.rho(x / s)) - spec.b) < 1e-9


def test_scale_is_equivariant():
    """Test that scaling the residuals scales the M-scale."""
    x = np.random.default_rng(1).standard_normal(200)

    assert abs(m_scale(3.5 * x) - 3.5 * m_scale(x)) < 1e-9 * m_scale(x)


def test_scale_resists_a_gross_outlier():
    """Test that one huge residual barely moves the biweight scale."""
    x = np.random.default_rng(2).standard_normal(200)
    y = x.copy()
    y[0] = 1e6

    assert m_scale(y) < 1.2 * m_scale(x)


def test_mostly_zero_residuals_have_zero_scale():
    """Test that at most a fraction b of non-zero residuals gives scale 0."""
    x = np.zeros(100)
    x[:10] = 5.0

    assert m_scale(x) == 0.0


def test_mscale_spec_validation():
    """Test that invalid families and breakdown targets are rejected."""
    with pytest.raises(ConfigError):
        MScaleSpec(family="huber")
    with pytest.raises(ConfigError):
        MScaleSpec(b=1.0)
    with pytest.raises(ConfigError):
        MScaleSpec(c=0.0)
    with pytest.raises(ConfigError):
        RobustOptions(weight_window="half")


def test_full_window_weights():
    """Test that the full window divides by the weighted sum over every observation."""
    panel = generate_factor_panel(30, 3, seed=3)
    state = _state(panel, 0, [1.5, 2.0, 2.5])
    spec = MScaleSpec()

    weights = robust_weights(panel, state, spec, RobustOptions(weight_window="full"))

    residuals = state.residuals(panel).T
    w = spec.weight(residuals / state.scales[:, None])
    expected = state.scales**2 / np.sum(w * residuals**2, axis=1)
    assert np.allclose(weights.w, w)
    assert np.allclose(weights.row_scale, np.repeat(expected[:, None], 30, axis=1))


def test_band_window_weights_for_order_zero():
    """Test that with k=0 the band window divides by the single touching observation."""
    panel = generate_factor_panel(30, 2, seed=4)
    state = _state(panel, 0, [2.0, 3.0])
    spec = MScaleSpec()

    weights = robust_weights(panel, state, spec, RobustOptions(weight_window="band"))

    residuals = state.residuals(panel).T
    weighted = spec.weight(residuals / state.scales[:, None]) * residuals**2
    expected = np.divide(
        state.scales[:, None] ** 2 * np.ones_like(weighted),
        weighted,
        out=np.zeros_like(weighted),
        where=weighted > 0,
    )
    assert np.allclose(weights.row_scale, expected)


def test_zero_scale_raises_exact_fit_with_label():
    """Test that a zero M-scale names the series it belongs to."""
    panel = SeriesPanel(np.random.default_rng(5).standard_normal((20, 2)), ("north", "south"))
    state = _state(panel, 1, [1.0, 0.0])

    with pytest.raises(ExactFitError) as excinfo:
        robust_weights(panel, state)

    assert "south" in str(excinfo.value)


def test_unit_weights_reduce_to_least_squares():
    """Test that unit weights give the ordinary loading and factor updates."""
    panel = generate_factor_panel(40, 3, lags=1, seed=6)
    f = np.random.default_rng(6).standard_normal(41)

    beta, alpha = update_beta_alpha_robust(panel, f, np.ones((3, 40)))
    ls_beta, ls_alpha = update_beta_alpha(panel, f, 1)
    assert np.allclose(beta, ls_beta, atol=1e-10)
    assert np.allclose(alpha, ls_alpha, atol=1e-10)

    weights = RobustWeights(w=np.ones((3, 40)), row_scale=np.ones((3, 41)))
    state = RobustFitState(k=1, f=f, beta=beta, alpha=alpha, scales=np.ones(3), weights=weights)
    assert np.allclose(update_f_robust(panel, state), update_f(panel, beta, alpha), atol=1e-8)


def test_factor_update_needs_weights():
    """Test that the weighted factor update refuses a state without weights."""
    panel = generate_factor_panel(20, 2, seed=7)

    with pytest.raises(ShapeError):
        update_f_robust(panel, _state(panel, 1, [1.0, 1.0]))


def test_square_loss_reduces_to_mse_fit():
    """Test that the square family with b = 1 reproduces the MSE solver."""
    panel = generate_factor_panel(80, 4, lags=1, seed=8)
    config = SolverConfig(k=1, epsilon=1e-8)

    robust = fit_s_component(panel, config, SQUARE, RobustOptions(weight_window="full"))
    plain = fit_component(panel, config)

    assert abs(robust.convergence.criterion - mse(panel, plain)) < 1e-6 * mse(panel, plain)
    assert abs(srs(panel, robust, SQUARE) - mse(panel, robust)) < 1e-10 * mse(panel, robust)
    assert np.allclose(robust.f, plain.f, atol=1e-4)


def test_component_keeps_best_iterate():
    """Test that the reported criterion is the smallest SRS visited."""
    panel = generate_factor_panel(60, 3, lags=1, seed=9)

    component = fit_s_component(panel, SolverConfig(k=1, max_iter=30))

    assert component.convergence.criterion == min(component.convergence.history)
    assert abs(srs(panel, component) - component.convergence.criterion) < 1e-8 * component.convergence.criterion
    assert component.scales.shape == (3,)


def test_robust_fit_resists_outliers():
    """Test that S-DPC beats DPC on SRS when cells are shifted far away."""
    clean = generate_factor_panel(150, 5, lags=1, noise=0.3, seed=10)
    dirty, mask = contaminate(clean, 0.05, 20.0, seed=10)
    config = SolverConfig(k=1)

    robust = fit_s_component(dirty, config)
    plain = fit_component(dirty, config)

    assert mask.any()
    assert srs(dirty, robust) < srs(dirty, plain)


def test_fit_s_builds_robust_model():
    """Test that successive S-DPCs carry scales and the M-scale settings."""
    panel = generate_factor_panel(70, 3, lags=1, seed=11)

    model = fit_s(panel, SolverConfig(k=1, p=2, max_iter=20))

    assert model.robust
    assert model.p == 2
    assert all(component.scales is not None for component in model.components)


def test_spherical_scores_shape():
    """Test that spherical scores have one entry per observation."""
    values = np.random.default_rng(12).standard_normal((25, 4))

    assert spherical_scores(values).shape == (25,)


def test_biweight_scale_is_consistent_for_normal_data():
    """Test that the default biweight scale estimates the normal standard deviation."""
    x = np.random.default_rng(13).standard_normal(10_000)

    assert 0.95 <= m_scale(x) <= 1.05


def test_equal_magnitude_scale_matches_bisection():
    """Test residuals of equal magnitude against a scalar bisection."""
    spec = MScaleSpec()
    x = np.array([1.0, -1.0, 1.0, 1.0, -1.0])

    low, high = 0.01, 100.0
    for _ in range(200):
        mid = 0.5 * (low + high)
        if spec.rho(np.array([1.0 / mid]))[0] > spec.b:
            low = mid
        else:
            high = mid

    assert abs(m_scale(x, spec) - 0.5 * (low + high)) < 1e-10


def _scaled_state(panel, k, seed=0):
    state = _state(panel, k, np.ones(panel.m), seed)
    return replace(state, scales=scales_of_residuals(state.residuals(panel)))


def _dense_lead_operator(beta_row, T):
    k = beta_row.shape[0] - 1
    operator = np.zeros((T, T + k))
    for v in range(T):
        operator[v, v : v + k + 1] = beta_row
    return operator


@pytest.mark.parametrize("window", ["full", "band"])
def test_weight_tensor_matches_loop(window):
    """Test W[j, t, v] = s_j**2 * w[j, v] / sum of w * r**2 over the window of t."""
    panel = generate_factor_panel(25, 3, lags=2, seed=15)
    k = 2
    state = _scaled_state(panel, k, seed=15)

    weights = robust_weights(panel, state, options=RobustOptions(weight_window=window))

    residuals = state.residuals(panel)
    spec = MScaleSpec()
    w = spec.weight(residuals / state.scales)
    expected = np.zeros((panel.m, panel.T + k, panel.T))
    for j in range(panel.m):
        for t in range(panel.T + k):
            window_range = range(panel.T) if window == "full" else range(max(t - k, 0), min(t, panel.T - 1) + 1)
            denominator = sum(w[h, j] * residuals[h, j] ** 2 for h in window_range)
            for v in range(panel.T):
                expected[j, t, v] = state.scales[j] ** 2 * w[v, j] / denominator if denominator > 0 else 0.0

    assert np.allclose(weights.tensor(), expected, rtol=1e-12, atol=0.0)


@pytest.mark.parametrize("window", ["full", "band"])
def test_weighted_factor_update_matches_dense_equations(window):
    """Test the banded weighted factor solve against sum_j R_j B_j' W_j B_j f = sum_j R_j B_j' W_j (z_j - alpha_j)."""
    panel = generate_factor_panel(30, 3, lags=2, seed=16)
    k = 2
    state = _scaled_state(panel, k, seed=16)
    weights = robust_weights(panel, state, options=RobustOptions(weight_window=window))

    n = panel.T + k
    system = np.zeros((n, n))
    rhs = np.zeros(n)
    for j in range(panel.m):
        lead = _dense_lead_operator(state.beta[j], panel.T)
        row_scale = np.diag(weights.row_scale[j])
        weighted = lead.T * weights.w[j]
        system += row_scale @ weighted @ lead
        rhs += row_scale @ weighted @ (panel.values[:, j] - state.alpha[j])

    f = update_f_robust(panel, replace(state, weights=weights))

    assert np.allclose(f, np.linalg.solve(system, rhs), rtol=0.0, atol=1e-10 * np.abs(f).max())


def test_zero_weight_outlier_has_no_influence():
    """Test that a zero-weighted observation moved by 1e6 leaves the regression unchanged."""
    panel = generate_factor_panel(50, 3, lags=1, seed=14)
    rng = np.random.default_rng(14)
    f = rng.standard_normal(51)
    w = rng.uniform(0.2, 1.0, size=(3, 50))
    w[1, 17] = 0.0
    values = panel.values.copy()
    values[17, 1] += 1e6

    clean_beta, clean_alpha = update_beta_alpha_robust(panel, f, w)
    beta, alpha = update_beta_alpha_robust(panel.with_values(values), f, w)

    assert np.allclose(beta, clean_beta, rtol=0.0, atol=1e-8)
    assert np.allclose(alpha, clean_alpha, rtol=0.0, atol=1e-8)


def test_scale_stays_bounded_below_breakdown_fraction():
    """Test that replacing fewer than b * n residuals by +-1e6 moves the scale by less than a factor 10."""
    x = np.random.default_rng(17).standard_normal(1000)
    y = x.copy()
    y[:90] = 1e6 * np.where(np.arange(90) % 2 == 0, 1.0, -1.0)

    ratio = m_scale(y) / m_scale(x)

    assert 1.0 <= ratio < 10.0


def test_converged_robust_fit_is_a_fixed_point():
    """Test that one more weighted factor and loading update reproduces a converged S-DPC."""
    panel = generate_factor_panel(100, 3, lags=1, noise=0.5, seed=21)

    component = fit_s_component(panel, SolverConfig(k=1, epsilon=1e-14, max_iter=2000))

    state = RobustFitState(k=1, f=component.f, beta=component.beta, alpha=component.alpha, scales=component.scales)
    weights = robust_weights(panel, state)
    f = normalize_factor(update_f_robust(panel, replace(state, weights=weights)))
    beta, alpha = update_beta_alpha_robust(panel, component.f, weights)

    assert np.allclose(f, component.f, rtol=0.0, atol=1e-6)
    assert np.allclose(beta, component.beta, rtol=0.0, atol=1e-6)
    assert np.allclose(alpha, component.alpha, rtol=0.0, atol=1e-6)


def test_band_window_fit_with_leads():
    """Test an S-DPC fit with two leads and band-window weights."""
    panel = generate_factor_panel(80, 4, lags=2, noise=0.5, seed=22)

    component = fit_s_component(panel, SolverConfig(k=2, max_iter=30), options=RobustOptions(weight_window="band"))

    history = component.convergence.history
    assert component.f.shape == (82,)
    assert np.isfinite(component.beta).all()
    assert component.convergence.criterion == min(history)
    assert component.convergence.criterion <= history[0]
    assert abs(srs(panel, component) - component.convergence.criterion) < 1e-8 * component.convergence.criterion
