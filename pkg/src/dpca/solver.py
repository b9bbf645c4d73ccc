"""Alternating least-squares fit of MSE dynamic principal components.

Each iteration alternates two exact conditional minimizations:

1. loadings and intercepts by per-series least squares on the lead matrix of f
2. the factor by solving the banded normal equations D(beta) f = sum_j C_j beta_j,
   followed by centering and rescaling f to unit mean square
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
from scipy.linalg import eigh, lstsq

from .banded import BandedSystem, gram_bands
from .core import (
    Convergence,
    DpcComponent,
    DpcModel,
    SeriesPanel,
    SolverConfig,
    design_matrix,
    lead_matrix,
    normalize_factor,
    orient,
    panel_mse,
)
from .errors import DegenerateFitError, InputError, ShapeError

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10


def band_stack(series: np.ndarray, k: int) -> np.ndarray:
    """Place each row of an m x T array on the k+1 shifted columns of an m x (T+k) x (k+1) band.

    ``out[j, t, i] = series[j, t - i]`` when 0 <= t-i <= T-1 and 0 otherwise.
    """
    m, T = series.shape
    out = np.zeros((m, T + k, k + 1))
    for i in range(k + 1):
        out[:, i : i + T, i] = series
    return out


def build_c(panel: SeriesPanel, alpha: np.ndarray, k: int) -> np.ndarray:
    """Stack the m band matrices C_j of shape (T+k) x (k+1).

    ``C[j, t, i] = z[t - i, j] - alpha[j]`` when 0 <= t-i <= T-1 and 0 otherwise,
    so row t holds the centered observations that f[t] multiplies.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.shape[0] != panel.m:
        raise ShapeError(f"alpha has {alpha.shape[0]} entries for {panel.m} series")
    if k < 0:
        raise ShapeError(f"k must be non-negative, got {k}")
    return band_stack((panel.values - alpha).T, k)


def build_d(beta: np.ndarray, T: int) -> BandedSystem:
    """Banded Gram matrix D = sum_j B_j' B_j of the factor normal equations."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if not np.isfinite(beta).all():
        raise InputError("beta holds non-finite values")
    upper, _ = gram_bands(beta, T)
    return BandedSystem(upper)


def factor_rhs(c: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Right-hand side sum_j C_j beta_j."""
    return np.einsum("jti,ji->t", c, beta)


def update_f(panel: SeriesPanel, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Factor minimizing the MSE for fixed loadings and intercepts.

    The result is not normalized.

    Raises:
        DegenerateFitError: If D(beta) is singular even after one jitter retry
    """
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if beta.shape[0] != panel.m:
        raise ShapeError(f"beta has {beta.shape[0]} rows for {panel.m} series")
    k = beta.shape[1] - 1
    system = build_d(beta, panel.T)
    rhs = factor_rhs(build_c(panel, alpha, k), beta)
    return system.solve(rhs, cause=_singularity_cause(beta))


def _singularity_cause(beta: np.ndarray) -> str:
    if beta.shape[1] > 1 and np.linalg.matrix_rank(beta) < min(beta.shape):
        return "loading columns are proportional"
    if not np.any(beta):
        return "all loadings are zero"
    return ""


def update_beta_alpha(panel: SeriesPanel, f: np.ndarray, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-series least squares of each series on (f[t], ..., f[t+k], 1).

    Args:
        panel: Observed panel
        f: Factor of length T+k
        k: Number of leads; inferred from len(f) - T when omitted

    Returns:
        (beta, alpha) with beta of shape m x (k+1)

    Raises:
        DegenerateFitError: If the design matrix is rank deficient
    """
    f = np.asarray(f, dtype=float).ravel()
    k = f.shape[0] - panel.T if k is None else k
    if k < 0:
        raise ShapeError(f"factor of length {f.shape[0]} is shorter than T={panel.T}")
    design = design_matrix(f, k, panel.T)
    if panel.T < k + 2:
        raise DegenerateFitError(f"T={panel.T} observations cannot identify {k + 2} regression coefficients")
    coef, _, rank, sv = lstsq(design, panel.values, lapack_driver="gelsd", cond=RANK_TOLERANCE)
    if rank < k + 2:
        raise DegenerateFitError(
            f"lead matrix of the factor has rank {rank} < {k + 2}; the factor is constant or too short"
        )
    return coef[:-1].T.copy(), coef[-1].copy()


def principal_scores(values: np.ndarray) -> np.ndarray:
    """Scores of the first classical principal component of the column-centered values."""
    centered = values - values.mean(axis=0)
    covariance = centered.T @ centered / values.shape[0]
    m = covariance.shape[0]
    _, vectors = eigh(covariance, subset_by_index=[m - 1, m - 1])
    return centered @ vectors[:, 0]


def initial_factor(panel: SeriesPanel, config: SolverConfig) -> np.ndarray:
    """Starting factor of length T+k; the k trailing entries are zero."""
    T, k = panel.T, config.k
    if config.init == "user":
        start = np.asarray(config.init_vector, dtype=float).ravel()
        if start.shape[0] == T + k:
            return start.copy()
        if start.shape[0] != T:
            raise ShapeError(f"init_vector has length {start.shape[0]}, expected T={T} or T+k={T + k}")
        scores = start
    elif config.init == "spherical-pc":
        from .robust import spherical_scores

        scores = spherical_scores(panel.values)
    else:
        scores = principal_scores(panel.values)
    return np.concatenate([scores, np.zeros(k)])


def _final_factor_step(
    panel: SeriesPanel, beta: np.ndarray, alpha: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact factor update for the final loadings, normalized with compensated loadings.

    With f* = mu + sigma * f the reconstruction is unchanged when beta becomes
    sigma * beta and alpha absorbs mu * sum(beta), so f is stationary for the
    returned loadings.
    """
    raw = update_f(panel, beta, alpha)
    f = normalize_factor(raw)
    mu = float(raw.mean())
    sigma = float(np.sqrt(np.mean((raw - mu) ** 2)))
    return f, sigma * beta, alpha + mu * beta.sum(axis=1)


def fit_component(panel: SeriesPanel, config: SolverConfig) -> DpcComponent:
    """Fit the first dynamic principal component with k leads.

    Iterates until the relative MSE improvement falls below
    ``config.epsilon`` or ``config.max_iter`` factor updates were made.
    Non-convergence is recorded in the returned component, not raised.

    Raises:
        DegenerateFitError: If a regression or factor solve becomes singular
    """
    k = config.k
    logger.info(f"Fitting DPC with k={k} on a {panel.T}x{panel.m} panel")

    f = initial_factor(panel, config)
    beta, alpha = update_beta_alpha(panel, f, k)
    current = panel_mse(panel.values - (lead_matrix(f, k, panel.T) @ beta.T + alpha))
    history = [current]
    converged = current == 0.0
    iterations = 0

    while not converged and iterations < config.max_iter:
        f = normalize_factor(update_f(panel, beta, alpha))
        beta, alpha = update_beta_alpha(panel, f, k)
        iterations += 1
        previous = current
        current = panel_mse(panel.values - (lead_matrix(f, k, panel.T) @ beta.T + alpha))
        history.append(current)
        improvement = (previous - current) / previous if previous > 0 else 0.0
        logger.debug(f"DPC k={k} iteration {iterations}: mse={current:.10g} improvement={improvement:.3g}")
        if current > previous * (1 + 1e-12):
            logger.warning(f"MSE increased from {previous:.12g} to {current:.12g} at iteration {iterations}")
        if improvement < config.epsilon:
            converged = True

    if current > 0.0:
        f, beta, alpha = _final_factor_step(panel, beta, alpha)
        current = panel_mse(panel.values - (lead_matrix(f, k, panel.T) @ beta.T + alpha))
        history[-1] = current

    if not converged:
        logger.warning(f"DPC k={k} did not converge in {config.max_iter} iterations (mse={current:.6g})")
    else:
        logger.info(f"DPC k={k} converged after {iterations} iterations with mse={current:.6g}")

    f, beta = orient(f, beta)
    return DpcComponent(
        k=k,
        f=f,
        beta=beta,
        alpha=alpha,
        convergence=Convergence(iterations, current, converged, tuple(history)),
    )


def fit(panel: SeriesPanel, config: SolverConfig) -> DpcModel:
    """Fit ``config.p`` components, each on the residuals of the previous ones.

    A user-supplied starting factor only seeds the first component; later
    components start from the classical principal component.
    """
    components: list[DpcComponent] = []
    residuals: list[SeriesPanel] = []
    residual = panel
    for index in range(config.p):
        cfg = config
        if index > 0 and config.init == "user":
            cfg = replace(config, init="classical-pc", init_vector=None)
        component = fit_component(residual, cfg)
        residual = residual.with_values(residual.values - component.reconstruct())
        components.append(component)
        residuals.append(residual)
    return DpcModel(tuple(components), tuple(residuals))


def reconstruct(model: DpcModel, upto_p: int | None = None) -> SeriesPanel:
    """Sum of the reconstructions of components 1..upto_p.

    Raises:
        InputError: If upto_p is outside 1..p
    """
    upto_p = model.p if upto_p is None else upto_p
    if not 1 <= upto_p <= model.p:
        raise InputError(f"upto_p must lie in 1..{model.p}, got {upto_p}")
    total = sum(component.reconstruct() for component in model.components[:upto_p])
    return SeriesPanel(total, model.residual_panels[0].labels)
