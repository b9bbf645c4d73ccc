"""S-estimator dynamic principal components.

The MSE criterion is replaced by the sum of squared robust M-scales (SRS) of
the per-series residuals. An M-scale s of residuals r_1..r_n solves

    (1/n) sum_t rho(r_t / s) = b

for a bounded rho normalized to max rho = 1 (Tukey biweight by default).
The fit alternates a weighted factor update, a weighted least-squares update
of the loadings and a rescaling step, keeping the best iterate seen.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh, lstsq
from scipy.optimize import brentq

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
)
from .errors import ConfigError, DegenerateFitError, ExactFitError, InputError, ShapeError
from .solver import RANK_TOLERANCE, band_stack, build_c, initial_factor, update_beta_alpha

logger = logging.getLogger(__name__)

FAMILIES: tuple[str, ...] = ("tukey-biweight", "square")
WEIGHT_WINDOWS: tuple[str, ...] = ("full", "band")
ROOT_RTOL = 1e-12


@dataclass(frozen=True)
class MScaleSpec:
    """Loss family and breakdown target of the M-scale.

    Args:
        family: "tukey-biweight" (bounded, max rho = 1) or "square" (rho = x**2)
        c: Tukey cutoff; ignored by the square family
        b: Right-hand side of the scale equation
    """

    family: str = "tukey-biweight"
    c: float = 5.13
    b: float = 0.1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown M-scale family '{self.family}', expected one of {FAMILIES}")
        if not self.c > 0:
            raise ConfigError(f"cutoff c must be positive, got {self.c}")
        if self.bounded and not 0 < self.b < 1:
            raise ConfigError(f"b must lie in (0, 1) for a bounded rho, got {self.b}")
        if not self.bounded and not self.b > 0:
            raise ConfigError(f"b must be positive, got {self.b}")

    @property
    def bounded(self) -> bool:
        return self.family != "square"

    def rho(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.bounded:
            return x * x
        u2 = np.minimum((x / self.c) ** 2, 1.0)
        return 1.0 - (1.0 - u2) ** 3

    def weight(self, u: np.ndarray) -> np.ndarray:
        """psi(u) / u, continuous at zero."""
        u = np.asarray(u, dtype=float)
        if not self.bounded:
            return np.full_like(u, 2.0)
        inside = np.abs(u) <= self.c
        return np.where(inside, (6.0 / self.c**2) * (1.0 - (u / self.c) ** 2) ** 2, 0.0)

    @property
    def max_weight(self) -> float:
        return 6.0 / self.c**2 if self.bounded else 2.0

    def to_dict(self) -> dict:
        return {"family": self.family, "c": self.c, "b": self.b}

    @classmethod
    def from_dict(cls, data: dict) -> MScaleSpec:
        return cls(
            family=data.get("family", "tukey-biweight"),
            c=float(data.get("c", 5.13)),
            b=float(data.get("b", 0.1)),
        )


@dataclass(frozen=True)
class RobustOptions:
    """Tuning of the S-DPC iteration.

    With weight_window="band" the weight denominator of a factor entry sums
    only over the k+1 observations that touch it. The default "full" sums over
    every observation of the series instead. That sum is the derivative of
    the M-scale equation and keeps the factor system symmetric, so the square
    loss with b = 1 reproduces the MSE fit. With "band" the iteration often
    stops early on an SRS increase and the best iterate is returned.

    Args:
        weight_window: "full" sums w*r**2 over every observation of a series in the
            weight denominator; "band" sums only over the k+1 observations that
            touch the factor entry
        init_rounds: Reweighting rounds of the robust starting regression
        init: Starting factor; None picks "spherical-pc" for bounded families and
            the solver config's strategy for the square family
    """

    weight_window: str = "full"
    init_rounds: int = 20
    init: str | None = None

    def __post_init__(self):
        if self.weight_window not in WEIGHT_WINDOWS:
            raise ConfigError(f"unknown weight window '{self.weight_window}', expected one of {WEIGHT_WINDOWS}")
        if int(self.init_rounds) != self.init_rounds or self.init_rounds < 0:
            raise ConfigError(f"init_rounds must be a non-negative integer, got {self.init_rounds}")
        if self.init not in (None, "classical-pc", "spherical-pc", "user"):
            raise ConfigError(f"unknown init strategy '{self.init}'")

    def to_dict(self) -> dict:
        return {"weight_window": self.weight_window, "init_rounds": self.init_rounds, "init": self.init}

    @classmethod
    def from_dict(cls, data: dict) -> RobustOptions:
        return cls(
            weight_window=data.get("weight_window", "full"),
            init_rounds=int(data.get("init_rounds", 20)),
            init=data.get("init"),
        )


@dataclass(frozen=True, eq=False)
class RobustWeights:
    """Observation weights w (m x T) and factor-row multipliers (m x (T+k)).

    The full weight tensor is W[j, t, v] = row_scale[j, t] * w[j, v].
    """

    w: np.ndarray
    row_scale: np.ndarray

    @property
    def k(self) -> int:
        return self.row_scale.shape[1] - self.w.shape[1]

    def tensor(self) -> np.ndarray:
        return self.row_scale[:, :, None] * self.w[:, None, :]


@dataclass(frozen=True, eq=False)
class RobustFitState:
    """Current iterate of an S-DPC fit."""

    k: int
    f: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    scales: np.ndarray
    weights: RobustWeights | None = None
    history: tuple[float, ...] = field(default=())

    def fitted(self) -> np.ndarray:
        T = self.f.shape[0] - self.k
        return lead_matrix(self.f, self.k, T) @ self.beta.T + self.alpha

    def residuals(self, panel: SeriesPanel) -> np.ndarray:
        return panel.values - self.fitted()

    @property
    def srs(self) -> float:
        return float(np.sum(self.scales**2))


def _mad_proxy(x: np.ndarray) -> float:
    magnitudes = np.abs(x)
    proxy = float(np.median(magnitudes)) / 0.6745
    if proxy > 0:
        return proxy
    return float(magnitudes[magnitudes > 0].min())


def m_scale(residuals: np.ndarray, spec: MScaleSpec | None = None) -> float:
    """M-scale of a residual vector.

    Returns 0 when at most a fraction b of the residuals is non-zero, since the
    scale equation then has no positive root.

    Raises:
        InputError: If the residuals are empty or not finite
    """
    spec = spec or MScaleSpec()
    x = np.asarray(residuals, dtype=float).ravel()
    if x.size == 0:
        raise InputError("M-scale needs at least one residual")
    if not np.isfinite(x).all():
        raise InputError("M-scale residuals must be finite")
    n = x.size

    if not spec.bounded:
        return float(np.sqrt(np.sum(np.square(x, dtype=np.longdouble)) / n / spec.b))

    if np.count_nonzero(x) <= spec.b * n:
        return 0.0

    def excess(s: float) -> float:
        return float(np.mean(spec.rho(x / s))) - spec.b

    low = 1e-12 * _mad_proxy(x)
    while excess(low) <= 0:
        low /= 10.0
    high = 1e3 * float(np.abs(x).max())
    while excess(high) >= 0:
        high *= 10.0
    return float(brentq(excess, low, high, xtol=np.finfo(float).tiny, rtol=ROOT_RTOL, maxiter=500))


def scales_of_residuals(residuals: np.ndarray, spec: MScaleSpec | None = None) -> np.ndarray:
    """Per-column M-scales of a T x m residual array."""
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    return np.array([m_scale(residuals[:, j], spec) for j in range(residuals.shape[1])])


def srs_of_residuals(residuals: np.ndarray, spec: MScaleSpec | None = None) -> float:
    """Sum over series of the squared M-scales of a T x m residual array."""
    return float(np.sum(scales_of_residuals(residuals, spec) ** 2))


def srs(panel: SeriesPanel, state: RobustFitState | DpcComponent, spec: MScaleSpec | None = None) -> float:
    """SRS of the reconstruction held by a fit state or a component."""
    if isinstance(state, DpcComponent):
        return srs_of_residuals(panel.values - state.reconstruct(), spec)
    return srs_of_residuals(state.residuals(panel), spec)


def _check_scales(panel: SeriesPanel, scales: np.ndarray) -> None:
    zero = np.flatnonzero(scales <= 0)
    if zero.size:
        j = int(zero[0])
        raise ExactFitError(
            j,
            panel.label(j),
            "robust weights are undefined; reduce the number of components or check the series",
        )


def robust_weights(
    panel: SeriesPanel,
    state: RobustFitState,
    spec: MScaleSpec | None = None,
    options: RobustOptions | None = None,
) -> RobustWeights:
    """Weights w[j, t] = w0(r[j, t] / s[j]) and row multipliers s[j]**2 / denominator.

    Raises:
        ExactFitError: If any series has a zero M-scale
    """
    spec = spec or MScaleSpec()
    options = options or RobustOptions()
    scales = np.asarray(state.scales, dtype=float)
    _check_scales(panel, scales)

    residuals = state.residuals(panel).T
    w = spec.weight(residuals / scales[:, None])
    weighted = w * residuals**2
    k, T = state.k, panel.T

    if options.weight_window == "full":
        denominator = np.repeat(weighted.sum(axis=1, keepdims=True), T + k, axis=1)
    else:
        # denominator[j, t] = sum of weighted[j, h] for max(t-k, 0) <= h <= min(t, T-1)
        denominator = band_stack(weighted, k).sum(axis=2)

    numerator = np.broadcast_to(scales[:, None] ** 2, denominator.shape)
    row_scale = np.divide(numerator, denominator, out=np.zeros_like(denominator), where=denominator > 0)
    return RobustWeights(w=w, row_scale=row_scale)


def update_f_robust(panel: SeriesPanel, state: RobustFitState) -> np.ndarray:
    """Unnormalized factor solving the weighted normal equations.

    Raises:
        ShapeError: If the state carries no weights
        DegenerateFitError: If the weighted factor matrix is singular
    """
    weights = state.weights
    if weights is None:
        raise ShapeError("robust factor update needs weights; call robust_weights first")
    beta = np.atleast_2d(state.beta)
    k = beta.shape[1] - 1
    upper, lower = gram_bands(beta, panel.T, weights.w, weights.row_scale)
    c = build_c(panel, state.alpha, k) * band_stack(weights.w, k) * weights.row_scale[:, :, None]
    rhs = np.einsum("jti,ji->t", c, beta)
    return BandedSystem(upper, lower).solve(rhs, cause="robust weights")


def update_beta_alpha_robust(
    panel: SeriesPanel,
    f: np.ndarray,
    weights: RobustWeights | np.ndarray,
    k: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-series weighted least squares of each series on (f[t], ..., f[t+k], 1).

    Raises:
        DegenerateFitError: If the weighted design of a series is rank deficient
    """
    w = weights.w if isinstance(weights, RobustWeights) else np.atleast_2d(np.asarray(weights, dtype=float))
    if w.shape != (panel.m, panel.T):
        raise ShapeError(f"weights have shape {w.shape}, expected {(panel.m, panel.T)}")
    f = np.asarray(f, dtype=float).ravel()
    k = f.shape[0] - panel.T if k is None else k
    design = design_matrix(f, k, panel.T)

    beta = np.empty((panel.m, k + 1))
    alpha = np.empty(panel.m)
    for j in range(panel.m):
        root = np.sqrt(w[j])
        coef, _, rank, _ = lstsq(
            design * root[:, None], panel.values[:, j] * root, lapack_driver="gelsd", cond=RANK_TOLERANCE
        )
        if rank < k + 2:
            raise DegenerateFitError(
                f"weighted regression of series '{panel.label(j)}' is rank deficient ({rank} < {k + 2})"
            )
        beta[j] = coef[:-1]
        alpha[j] = coef[-1]
    return beta, alpha


def spherical_scores(values: np.ndarray) -> np.ndarray:
    """First spherical principal component scores.

    Rows are centered at the coordinatewise median and scaled to unit length
    before the eigendecomposition; scores use the centered, unscaled rows.
    """
    centered = values - np.median(values, axis=0)
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    directions = np.divide(centered, norms, out=np.zeros_like(centered), where=norms > 0)
    m = values.shape[1]
    _, vectors = eigh(directions.T @ directions, subset_by_index=[m - 1, m - 1])
    return centered @ vectors[:, 0]


def _initial_state(
    panel: SeriesPanel,
    config: SolverConfig,
    spec: MScaleSpec,
    options: RobustOptions,
) -> RobustFitState:
    init = options.init or ("spherical-pc" if spec.bounded and config.init != "user" else config.init)
    f = normalize_factor(initial_factor(panel, replace(config, init=init) if init != config.init else config))
    k = config.k

    beta, alpha = update_beta_alpha(panel, f, k)
    fitted = lead_matrix(f, k, panel.T) @ beta.T + alpha
    scales = scales_of_residuals(panel.values - fitted, spec)
    for round_ in range(options.init_rounds):
        if not spec.bounded or np.any(scales <= 0):
            break
        residuals = (panel.values - fitted).T
        w = spec.weight(residuals / scales[:, None])
        beta, alpha = update_beta_alpha_robust(panel, f, w, k)
        fitted = lead_matrix(f, k, panel.T) @ beta.T + alpha
        scales = scales_of_residuals(panel.values - fitted, spec)
        logger.debug(f"S-DPC start round {round_ + 1}: srs={np.sum(scales**2):.6g}")

    _check_scales(panel, scales)
    return RobustFitState(k=k, f=f, beta=beta, alpha=alpha, scales=scales, history=(float(np.sum(scales**2)),))


def fit_s_component(
    panel: SeriesPanel,
    config: SolverConfig,
    spec: MScaleSpec | None = None,
    options: RobustOptions | None = None,
) -> DpcComponent:
    """Fit the first S-DPC with k leads.

    Stops when the relative SRS improvement is below ``config.epsilon`` or after
    ``config.max_iter`` iterations, and returns the iterate with the smallest SRS.

    Raises:
        ExactFitError: If a series reaches a zero M-scale
        DegenerateFitError: If a weighted system becomes singular
    """
    spec = spec or MScaleSpec()
    options = options or RobustOptions()
    k = config.k
    logger.info(f"Fitting S-DPC with k={k} ({spec.family}, c={spec.c}, b={spec.b}) on a {panel.T}x{panel.m} panel")

    state = _initial_state(panel, config, spec, options)
    best = state
    current = state.srs
    history = [current]
    converged = current == 0.0
    iterations = 0

    while not converged and iterations < config.max_iter:
        weights = robust_weights(panel, state, spec, options)
        weighted = replace(state, weights=weights)
        f = normalize_factor(update_f_robust(panel, weighted))
        beta, alpha = update_beta_alpha_robust(panel, f, weights, k)
        fitted = lead_matrix(f, k, panel.T) @ beta.T + alpha
        scales = scales_of_residuals(panel.values - fitted, spec)
        _check_scales(panel, scales)
        state = RobustFitState(k=k, f=f, beta=beta, alpha=alpha, scales=scales, weights=weights)
        iterations += 1

        previous = current
        current = state.srs
        history.append(current)
        if current < best.srs:
            best = state
        improvement = (previous - current) / previous if previous > 0 else 0.0
        logger.debug(f"S-DPC k={k} iteration {iterations}: srs={current:.10g} improvement={improvement:.3g}")
        if improvement < config.epsilon:
            converged = True

    if not converged:
        logger.warning(f"S-DPC k={k} did not converge in {config.max_iter} iterations (srs={best.srs:.6g})")
    else:
        logger.info(f"S-DPC k={k} stopped after {iterations} iterations with srs={best.srs:.6g}")

    f, beta = orient(best.f, best.beta)
    return DpcComponent(
        k=k,
        f=f,
        beta=beta,
        alpha=best.alpha,
        convergence=Convergence(iterations, best.srs, converged, tuple(history)),
        scales=best.scales,
    )


def fit_s(
    panel: SeriesPanel,
    config: SolverConfig,
    spec: MScaleSpec | None = None,
    options: RobustOptions | None = None,
) -> DpcModel:
    """Fit ``config.p`` S-DPCs, each on the residuals of the previous ones."""
    spec = spec or MScaleSpec()
    options = options or RobustOptions()
    components: list[DpcComponent] = []
    residuals: list[SeriesPanel] = []
    residual = panel
    for index in range(config.p):
        cfg = config
        if index > 0 and config.init == "user":
            cfg = replace(config, init="classical-pc", init_vector=None)
        component = fit_s_component(residual, cfg, spec, options)
        residual = residual.with_values(residual.values - component.reconstruct())
        components.append(component)
        residuals.append(residual)
    return DpcModel(tuple(components), tuple(residuals), mscale=spec, robust_options=options)
