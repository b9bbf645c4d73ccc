"""Domain types and reconstruction metrics shared by every solver.

A panel holds T observations of m series. A dynamic principal component is a
factor vector ``f`` of length T+k whose k+1 leads reconstruct every series:

    z_hat[t, j] = sum_i beta[j, i] * f[t + i] + alpha[j],   i = 0..k

Column ``i`` of ``beta`` always multiplies ``f[t + i]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DegenerateFitError, InputError, ShapeError

if TYPE_CHECKING:
    from .robust import MScaleSpec, RobustOptions

logger = logging.getLogger(__name__)

InitStrategy = Literal["classical-pc", "spherical-pc", "user"]
INIT_STRATEGIES: tuple[str, ...] = ("classical-pc", "spherical-pc", "user")


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SeriesPanel:
    """T x m panel of observed series with one label per column."""

    values: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise ShapeError(f"panel must be two-dimensional, got {values.ndim} dimensions")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise InputError(f"panel must hold at least one observation of one series, got {values.shape}")
        if not np.isfinite(values).all():
            row, col = np.argwhere(~np.isfinite(values))[0]
            raise InputError(f"panel holds a non-finite value at row {row + 1}, column {col + 1}")

        labels = tuple(str(label) for label in self.labels) if self.labels else tuple(
            f"z{j + 1}" for j in range(values.shape[1])
        )
        if len(labels) != values.shape[1]:
            raise ShapeError(f"{len(labels)} labels given for {values.shape[1]} series")

        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "labels", labels)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> SeriesPanel:
        """Return a panel with the same labels and new values."""
        return SeriesPanel(values, self.labels)

    def label(self, j: int) -> str:
        return self.labels[j]


@dataclass(frozen=True)
class Convergence:
    """Iteration record of one component fit."""

    iterations: int
    criterion: float
    converged: bool
    history: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "criterion": self.criterion,
            "converged": self.converged,
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, data: dict) -> Convergence:
        return cls(
            iterations=int(data["iterations"]),
            criterion=float(data["criterion"]),
            converged=bool(data["converged"]),
            history=tuple(float(v) for v in data.get("history", [])),
        )


@dataclass(frozen=True, eq=False)
class DpcComponent:
    """One fitted dynamic principal component.

    ``scales`` holds the per-series M-scales when the component was fitted
    with the robust criterion and is None otherwise.
    """

    k: int
    f: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    convergence: Convergence = field(default_factory=lambda: Convergence(0, float("nan"), False))
    scales: np.ndarray | None = None

    def __post_init__(self):
        if self.k < 0:
            raise ShapeError(f"lag count must be non-negative, got {self.k}")
        f = np.asarray(self.f, dtype=float).ravel()
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        if beta.shape[1] != self.k + 1:
            raise ShapeError(f"beta must have k+1={self.k + 1} columns, got {beta.shape[1]}")
        if alpha.shape[0] != beta.shape[0]:
            raise ShapeError(f"alpha has {alpha.shape[0]} entries for {beta.shape[0]} series")
        if f.shape[0] <= self.k:
            raise ShapeError(f"factor of length {f.shape[0]} is too short for k={self.k}")
        object.__setattr__(self, "f", _frozen(f))
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "alpha", _frozen(alpha))
        if self.scales is not None:
            object.__setattr__(self, "scales", _frozen(np.asarray(self.scales).ravel()))

    @property
    def T(self) -> int:
        return self.f.shape[0] - self.k

    @property
    def m(self) -> int:
        return self.beta.shape[0]

    def reconstruct(self) -> np.ndarray:
        """Return the T x m reconstruction sum_i beta[:, i] f[t+i] + alpha."""
        return lead_matrix(self.f, self.k, self.T) @ self.beta.T + self.alpha


@dataclass(frozen=True, eq=False)
class DpcModel:
    """Successive components and the residual panel left after each one."""

    components: tuple[DpcComponent, ...]
    residual_panels: tuple[SeriesPanel, ...]
    mscale: MScaleSpec | None = None
    robust_options: RobustOptions | None = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "residual_panels", tuple(self.residual_panels))
        if len(self.components) != len(self.residual_panels):
            raise ShapeError("a model needs one residual panel per component")

    @property
    def p(self) -> int:
        return len(self.components)

    @property
    def robust(self) -> bool:
        return self.mscale is not None


@dataclass
class SolverConfig:
    """Parameters of a DPC fit.

    Args:
        k: Number of forward lags
        p: Number of components
        epsilon: Relative-improvement stopping tolerance
        max_iter: Iteration cap per component
        init: Starting factor: "classical-pc", "spherical-pc" or "user"
        init_vector: Starting factor for init="user" (length T+k or T)
        seed: Seed for randomized fallbacks
    """

    k: int = 0
    p: int = 1
    epsilon: float = 1e-4
    max_iter: int = 500
    init: str = "classical-pc"
    init_vector: Sequence[float] | None = None
    seed: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ConfigError(f"k must be a non-negative integer, got {self.k}")
        if int(self.p) != self.p or self.p < 1:
            raise ConfigError(f"p must be a positive integer, got {self.p}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.init not in INIT_STRATEGIES:
            raise ConfigError(f"unknown init strategy '{self.init}', expected one of {INIT_STRATEGIES}")
        if self.init == "user" and self.init_vector is None:
            raise ConfigError("init='user' requires init_vector")
        self.k = int(self.k)
        self.p = int(self.p)
        self.max_iter = int(self.max_iter)

    def with_k(self, k: int) -> SolverConfig:
        return replace(self, k=k)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "p": self.p,
            "epsilon": self.epsilon,
            "max_iter": self.max_iter,
            "init": self.init,
            "init_vector": None if self.init_vector is None else [float(v) for v in self.init_vector],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SolverConfig:
        return cls(
            k=data.get("k", 0),
            p=data.get("p", 1),
            epsilon=data.get("epsilon", 1e-4),
            max_iter=data.get("max_iter", 500),
            init=data.get("init", "classical-pc"),
            init_vector=data.get("init_vector"),
            seed=data.get("seed", 0),
        )


def lead_matrix(f: np.ndarray, k: int, T: int) -> np.ndarray:
    """Return the T x (k+1) matrix whose row t is (f[t], ..., f[t+k])."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != T + k:
        raise ShapeError(f"factor has length {f.shape[0]}, expected T+k={T + k}")
    return sliding_window_view(f, k + 1)[:T]


def design_matrix(f: np.ndarray, k: int, T: int) -> np.ndarray:
    """Return F(f): the lead matrix with a trailing column of ones."""
    return np.hstack([lead_matrix(f, k, T), np.ones((T, 1))])


def normalize_factor(f: np.ndarray) -> np.ndarray:
    """Center f and scale it so that sum(f**2)/len(f) == 1."""
    f = np.asarray(f, dtype=float)
    centered = f - f.mean()
    norm = np.linalg.norm(centered)
    if not np.isfinite(norm) or norm <= 1e-12 * max(np.abs(f).max(initial=0.0), 1e-300):
        raise DegenerateFitError("factor is constant and cannot be normalized")
    return np.sqrt(f.shape[0]) * centered / norm


def orient(f: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip signs so the largest-magnitude entry of f is positive.

    Ties go to the earliest index.
    """
    idx = int(np.argmax(np.abs(f)))
    if f[idx] < 0:
        return -f, -beta
    return f, beta


def sum_of_squares(residuals: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """Sum squares in extended precision where the platform offers it."""
    squares = np.square(np.asarray(residuals, dtype=np.longdouble))
    total = np.sum(squares, axis=axis)
    return np.asarray(total, dtype=float) if axis is not None else float(total)


def panel_mse(residuals: np.ndarray) -> float:
    """Sum over series of the per-series mean squared residual."""
    residuals = np.asarray(residuals, dtype=float)
    return float(np.sum(sum_of_squares(residuals, axis=0)) / residuals.shape[0])


def _check_compatible(panel: SeriesPanel, component: DpcComponent) -> None:
    if component.m != panel.m:
        raise ShapeError(f"component has {component.m} loading rows, panel has {panel.m} series")
    if component.f.shape[0] != panel.T + component.k:
        raise ShapeError(
            f"factor length {component.f.shape[0]} does not match T+k={panel.T + component.k}"
        )


def mse(panel: SeriesPanel, component: DpcComponent) -> float:
    """Reconstruction MSE of a component on a panel.

    Args:
        panel: Observed panel
        component: Component whose f has length T+k and beta has m rows

    Returns:
        sum_j (1/T) sum_t (z[t, j] - z_hat[t, j])**2

    Raises:
        ShapeError: If panel and component dimensions disagree
    """
    _check_compatible(panel, component)
    return panel_mse(panel.values - component.reconstruct())


def total_variance(panel: SeriesPanel) -> float:
    """Sum of the population variances of the series."""
    return float(np.sum(np.var(panel.values, axis=0)))


def explained_variance(panel: SeriesPanel, component: DpcComponent, k: int | None = None) -> float:
    """Percentage of panel variability captured by a factor with k leads.

    The loadings and intercepts are re-estimated by least squares for the
    given factor, so only ``component.f`` matters.

    Raises:
        DegenerateFitError: If the panel is constant
    """
    from .solver import update_beta_alpha

    k = component.k if k is None else k
    if component.f.shape[0] != panel.T + k:
        raise ShapeError(f"factor length {component.f.shape[0]} does not match T+k={panel.T + k}")
    total = total_variance(panel)
    if total == 0:
        raise DegenerateFitError("panel is constant: total variance is zero")
    beta, alpha = update_beta_alpha(panel, component.f, k)
    fitted = lead_matrix(component.f, k, panel.T) @ beta.T + alpha
    return 100.0 * (1.0 - panel_mse(panel.values - fitted) / total)


def information_proportion(T: int, m: int, k: int, p: int) -> Fraction:
    """Share of the original values needed to store a p-component, k-lag model.

    Returns:
        ((T+k)p + (k+1)mp + m) / (mT) as an exact fraction
    """
    for name, value, low in (("T", T, 1), ("m", m, 1), ("k", k, 0), ("p", p, 1)):
        if int(value) != value or value < low:
            raise InputError(f"{name} must be an integer >= {low}, got {value}")
    T, m, k, p = int(T), int(m), int(k), int(p)
    return Fraction((T + k) * p + (k + 1) * m * p + m, m * T)


@dataclass(frozen=True, eq=False)
class StructureSelection:
    """Outcome of the greedy lag/component search."""

    lags: tuple[int, ...]
    criterion_value: float
    target_met: bool
    model: DpcModel
    trace: tuple[tuple[int, int, float], ...]
    criterion: str = "mse"

    @property
    def k(self) -> int:
        return max(self.lags)

    @property
    def p(self) -> int:
        return len(self.lags)


def select_structure(
    panel: SeriesPanel,
    epsilon_lag: float,
    mse_target: float,
    caps: tuple[int, int],
    config: SolverConfig | None = None,
    criterion: str = "mse",
    spec: MScaleSpec | None = None,
    options: RobustOptions | None = None,
) -> StructureSelection:
    """Grow lags, then components, until the criterion reaches a target.

    Starting from one component with k=0, the lag count of the current
    component grows while each extra lag reduces the criterion by a relative
    amount of at least ``epsilon_lag``. Then a new component is fitted to the
    residuals, again from k=0. The search stops once the criterion is at or
    below ``mse_target`` or the caps are reached.

    Args:
        panel: Observed panel
        epsilon_lag: Minimum relative reduction that justifies one more lag
        mse_target: Criterion level regarded as satisfactory
        caps: (k_max, p_max)
        config: Solver settings (k and p are ignored)
        criterion: "mse" for DPC fits or "srs" for S-DPC fits
        spec: M-scale used when criterion="srs"

    Returns:
        StructureSelection; ``target_met`` is False when the caps stopped the search
    """
    from .robust import MScaleSpec, fit_s_component, srs_of_residuals
    from .solver import fit_component

    k_max, p_max = caps
    if k_max < 0 or p_max < 1:
        raise ConfigError(f"caps must satisfy k_max >= 0 and p_max >= 1, got {caps}")
    if not epsilon_lag > 0:
        raise ConfigError(f"epsilon_lag must be positive, got {epsilon_lag}")
    if criterion not in ("mse", "srs"):
        raise ConfigError(f"unknown criterion '{criterion}'")
    config = config or SolverConfig()
    spec = spec or MScaleSpec()

    def fit_one(residual: SeriesPanel, k: int) -> tuple[DpcComponent, float]:
        cfg = config.with_k(k)
        if criterion == "mse":
            component = fit_component(residual, cfg)
            return component, mse(residual, component)
        component = fit_s_component(residual, cfg, spec, options)
        return component, srs_of_residuals(residual.values - component.reconstruct(), spec)

    residual = panel
    components: list[DpcComponent] = []
    residuals: list[SeriesPanel] = []
    lags: list[int] = []
    trace: list[tuple[int, int, float]] = []
    target_met = False
    value = float("inf")

    while True:
        p = len(components) + 1
        k = 0
        component, value = fit_one(residual, k)
        trace.append((k, p, value))
        logger.info(f"Structure search: p={p} k={k} {criterion}={value:.6g}")
        while value > mse_target and value > 0 and k < k_max:
            candidate, candidate_value = fit_one(residual, k + 1)
            trace.append((k + 1, p, candidate_value))
            reduction = (value - candidate_value) / value
            logger.info(f"Structure search: p={p} k={k + 1} {criterion}={candidate_value:.6g} reduction={reduction:.4g}")
            if reduction < epsilon_lag:
                break
            k, component, value = k + 1, candidate, candidate_value

        components.append(component)
        lags.append(k)
        residual = residual.with_values(residual.values - component.reconstruct())
        residuals.append(residual)

        if value <= mse_target or value == 0:
            target_met = True
            break
        if p >= p_max:
            logger.warning(f"Structure search reached caps {caps} with {criterion}={value:.6g} above target {mse_target}")
            break

    model = DpcModel(
        tuple(components),
        tuple(residuals),
        mscale=spec if criterion == "srs" else None,
        robust_options=options if criterion == "srs" else None,
    )
    return StructureSelection(tuple(lags), value, target_met, model, tuple(trace), criterion)
