"""Banded linear systems for the factor update.

Bands are stored diagonal by diagonal: ``upper[d, t] = D[t, t + d]`` and
``lower[d, t] = D[t + d, t]`` for d = 0..k. Entries with t + d >= n are unused.
A system with ``lower is None`` is symmetric and is solved by a banded
Cholesky factorization; otherwise a banded LU solve is used.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded, solve_banded

from .errors import DegenerateFitError, ShapeError

logger = logging.getLogger(__name__)

PIVOT_TOLERANCE = 1e-12
JITTER_SCALE = 1e-10


@dataclass(frozen=True, eq=False)
class BandedSystem:
    """Square banded matrix of size n = T+k and bandwidth k, plus an optional right-hand side."""

    upper: np.ndarray
    lower: np.ndarray | None = None
    rhs: np.ndarray | None = None

    def __post_init__(self):
        if self.upper.ndim != 2:
            raise ShapeError("band storage must be two-dimensional")
        if self.lower is not None and self.lower.shape != self.upper.shape:
            raise ShapeError(f"lower band {self.lower.shape} does not match upper band {self.upper.shape}")
        if self.rhs is not None and self.rhs.shape[0] != self.n:
            raise ShapeError(f"right-hand side has length {self.rhs.shape[0]}, expected {self.n}")

    @property
    def n(self) -> int:
        return self.upper.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.upper.shape[0] - 1

    @property
    def symmetric(self) -> bool:
        return self.lower is None

    def to_dense(self) -> np.ndarray:
        """Expand the band storage into a dense n x n matrix."""
        n, k = self.n, self.bandwidth
        dense = np.zeros((n, n))
        lower = self.upper if self.lower is None else self.lower
        for d in range(min(k, n - 1) + 1):
            idx = np.arange(n - d)
            dense[idx, idx + d] = self.upper[d, : n - d]
            dense[idx + d, idx] = lower[d, : n - d]
        return dense

    def diagonal(self) -> np.ndarray:
        return self.upper[0]

    def scale(self) -> float:
        """Largest absolute entry of the matrix."""
        scale = float(np.abs(self.upper).max(initial=0.0))
        if self.lower is not None:
            scale = max(scale, float(np.abs(self.lower).max(initial=0.0)))
        return scale

    def with_jitter(self, amount: float) -> BandedSystem:
        upper = self.upper.copy()
        upper[0] += amount
        lower = None
        if self.lower is not None:
            lower = self.lower.copy()
            lower[0] += amount
        return BandedSystem(upper, lower, self.rhs)

    def solve(self, rhs: np.ndarray | None = None, cause: str = "") -> np.ndarray:
        """Solve D x = rhs without forming an inverse.

        A factorization that fails, or whose smallest pivot is below
        1e-12 * max|D|, is retried once with a diagonal jitter of
        1e-10 * trace(D) / n.

        Raises:
            DegenerateFitError: If the jittered system is still singular
        """
        rhs = self.rhs if rhs is None else np.asarray(rhs, dtype=float)
        if rhs is None:
            raise ShapeError("no right-hand side to solve for")
        try:
            return self._solve_once(rhs)
        except (LinAlgError, _SmallPivot) as exc:
            jitter = JITTER_SCALE * float(np.sum(self.diagonal())) / self.n
            logger.warning(f"Banded system of size {self.n} is near-singular ({exc}); retrying with jitter {jitter:.3g}")
            if not jitter > 0:
                raise DegenerateFitError(_degenerate_message(cause, str(exc))) from exc
        try:
            return self.with_jitter(jitter)._solve_once(rhs)
        except (LinAlgError, _SmallPivot) as exc:
            raise DegenerateFitError(_degenerate_message(cause, str(exc))) from exc

    def _solve_once(self, rhs: np.ndarray) -> np.ndarray:
        k, n = self.bandwidth, self.n
        threshold = PIVOT_TOLERANCE * self.scale()
        if self.symmetric:
            ab = np.zeros((k + 1, n))
            for d in range(k + 1):
                ab[k - d, d:] = self.upper[d, : n - d]
            factor = cholesky_banded(ab, lower=False)
            pivots = factor[k] ** 2
            if pivots.min() <= threshold:
                raise _SmallPivot(f"smallest pivot {pivots.min():.3g} below {threshold:.3g}")
            solution = cho_solve_banded((factor, False), rhs)
        else:
            ab = np.zeros((2 * k + 1, n))
            for d in range(k + 1):
                ab[k - d, d:] = self.upper[d, : n - d]
                ab[k + d, : n - d] = self.lower[d, : n - d]
            solution = solve_banded((k, k), ab, rhs)
        if not np.all(np.isfinite(solution)):
            raise _SmallPivot("solution is not finite")
        return solution


class _SmallPivot(Exception):
    pass


def _degenerate_message(cause: str, detail: str) -> str:
    message = "banded system for the factor update is singular"
    if cause:
        message = f"{message} ({cause})"
    return f"{message}: {detail}"


def gram_bands(
    beta: np.ndarray,
    T: int,
    weights: np.ndarray | None = None,
    row_scale: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Assemble the bands of D = sum_j R_j B_j' W_j B_j.

    B_j is the T x (T+k) lead operator of series j, (B_j f)[v] = sum_i beta[j, i] f[v+i].
    W_j = diag(weights[j]) and R_j = diag(row_scale[j]) scales row t of the
    normal equations. Without weights and row scales this is the Gram matrix
    of the MSE criterion.

    Args:
        beta: m x (k+1) loadings
        T: Number of observations
        weights: m x T observation weights, or None for unit weights
        row_scale: m x (T+k) row multipliers, or None for unit multipliers

    Returns:
        (upper, lower) band arrays of shape (k+1, T+k); lower is None when
        the row multipliers are constant per series, i.e. D is symmetric
    """
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    m, width = beta.shape
    k = width - 1
    n = T + k
    w = np.ones((m, T)) if weights is None else np.asarray(weights, dtype=float)

    products = np.zeros((k + 1, m, n))
    for d in range(k + 1):
        for i in range(k - d + 1):
            pair = beta[:, i] * beta[:, i + d]
            products[d, :, i : i + T] += pair[:, None] * w

    if row_scale is None:
        upper = products.sum(axis=1)
        return upper, None

    row_scale = np.asarray(row_scale, dtype=float)
    upper = np.einsum("jt,djt->dt", row_scale, products)
    symmetric = np.allclose(row_scale, row_scale[:, :1], rtol=0.0, atol=0.0)
    if symmetric:
        return upper, None
    lower = np.zeros_like(upper)
    for d in range(k + 1):
        lower[d, : n - d] = np.einsum("jt,jt->t", row_scale[:, d:], products[d, :, : n - d])
    return upper, lower
