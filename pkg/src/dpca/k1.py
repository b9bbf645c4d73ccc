"""Closed forms for the one-lag case.

With k=1 the factor matrix D(beta) is tridiagonal:

    D = alpha_scale * (A0 + m1 e1 e1' + m2 en en')

where A0 has diagonal (1, 1+c^2, ..., 1+c^2, 1) and off-diagonal -c, which is
the precision matrix of a unit-innovation AR(1) process. Its inverse is known
entrywise, and D^-1 follows from a rank-two Woodbury correction. These forms
serve as oracles for the banded solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SeriesPanel
from .errors import AnalyticFormUnavailable, DegenerateFitError, DomainError, ShapeError

PROPORTIONAL_TOLERANCE = 1e-12
ORTHOGONAL_TOLERANCE = 1e-12


@dataclass(frozen=True)
class TridiagonalParams:
    """Parameterization of the k=1 factor matrix.

    Attributes:
        a1: sum_j beta[j, 0]**2
        a2: sum_j beta[j, 1]**2
        b: sum_j beta[j, 0] * beta[j, 1]
        alpha_scale: common multiplier of the pattern
        c: decay constant with |c| <= 1
        w1: first corner of the pattern
        w2: last corner of the pattern
    """

    a1: float
    a2: float
    b: float
    alpha_scale: float
    c: float
    w1: float
    w2: float

    @property
    def m1(self) -> float:
        return self.w1 - 1.0

    @property
    def m2(self) -> float:
        return self.w2 - 1.0

    def pattern(self, n: int) -> np.ndarray:
        """Dense n x n matrix alpha_scale * (A0 + m1 e1 e1' + m2 en en')."""
        if n < 2:
            raise ShapeError(f"a k=1 factor matrix has at least 2 rows, got n={n}")
        matrix = a0_matrix(self.c, n)
        matrix[0, 0] = self.w1
        matrix[-1, -1] = self.w2
        return self.alpha_scale * matrix


def tridiagonal_params(beta: np.ndarray) -> TridiagonalParams:
    """Solve for the decay constant and corner weights of D(beta) with k=1.

    c is the root of c^2 + ((a1+a2)/b) c + 1 = 0 inside the closed unit disk.
    The two roots multiply to one, so that root is unique except when
    a1 + a2 = 2|b|.

    Raises:
        ShapeError: If beta does not have exactly two columns
        DegenerateFitError: If the two loading columns are proportional
    """
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if beta.shape[1] != 2:
        raise ShapeError(f"the one-lag closed form needs beta with 2 columns, got {beta.shape[1]}")
    a1 = float(np.dot(beta[:, 0], beta[:, 0]))
    a2 = float(np.dot(beta[:, 1], beta[:, 1]))
    b = float(np.dot(beta[:, 0], beta[:, 1]))

    if a1 * a2 - b * b <= PROPORTIONAL_TOLERANCE * a1 * a2:
        raise DegenerateFitError(
            "loading columns are proportional; the first dynamic component reconstructs "
            "no better than the first classical component"
        )

    if abs(b) < ORTHOGONAL_TOLERANCE * (a1 + a2):
        c = 0.0
        alpha_scale = a1 + a2
    else:
        s = (a1 + a2) / b
        # smaller-magnitude root, written to avoid cancellation
        c = -2.0 / (s + math.copysign(math.sqrt(max(s * s - 4.0, 0.0)), s))
        alpha_scale = -b / c

    return TridiagonalParams(
        a1=a1,
        a2=a2,
        b=b,
        alpha_scale=alpha_scale,
        c=c,
        w1=a1 / alpha_scale,
        w2=a2 / alpha_scale,
    )


def _check_decay(c: float) -> None:
    if not abs(c) < 1:
        raise DomainError(f"the AR(1) closed form needs |c| < 1, got c={c}")


def a0_matrix(c: float, n: int) -> np.ndarray:
    """Dense A0: diagonal (1, 1+c^2, ..., 1+c^2, 1), off-diagonal -c."""
    matrix = np.diag(np.full(n, 1.0 + c * c))
    matrix[0, 0] = matrix[-1, -1] = 1.0
    idx = np.arange(n - 1)
    matrix[idx, idx + 1] = matrix[idx + 1, idx] = -c
    return matrix


def a0_inverse_entry(c: float, i: int, h: int) -> float:
    """Entry (i, h) of A0^-1, c^|i-h| / (1 - c^2), for any matrix size.

    Raises:
        DomainError: If |c| >= 1
    """
    _check_decay(c)
    return c ** abs(i - h) / (1.0 - c * c)


def a0_inverse(c: float, n: int) -> np.ndarray:
    """Dense n x n A0^-1 from the closed form."""
    _check_decay(c)
    idx = np.arange(n)
    return np.power(c, np.abs(np.subtract.outer(idx, idx))) / (1.0 - c * c)


def d_inverse_correction(params: TridiagonalParams, n: int) -> np.ndarray:
    """Dense D^-1 for the k=1 factor matrix of size n.

    D^-1 = (A0^-1 - A0^-1 G H G' A0^-1) / alpha_scale with G the corner spikes
    sqrt|m1| e1 and sqrt|m2| en, S = diag(sign m1, sign m2) and
    H = (S + G' A0^-1 G)^-1. Spikes with m = 0 are dropped.

    Raises:
        DomainError: If |c| >= 1
        AnalyticFormUnavailable: If S + G' A0^-1 G is singular
    """
    if n < 2:
        raise ShapeError(f"a k=1 factor matrix has at least 2 rows, got n={n}")
    base = a0_inverse(params.c, n)
    spikes = [(0, params.m1), (n - 1, params.m2)]
    spikes = [(row, m) for row, m in spikes if m != 0.0]
    if not spikes:
        return base / params.alpha_scale

    g = np.zeros((n, len(spikes)))
    signs = np.zeros(len(spikes))
    for col, (row, m) in enumerate(spikes):
        g[row, col] = math.sqrt(abs(m))
        signs[col] = math.copysign(1.0, m)
    base_g = base @ g
    core = np.diag(signs) + g.T @ base_g
    if abs(np.linalg.det(core)) <= 1e-14 * max(np.abs(core).max(), 1.0) ** len(spikes):
        raise AnalyticFormUnavailable(
            f"corner correction is singular for m1={params.m1:.6g}, m2={params.m2:.6g}"
        )
    correction = base_g @ np.linalg.solve(core, base_g.T)
    return (base - correction) / params.alpha_scale


def analytic_factor(panel: SeriesPanel, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Unnormalized k=1 factor update evaluated through the closed-form D^-1."""
    from .solver import build_c, factor_rhs

    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    params = tridiagonal_params(beta)
    rhs = factor_rhs(build_c(panel, alpha, 1), beta)
    return d_inverse_correction(params, panel.T + 1) @ rhs
