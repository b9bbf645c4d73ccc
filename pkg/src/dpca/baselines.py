"""Comparison methods: ordinary principal components and the frequency-domain DPC.

OPC reconstructs each series by regressing it on k leads of the first
classical principal component. BDPC takes the leading eigenvector of the
smoothed cross-spectral matrix at every Fourier frequency and turns it into
a truncated two-sided filter by the inverse discrete Fourier transform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft
from scipy.linalg import eigh, lstsq
from scipy.ndimage import uniform_filter1d
from scipy.signal.windows import tukey

from .core import SeriesPanel, panel_mse
from .errors import ConfigError, DegenerateFitError, ShapeError
from .solver import RANK_TOLERANCE

logger = logging.getLogger(__name__)

CONVENTIONS: tuple[str, ...] = ("eigenvector", "projection")


@dataclass(frozen=True)
class SmoothingSpec:
    """Daniell smoothing of the cross-periodogram.

    Args:
        span: Odd window width in Fourier frequencies; None means floor(sqrt(T)),
            bumped to the next odd number
        taper: Fraction of the series tapered by a split cosine bell (0 disables)
    """

    span: int | None = None
    taper: float = 0.0

    def __post_init__(self):
        if self.span is not None and (int(self.span) != self.span or self.span < 1):
            raise ConfigError(f"smoothing span must be a positive integer, got {self.span}")
        if not 0.0 <= self.taper <= 1.0:
            raise ConfigError(f"taper fraction must lie in [0, 1], got {self.taper}")

    def width(self, T: int) -> int:
        span = int(np.floor(np.sqrt(T))) if self.span is None else int(self.span)
        if span % 2 == 0:
            span += 1
        if T < 2 * span:
            raise ConfigError(f"smoothing span {span} is too wide for T={T} (need T >= 2*span)")
        return span

    def to_dict(self) -> dict:
        return {"span": self.span, "taper": self.taper}

    @classmethod
    def from_dict(cls, data: dict) -> SmoothingSpec:
        return cls(span=data.get("span"), taper=float(data.get("taper", 0.0)))


@dataclass(frozen=True, eq=False)
class SpectralEstimate:
    """Smoothed cross-spectral matrices on the full Fourier grid 2*pi*h/T, h = 0..T-1.

    Densities are scaled so that sum_h S[h] * (2*pi/T) approximates the covariance.
    """

    frequencies: np.ndarray
    cross_spectra: np.ndarray
    span: int
    taper: float
    density: str = "sum(S) * 2*pi/T = covariance"

    @property
    def T(self) -> int:
        return self.frequencies.shape[0]

    def hermitian_error(self) -> float:
        return float(np.abs(self.cross_spectra - np.conj(np.swapaxes(self.cross_spectra, 1, 2))).max())


@dataclass(frozen=True, eq=False)
class OpcFit:
    """Classical principal components of a panel.

    ``loadings[:, i]`` is the i-th eigenvector, ``scores[:, i]`` its scores.
    """

    eigenvalues: np.ndarray
    loadings: np.ndarray
    scores: np.ndarray
    means: np.ndarray

    @property
    def p(self) -> int:
        return self.loadings.shape[1]


@dataclass(frozen=True, eq=False)
class BdpcModel:
    """Truncated filter of the frequency-domain DPC.

    ``c[M + k]`` holds c_k and ``b[M + j]`` holds b_j for k, j in -M..M.
    """

    M: int
    c: np.ndarray
    b: np.ndarray
    means: np.ndarray
    convention: str = "eigenvector"

    @property
    def m(self) -> int:
        return self.c.shape[1]

    def filter(self, k: int) -> np.ndarray:
        return self.c[self.M + k]

    def loading(self, j: int) -> np.ndarray:
        return self.b[self.M + j]


def _orient_columns(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def opc_fit(panel: SeriesPanel, p: int = 1) -> OpcFit:
    """Eigendecomposition of the population covariance, eigenvalues descending."""
    if not 1 <= p <= panel.m:
        raise ShapeError(f"p must lie in 1..{panel.m}, got {p}")
    means = panel.values.mean(axis=0)
    centered = panel.values - means
    covariance = centered.T @ centered / panel.T
    eigenvalues, vectors = eigh(covariance)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues, vectors = eigenvalues[order], vectors[:, order]
    loadings = _orient_columns(vectors[:, :p])
    return OpcFit(eigenvalues=eigenvalues, loadings=loadings, scores=centered @ loadings, means=means)


def opc_reconstruct_lagged(panel: SeriesPanel, scores: np.ndarray, k: int) -> tuple[SeriesPanel, float]:
    """Regress every series on (p[t], ..., p[t+k], 1) for the T-k rows where all leads exist.

    Returns:
        (fitted panel of T-k rows, MSE over those rows)

    Raises:
        DegenerateFitError: If the lead matrix of the scores is rank deficient
    """
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.shape[0] != panel.T:
        raise ShapeError(f"scores have length {scores.shape[0]}, expected T={panel.T}")
    if k < 0 or panel.T - k < k + 2:
        raise ShapeError(f"T={panel.T} is too short for an OPC regression with k={k}")
    rows = panel.T - k
    leads = np.lib.stride_tricks.sliding_window_view(scores, k + 1)[:rows]
    design = np.hstack([leads, np.ones((rows, 1))])
    target = panel.values[:rows]
    coef, _, rank, _ = lstsq(design, target, lapack_driver="gelsd", cond=RANK_TOLERANCE)
    if rank < k + 2:
        raise DegenerateFitError(f"lead matrix of the principal component scores has rank {rank} < {k + 2}")
    fitted = design @ coef
    return SeriesPanel(fitted, panel.labels), panel_mse(target - fitted)


def estimate_cross_spectrum(panel: SeriesPanel, smoothing: SmoothingSpec | None = None) -> SpectralEstimate:
    """Daniell-smoothed cross-periodogram of the demeaned panel.

    Raises:
        ConfigError: If the smoothing window is too wide for the panel
    """
    smoothing = smoothing or SmoothingSpec()
    T = panel.T
    span = smoothing.width(T)
    x = panel.values - panel.values.mean(axis=0)
    if smoothing.taper > 0:
        window = tukey(T, alpha=smoothing.taper)
        x = x * (window / np.sqrt(np.mean(window**2)))[:, None]

    z = fft.fft(x, axis=0)
    periodogram = np.einsum("hi,hj->hij", z, np.conj(z)) / (2 * np.pi * T)
    smoothed = uniform_filter1d(periodogram.real, size=span, axis=0, mode="wrap") + 1j * uniform_filter1d(
        periodogram.imag, size=span, axis=0, mode="wrap"
    )
    # exact Hermitian symmetry within and across frequencies
    smoothed = 0.5 * (smoothed + np.conj(np.swapaxes(smoothed, 1, 2)))
    frequencies = 2 * np.pi * np.arange(T) / T
    logger.debug(f"Cross spectrum of {panel.m} series on {T} frequencies, span {span}")
    return SpectralEstimate(frequencies=frequencies, cross_spectra=smoothed, span=span, taper=smoothing.taper)


def _phase_fix(vector: np.ndarray) -> np.ndarray:
    idx = int(np.argmax(np.abs(vector)))
    return vector * (np.conj(vector[idx]) / np.abs(vector[idx]))


def leading_eigenvectors(spectrum: SpectralEstimate) -> np.ndarray:
    """Phase-aligned leading eigenvectors for every Fourier frequency.

    The zero frequency is rotated so its largest-modulus coordinate is real
    positive; each later frequency up to Nyquist is rotated so its inner
    product with the previous vector is real positive. Frequencies above
    Nyquist are the conjugates of their mirror images.
    """
    T, m = spectrum.T, spectrum.cross_spectra.shape[1]
    half = T // 2
    vectors = np.zeros((T, m), dtype=complex)
    previous = None
    for h in range(half + 1):
        _, eigvecs = eigh(spectrum.cross_spectra[h], subset_by_index=[m - 1, m - 1])
        vector = _phase_fix(eigvecs[:, 0])
        if previous is not None:
            overlap = np.vdot(previous, vector)
            if np.abs(overlap) > 0:
                vector = vector * (np.conj(overlap) / np.abs(overlap))
        if h == 0 or 2 * h == T:
            vector = _phase_fix(vector).real.astype(complex)
            if previous is not None and np.vdot(previous, vector).real < 0:
                vector = -vector
        vectors[h] = vector
        previous = vector
    for h in range(1, (T + 1) // 2):
        vectors[T - h] = np.conj(vectors[h])
    return vectors


def bdpc_fit(
    panel: SeriesPanel,
    M: int,
    smoothing: SmoothingSpec | None = None,
    convention: str = "eigenvector",
) -> BdpcModel:
    """Truncated inverse-transform filter from the leading spectral eigenvectors.

    With convention "eigenvector" c_k is the inverse transform of the
    eigenvectors and b_j that of their conjugates. With "projection" c_k is
    the inverse transform of the conjugates and b_j = c_j, so every frequency
    is projected onto its eigenvector.

    Raises:
        ConfigError: If M is negative or not shorter than the panel, or the convention is unknown
    """
    if convention not in CONVENTIONS:
        raise ConfigError(f"unknown BDPC convention '{convention}', expected one of {CONVENTIONS}")
    if int(M) != M or M < 0 or 2 * M + 1 > panel.T:
        raise ConfigError(f"M must satisfy 0 <= 2M+1 <= T={panel.T}, got {M}")
    M = int(M)
    spectrum = estimate_cross_spectrum(panel, smoothing)
    vectors = leading_eigenvectors(spectrum)

    source = vectors if convention == "eigenvector" else np.conj(vectors)
    coefficients = fft.ifft(source, axis=0)
    lags = np.arange(-M, M + 1)
    c_complex = coefficients[lags % panel.T]
    residue = float(np.abs(c_complex.imag).max()) / max(float(np.abs(c_complex.real).max()), 1e-300)
    if residue > 1e-8:
        logger.warning(f"BDPC filter keeps a relative imaginary residue of {residue:.3g}")
    c = c_complex.real.copy()
    b = c[::-1].copy() if convention == "eigenvector" else c.copy()
    logger.info(f"BDPC fitted with M={M} on a {panel.T}x{panel.m} panel ({convention} convention)")
    return BdpcModel(M=M, c=c, b=b, means=panel.values.mean(axis=0), convention=convention)


def _check_model(panel: SeriesPanel, model: BdpcModel) -> None:
    if model.m != panel.m:
        raise ShapeError(f"BDPC model has {model.m} series, panel has {panel.m}")


def bdpc_scores(panel: SeriesPanel, model: BdpcModel) -> np.ndarray:
    """Factor f[t] = sum_k c_k' z[t-k] over the lags with 0 <= t-k <= T-1."""
    _check_model(panel, model)
    z = panel.values - model.means
    T = panel.T
    f = np.zeros(T)
    for k in range(-model.M, model.M + 1):
        lo, hi = max(0, k), min(T, T + k)
        if lo < hi:
            f[lo:hi] += z[lo - k : hi - k] @ model.filter(k)
    return f


def bdpc_reconstruct(panel: SeriesPanel, model: BdpcModel) -> tuple[SeriesPanel, float]:
    """Reconstruction z_hat[t] = sum_j b_j f[t+j] + mean over the leads inside the sample.

    Returns:
        (reconstructed panel, MSE over every series and time point)
    """
    f = bdpc_scores(panel, model)
    T = panel.T
    fitted = np.tile(model.means, (T, 1))
    for j in range(-model.M, model.M + 1):
        lo, hi = max(0, -j), min(T, T - j)
        if lo < hi:
            fitted[lo:hi] += np.outer(f[lo + j : hi + j], model.loading(j))
    return SeriesPanel(fitted, panel.labels), panel_mse(panel.values - fitted)
