"""Transverse-mode spectrum of the near-confocal resonator.

Mode frequencies carry a linear term per axis from the deviation from
confocality and a quadratic aberration term in the total order t = m + n.
The downward branch of -a*t + b*t**2 folds back at t* = a/(2b), where the
mode density piles up; the emission ratio below threshold follows that
density.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import C_LIGHT, CONSTANTS, TWO_PI

ETA_S_MAX = 0.05


@dataclass(frozen=True)
class CavityGeometry:
    length_L: float = 0.075
    finesse_F: float = 1000.0
    kappa: float = TWO_PI * 2e6
    waist_w0: float = 101e-6
    eps_x: float = -24e-6
    eps_y: float = -28e-6
    aberr_coeff: float = 0.0
    t_max: int = 0

    def __post_init__(self):
        if self.length_L <= 0 or self.finesse_F <= 0 or self.kappa <= 0 or self.waist_w0 <= 0:
            raise ValueError("cavity length, finesse, linewidth and waist must be positive")
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        # kappa is the angular FWHM: kappa/2pi = FSR/F
        if abs(self.kappa / (TWO_PI * self.fsr / self.finesse_F) - 1.0) > 0.01:
            raise ValueError("kappa inconsistent with FSR/finesse")

    @property
    def fsr(self) -> float:
        return C_LIGHT / (2.0 * self.length_L)

    def linear_coeffs(self):
        """Per-order frequency step (Hz) along x and y."""
        out = []
        for eps in (self.eps_x, self.eps_y):
            R = self.length_L + abs(eps)
            out.append(self.fsr * abs(eps) / (math.pi * R))
        return tuple(out)


def fold_frequency(nu, fsr):
    """Map frequencies into (-fsr/2, fsr/2]."""
    nu = np.asarray(nu, dtype=float)
    return fsr / 2 - np.mod(fsr / 2 - nu, fsr)


def mode_offset(m, n, geom: CavityGeometry):
    """Frequency offset (Hz) of TEM_mn from the nearest TEM00 resonance."""
    m = np.asarray(m)
    n = np.asarray(n)
    if np.any(m < 0) or np.any(n < 0):
        raise ValueError("transverse mode orders must be non-negative")
    a_x, a_y = geom.linear_coeffs()
    t = m + n
    nu = -a_x * m - a_y * n + geom.aberr_coeff * t.astype(float) ** 2
    out = fold_frequency(nu, geom.fsr)
    return float(out) if out.ndim == 0 else out


def single_mode_eta(geom: CavityGeometry, const=CONSTANTS):
    """Peak emission ratio of the TEM00 mode alone, 24F/(pi k^2 w0^2)."""
    return 24.0 * geom.finesse_F / (math.pi * const.k ** 2 * geom.waist_w0 ** 2)


@dataclass(frozen=True)
class SpectrumTable:
    """Tabulated mode density and below-threshold emission ratio.

    ``density`` is in modes per Hz on the uniform ``grid`` (Hz);
    ``eta_s_profile`` = ``c_norm * density``.
    """

    grid: np.ndarray
    density: np.ndarray
    eta_s_profile: np.ndarray
    c_norm: float
    n_modes: int
    geometry: CavityGeometry

    @property
    def rho_normalized(self):
        return self.density / self.density.max()

    def peak_detuning(self):
        return float(self.grid[np.argmax(self.density)])

    def width_above(self, frac=0.1):
        sel = self.grid[self.density > frac * self.density.max()]
        return float(sel.max() - sel.min())


def _mode_histogram(geom, edges):
    """Count retained modes per grid bin (all t <= t_max, m + n = t)."""
    a_x, a_y = geom.linear_coeffs()
    counts = np.zeros(len(edges) - 1)
    lo, step = edges[0], edges[1] - edges[0]
    t = np.arange(geom.t_max + 1)
    # chunked so the flattened (t, m) arrays stay modest in memory
    for chunk in np.array_split(t, max(1, len(t) // 256)):
        if len(chunk) == 0:
            continue
        tt = np.repeat(chunk, chunk + 1)
        starts = np.cumsum(np.concatenate(([0], chunk[:-1] + 1)))
        mm = np.arange(len(tt)) - np.repeat(starts, chunk + 1)
        nu = fold_frequency(-a_x * mm - a_y * (tt - mm) + geom.aberr_coeff * tt.astype(float) ** 2, geom.fsr)
        idx = np.floor((nu - lo) / step).astype(np.int64)
        ok = (idx >= 0) & (idx < len(counts))
        counts += np.bincount(idx[ok], minlength=len(counts))
    return counts


def build_spectrum_table(geom: CavityGeometry, grid_lo=-600e6, grid_hi=300e6, step=0.1e6,
                         eta_s_max=ETA_S_MAX):
    edges = np.arange(grid_lo, grid_hi + step / 2, step)
    centers = 0.5 * (edges[1:] + edges[:-1])
    counts = _mode_histogram(geom, edges)
    hwhm = geom.kappa / 2.0 / TWO_PI
    kx = np.arange(-200e6, 200e6 + step / 2, step)
    lor = (hwhm / math.pi) / (kx ** 2 + hwhm ** 2)
    density = fftconvolve(counts, lor, mode="same")
    density = np.clip(density, 0.0, None)
    c_norm = eta_s_max / density.max()
    return SpectrumTable(centers, density, c_norm * density, c_norm, int(counts.sum()), geom)


def calibrate_spectrum(geom: CavityGeometry, fold_target=-200e6, step=0.1e6, max_iter=8):
    """Solve the aberration coefficient and mode cutoff for a density peak at ``fold_target``.

    Starts from the vertex of -a*t + b*t**2 for the family closest to TEM00
    (smaller linear coefficient), keeps modes up to that vertex order, then
    rescales b until the tabulated density maximum sits on the target.
    """
    if not fold_target < 0:
        raise ValueError("fold_target must be negative")
    a = min(geom.linear_coeffs())
    if a <= 0:
        raise ValueError("no fold: linear mode coefficients vanish (exactly confocal)")
    b = a * a / (4.0 * abs(fold_target))
    t_star = int(round(a / (2.0 * b)))
    g = replace(geom, aberr_coeff=b, t_max=t_star)
    for _ in range(max_iter):
        peak = build_spectrum_table(g, step=step).peak_detuning()
        if abs(peak - fold_target) <= step:
            break
        b = b * peak / fold_target
        g = replace(g, aberr_coeff=b, t_max=int(round(a / (2.0 * b))))
    return g


def mode_density(table: SpectrumTable, delta):
    """Mode density (per Hz) at detuning ``delta`` (Hz) from TEM00."""
    return np.interp(delta, table.grid, table.density, left=0.0, right=0.0)


def eta_below_threshold(table: SpectrumTable, Delta_c):
    """Below-threshold emission ratio at laser-cavity detuning ``Delta_c`` (Hz)."""
    return table.c_norm * mode_density(table, Delta_c)


class CavitySpectrum(TransformerMixin, BaseEstimator):
    """Calibrated multimode spectrum as an estimator.

    ``fit`` calibrates the aberration term; ``transform`` maps detunings
    in Hz to the below-threshold emission ratio.

    Examples
    --------
    >>> spec = CavitySpectrum().fit()            # doctest: +SKIP
    >>> spec.transform([-200e6])                 # doctest: +SKIP
    array([0.05])
    """

    def __init__(self, length_L=0.075, finesse_F=1000.0, kappa=TWO_PI * 2e6, waist_w0=101e-6,
                 eps_x=-24e-6, eps_y=-28e-6, fold_target=-200e6, eta_s_max=ETA_S_MAX, grid_step=0.1e6):
        self.length_L = length_L
        self.finesse_F = finesse_F
        self.kappa = kappa
        self.waist_w0 = waist_w0
        self.eps_x = eps_x
        self.eps_y = eps_y
        self.fold_target = fold_target
        self.eta_s_max = eta_s_max
        self.grid_step = grid_step

    def fit(self, X=None, y=None):
        geom = CavityGeometry(self.length_L, self.finesse_F, self.kappa, self.waist_w0,
                              self.eps_x, self.eps_y)
        self.geometry_ = calibrate_spectrum(geom, self.fold_target, step=self.grid_step)
        self.table_ = build_spectrum_table(self.geometry_, step=self.grid_step, eta_s_max=self.eta_s_max)
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        return eta_below_threshold(self.table_, np.asarray(X, dtype=float))

    def density(self, X):
        check_is_fitted(self, "table_")
        return mode_density(self.table_, np.asarray(X, dtype=float))


_DEFAULT_TABLE = None


def default_table():
    """Calibrated table for the nominal geometry, built once per process."""
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = CavitySpectrum().fit().table_
    return _DEFAULT_TABLE
