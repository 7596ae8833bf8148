"""Time-of-flight and imaging diagnostics.

Detection is purely geometric: each atom falls ballistically from its
state at light extinction until it crosses a horizontal sheet below the
cavity. Times in :class:`TofTrace` and :class:`PeakFit` are milliseconds
measured from the snapshot (the extinction), so a peak centre is directly
the fall time t_f.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import find_peaks
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import CONSTANTS, K_B, AtomEnsemble

SHEET_DEPTH = 0.02
TOF_BIN = 0.5e-3
PIXEL = 50e-6
_EMPTY_SPAN = 0.1  # s, time axis of a trace with no atoms
AXES = {"x": 0, "y": 1, "z": 2}


def _phase_space(snapshot):
    if isinstance(snapshot, AtomEnsemble):
        return snapshot.positions, snapshot.velocities, snapshot.weight
    pos, vel = snapshot[:2]
    w = snapshot[2] if len(snapshot) > 2 else 1.0
    return np.asarray(pos, dtype=float).reshape(-1, 3), np.asarray(vel, dtype=float).reshape(-1, 3), w


def crossing_times(positions, velocities, sheet_depth=SHEET_DEPTH, const=CONSTANTS):
    """Ballistic time (s) for each atom to reach z = -sheet_depth."""
    z0 = np.asarray(positions, dtype=float).reshape(-1, 3)[:, 2]
    vz = np.asarray(velocities, dtype=float).reshape(-1, 3)[:, 2]
    h = z0 + sheet_depth
    if np.any(h < 0):
        raise ValueError("light sheet must lie below all atoms")
    g = const.g_accel
    return (vz + np.sqrt(vz * vz + 2.0 * g * h)) / g


@dataclass(frozen=True)
class TofTrace:
    """Weighted sheet-crossing histogram; ``edges`` in ms."""

    edges: np.ndarray
    counts: np.ndarray
    sheet_depth: float = SHEET_DEPTH

    def __post_init__(self):
        if len(self.edges) != len(self.counts) + 1:
            raise ValueError("need one more edge than count")
        if np.any(np.asarray(self.counts) < 0):
            raise ValueError("counts must be >= 0")

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def bin_width(self):
        return float(self.edges[1] - self.edges[0])

    @property
    def total(self):
        return float(self.counts.sum())


def synthesize_tof(snapshot, sheet_depth=SHEET_DEPTH, bin_width=TOF_BIN, weight=None, const=CONSTANTS):
    """Histogram of crossing times, counts weighted to physical atoms.

    Bin edges sit on multiples of ``bin_width`` and cover every atom, so
    the counts always sum to the ensemble weight.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    pos, vel, w = _phase_space(snapshot)
    w = w if weight is None else weight
    bw_ms = bin_width * 1e3
    if len(pos) == 0:
        edges = np.arange(0.0, _EMPTY_SPAN * 1e3 + bw_ms / 2, bw_ms)
        return TofTrace(edges, np.zeros(len(edges) - 1), sheet_depth)
    t = crossing_times(pos, vel, sheet_depth, const) * 1e3
    lo = math.floor(t.min() / bw_ms)
    hi = math.floor(t.max() / bw_ms) + 1
    edges = np.arange(lo, hi + 1) * bw_ms
    idx = np.clip(np.floor(t / bw_ms).astype(np.int64) - lo, 0, hi - lo - 1)
    counts = np.bincount(idx, minlength=hi - lo).astype(float) * w
    return TofTrace(edges, counts, sheet_depth)


@dataclass(frozen=True)
class PeakFit:
    """One Gaussian component of a TOF trace (times in ms)."""

    center: float
    width: float
    fraction: float
    T_z: float = float("nan")
    residual: float = 0.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("peak width must be > 0")

    def fall_time(self, extinction_time=0.0):
        """Fall time t_f in ms; ``extinction_time`` (ms) for traces on another clock."""
        return self.center - extinction_time


def _gauss(t, a, mu, sigma):
    return a * np.exp(-0.5 * ((t - mu) / sigma) ** 2)


def _ballistic_shape(depth, g):
    """Peak model: Gaussian in launch velocity, seen on the arrival-time axis.

    Parameters are (amplitude, centre ms, width ms) like a Gaussian; the
    width is the time spread at the centre, and the area is
    a * width * sqrt(2 pi) exactly.
    """
    def v_of(t):
        return 0.5 * g * t - depth / t

    def dv_dt(t):
        return 0.5 * g + depth / (t * t)

    def shape(t_ms, a, mu_ms, s_ms):
        t, mu = np.maximum(t_ms * 1e-3, 1e-6), mu_ms * 1e-3
        j0 = dv_dt(mu)
        z = (v_of(t) - v_of(mu)) / (s_ms * 1e-3 * j0)
        return a * np.exp(-0.5 * z * z) * dv_dt(t) / j0

    return shape


def _fit(model, t, y, p0, bounds):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            popt, _ = curve_fit(model, t, y, p0=p0, bounds=bounds, maxfev=20000)
        except (RuntimeError, ValueError):
            return None, math.inf
    return popt, float(np.sum((model(t, *popt) - y) ** 2))


def decompose_peaks(trace: TofTrace, improvement=5.0, min_separation=1.0, shape="ballistic",
                    const=CONSTANTS):
    """Fit one or two peaks; keep two only if the residual drops by ``improvement``.

    A two-peak fit must also be resolved: centres at least
    ``min_separation`` times the larger width apart, otherwise a single
    skewed cloud could pass as two. ``shape`` is ``"ballistic"`` (a
    Gaussian velocity distribution seen through the fall kinematics) or
    ``"gaussian"`` (Gaussian in time). Counts are normalized before
    fitting, so the result does not depend on an overall scale. Peaks are
    sorted by centre; the last one is the delayed cloud.
    """
    total = trace.total
    if not total > 0:
        raise ValueError("cannot decompose an all-zero trace")
    if shape == "ballistic":
        one = _ballistic_shape(trace.sheet_depth, const.g_accel)
    elif shape == "gaussian":
        one = _gauss
    else:
        raise ValueError("shape must be 'ballistic' or 'gaussian'")

    def two(t, a1, mu1, s1, a2, mu2, s2):
        return one(t, a1, mu1, s1) + one(t, a2, mu2, s2)

    t = trace.centers
    bw = trace.bin_width
    y = np.asarray(trace.counts) / (total * bw)  # density per ms
    span = (max(t[0] - bw, 1e-3), t[-1] + bw)
    w_max = max(t[-1] - t[0], bw)
    mean = float(np.sum(t * y) * bw)
    sd = max(math.sqrt(max(float(np.sum((t - mean) ** 2 * y) * bw), 0.0)), bw / 2)
    lo1 = [0.0, span[0], bw / 4]
    hi1 = [np.inf, span[1], w_max]
    p1, r1 = _fit(one, t, y, [y.max(), mean, sd], (lo1, hi1))
    if p1 is None:
        raise RuntimeError("single-peak fit failed")
    best = [p1]
    resid = r1

    if len(t) >= 6:
        # seeds for two components: the two tallest local maxima, else split the mean
        pk, props = find_peaks(np.concatenate(([0.0], y, [0.0])), height=0)
        pk = pk - 1
        if len(pk) >= 2:
            top = pk[np.argsort(props["peak_heights"])[-2:]]
            m1, m2 = sorted(t[top])
        else:
            m1, m2 = mean - sd, mean + sd
        s0 = max(sd / 2, bw)
        p0 = [y.max(), m1, s0, y.max(), m2, s0]
        p2, r2 = _fit(two, t, y, p0, (lo1 * 2, hi1 * 2))
        if p2 is not None and r2 * improvement < r1:
            resolved = abs(p2[4] - p2[1]) >= min_separation * max(p2[2], p2[5])
            if resolved:
                best = [p2[:3], p2[3:]]
                resid = r2

    areas = np.array([a * s * math.sqrt(2 * math.pi) for a, _, s in best])
    norm = max(1.0, float(areas.sum()))
    peaks = []
    for (a, mu, s), area in zip(best, areas):
        T = _jacobian_temperature(mu, s, trace.sheet_depth, 0.0, 0.0, const)[0]
        peaks.append(PeakFit(float(mu), float(s), float(area / norm), T, resid))
    return sorted(peaks, key=lambda p: p.center)


def temperature_from_ensemble(snapshot, axis="z", select=None, const=CONSTANTS):
    """m var(v_axis) / k_B over the selected atoms (true velocities)."""
    _, vel, _ = _phase_space(snapshot)
    v = vel[:, AXES[axis]]
    if select is not None:
        v = v[np.asarray(select)]
    if len(v) < 2:
        raise ValueError("need at least two atoms for a temperature")
    return const.mass * float(np.var(v)) / K_B


@dataclass(frozen=True)
class TofTemperature:
    T: float
    sigma_v: float
    upper_bound: bool


def _jacobian_temperature(center_ms, width_ms, depth, cloud_sigma_z, bin_ms, const):
    t = center_ms * 1e-3
    g = const.g_accel
    v = (0.5 * g * t * t - depth) / t  # vertical velocity (up positive) that lands at t
    root = math.sqrt(v * v + 2.0 * g * depth)
    dt_dv = t / root
    floor2 = (cloud_sigma_z / root) ** 2 + (bin_ms * 1e-3) ** 2 / 12.0
    s2 = (width_ms * 1e-3) ** 2 - floor2
    upper = s2 <= 0
    sigma_t = width_ms * 1e-3 if upper else math.sqrt(s2)
    sigma_v = sigma_t / dt_dv
    return const.mass * sigma_v ** 2 / K_B, sigma_v, upper


def temperature_from_tof(peak: PeakFit, sheet_depth=SHEET_DEPTH, cloud_sigma_z=0.0, bin_width=TOF_BIN,
                         const=CONSTANTS):
    """Velocity spread at extinction inferred from a TOF peak width.

    The width is mapped through the ballistic Jacobian dt/dv at the peak
    centre after removing, in quadrature, the spread from the initial
    cloud height and the histogram binning. When the width does not
    exceed that floor the result is an upper bound.
    """
    T, sv, upper = _jacobian_temperature(peak.center, peak.width, sheet_depth, cloud_sigma_z,
                                         bin_width * 1e3, const)
    return TofTemperature(T, sv, upper)


@dataclass(frozen=True)
class XZImage:
    counts: np.ndarray  # shape (n_x, n_z)
    x_edges: np.ndarray
    z_edges: np.ndarray

    def centroid(self):
        xc = 0.5 * (self.x_edges[1:] + self.x_edges[:-1])
        zc = 0.5 * (self.z_edges[1:] + self.z_edges[:-1])
        tot = self.counts.sum()
        if tot <= 0:
            raise ValueError("empty image")
        return float(self.counts.sum(axis=1) @ xc / tot), float(self.counts.sum(axis=0) @ zc / tot)


def propagate_ballistic(positions, velocities, delay, const=CONSTANTS):
    pos = np.asarray(positions, dtype=float).reshape(-1, 3) + np.asarray(velocities, dtype=float) * delay
    pos[:, 2] -= 0.5 * const.g_accel * delay * delay
    return pos


def image_xz(snapshot, delay, pixel=PIXEL, weight=None, const=CONSTANTS):
    """Weighted (x, z) histogram after ``delay`` seconds of free fall."""
    if delay < 0:
        raise ValueError("delay must be >= 0")
    pos, vel, w = _phase_space(snapshot)
    w = w if weight is None else weight
    p = propagate_ballistic(pos, vel, delay, const)
    if len(p) == 0:
        e = np.array([0.0, pixel])
        return XZImage(np.zeros((1, 1)), e, e)
    edges = []
    for col in (p[:, 0], p[:, 2]):
        lo = math.floor(col.min() / pixel)
        hi = math.floor(col.max() / pixel) + 1
        edges.append(np.arange(lo, hi + 1) * pixel)
    H, xe, ze = np.histogram2d(p[:, 0], p[:, 2], bins=edges)
    return XZImage(H * w, xe, ze)


class TofPeakDecomposer(BaseEstimator):
    """TOF peak decomposition as an estimator.

    ``fit`` takes per-atom crossing times (s), builds the trace and fits
    the Gaussian components; ``predict`` labels crossing times with the
    index of the most probable component (0 = earliest).
    """

    def __init__(self, bin_width=TOF_BIN, improvement=5.0, min_separation=1.0, shape="ballistic",
                 sheet_depth=SHEET_DEPTH):
        self.bin_width = bin_width
        self.improvement = improvement
        self.min_separation = min_separation
        self.shape = shape
        self.sheet_depth = sheet_depth

    def _validate(self, X):
        X = np.asarray(X, dtype=float).ravel()
        if X.size == 0 or not np.all(np.isfinite(X)):
            raise ValueError("crossing times must be a non-empty finite array")
        return X

    def fit(self, X, y=None, sample_weight=1.0):
        X = self._validate(X)
        bw = self.bin_width * 1e3
        t = X * 1e3
        lo = math.floor(t.min() / bw)
        hi = math.floor(t.max() / bw) + 1
        idx = np.clip(np.floor(t / bw).astype(np.int64) - lo, 0, hi - lo - 1)
        counts = np.bincount(idx, minlength=hi - lo).astype(float) * sample_weight
        self.trace_ = TofTrace(np.arange(lo, hi + 1) * bw, counts, self.sheet_depth)
        self.peaks_ = decompose_peaks(self.trace_, self.improvement, self.min_separation, self.shape)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "peaks_")
        t = self._validate(X) * 1e3
        one = _ballistic_shape(self.sheet_depth, CONSTANTS.g_accel) if self.shape == "ballistic" else _gauss
        # component densities with unit area, weighted by their fractions
        dens = np.stack([p.fraction * one(t, 1.0 / (p.width * math.sqrt(2 * math.pi)), p.center, p.width)
                         for p in self.peaks_], axis=1)
        tot = dens.sum(axis=1, keepdims=True)
        out = np.full_like(dens, 1.0 / dens.shape[1])
        np.divide(dens, tot, out=out, where=tot > 0)
        return out

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)
