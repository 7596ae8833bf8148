"""Scalar observables extracted from run series and sweep summaries."""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.optimize import curve_fit


def initial_deceleration(times, mean_vz, window=200e-6, g=0.0):
    """Friction deceleration (m/s^2, positive when slowing a falling cloud) at t = 0.

    Fits the linear-friction solution v(t) = -g/beta + (v0 + g/beta) exp(-beta t)
    to the mean vertical velocity over ``window`` and returns -beta * v0.
    Pass ``g`` when gravity was on during the run.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(mean_vz, dtype=float)
    sel = (t <= window * (1 + 1e-9)) & np.isfinite(v)
    if sel.sum() < 3:
        raise ValueError("need at least three samples inside the fit window")
    t, v = t[sel] - t[sel][0], v[sel]

    def model(tt, v0, beta):
        vt = -g / beta
        return vt + (v0 - vt) * np.exp(-beta * tt)

    slope = np.polyfit(t[:3], v[:3], 1)[0] + g
    beta0 = max(abs(slope / v[0]) if v[0] != 0 else 1.0, 1.0)
    popt, _ = curve_fit(model, t, v, p0=(v[0], beta0), bounds=([-np.inf, 1e-6], [np.inf, np.inf]),
                        maxfev=20000)
    return float(-popt[1] * popt[0])


def stop_time(times, mean_vz, threshold=0.01):
    """First time at which |<v_z>| drops below ``threshold`` (s), or nan."""
    idx = np.flatnonzero(np.abs(np.asarray(mean_vz)) < threshold)
    return float(np.asarray(times)[idx[0]]) if idx.size else math.nan


def sag(times, mean_z, t_end, hold=25e-3):
    """Drop of the mean height (m, positive downward) over the last ``hold`` seconds before ``t_end``."""
    t = np.asarray(times)
    z = np.asarray(mean_z)
    if t_end - hold < t[0] - 1e-12:
        raise ValueError("run shorter than the hold window")
    return float(np.interp(t_end - hold, t, z) - np.interp(t_end, t, z))


def drift_sag(times, mean_z, hold=25e-3):
    """Sag (m, positive downward) over ``hold`` from the fitted drift of the mean height."""
    t = np.asarray(times, dtype=float)
    z = np.asarray(mean_z, dtype=float)
    ok = np.isfinite(z)
    if ok.sum() < 3:
        raise ValueError("need at least three samples")
    return float(-np.polyfit(t[ok], z[ok], 1)[0] * hold)


def lifetime(times, fraction, t_from=0.0, level=math.exp(-1)):
    """First time after ``t_from`` at which ``fraction`` falls below ``level`` of its value there, or nan."""
    t = np.asarray(times)
    f = np.asarray(fraction)
    i0 = int(np.searchsorted(t, t_from))
    if i0 >= len(t) or f[i0] <= 0:
        return math.nan
    idx = np.flatnonzero(f[i0:] < level * f[i0])
    return float(t[i0 + idx[0]] - t_from) if idx.size else math.nan


def relaxation_time(times, T, t_max=None):
    """Fit T(t) = T_inf + (T_0 - T_inf) exp(-t/tau); returns (tau, T_inf)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(T, dtype=float)
    sel = np.isfinite(y) if t_max is None else (t <= t_max) & np.isfinite(y)
    t, y = t[sel], y[sel]
    if len(t) < 4:
        raise ValueError("need at least four samples")

    def model(tt, t_inf, dT, tau):
        return t_inf + dT * np.exp(-tt / tau)

    span = t[-1] - t[0]
    p0 = (y[-1], y[0] - y[-1], span / 5 if span > 0 else 1e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        popt, _ = curve_fit(model, t - t[0], y, p0=p0, bounds=([0, -np.inf, 1e-7], [np.inf, np.inf, 10 * span]),
                            maxfev=20000)
    return float(popt[2]), float(popt[0])


def time_average(times, values, t_from, t_to=math.inf):
    t = np.asarray(times)
    sel = (t >= t_from) & (t <= t_to)
    if not sel.any():
        raise ValueError("empty averaging window")
    return float(np.mean(np.asarray(values)[sel]))


def plateau_onset(t_e, t_f, tolerance):
    """Onset of the flat part of a fall-time curve.

    The plateau level is the largest fall time; the onset is the first
    exposure time whose fall time lies within ``tolerance`` of it.
    Returns (onset, plateau, monotone_then_flat), where the shape test asks
    for a non-decreasing rise (within ``tolerance``) up to the onset and a
    slope after it below a tenth of the initial slope.
    """
    t_e = np.asarray(t_e, dtype=float)
    t_f = np.asarray(t_f, dtype=float)
    ok = np.isfinite(t_f)
    t_e, t_f = t_e[ok], t_f[ok]
    if len(t_e) < 3:
        return math.nan, math.nan, False
    plateau = float(t_f.max())
    i_on = int(np.flatnonzero(t_f >= plateau - tolerance)[0])
    onset = float(t_e[i_on])
    rise = t_f[: i_on + 1]
    monotone = bool(np.all(np.diff(rise) >= -tolerance)) and i_on > 0
    slope0 = (t_f[1] - t_f[0]) / (t_e[1] - t_e[0])
    if i_on == len(t_e) - 1:
        return onset, plateau, False  # still rising at the last point: no plateau seen
    after = np.diff(t_f[i_on:]) / np.diff(t_e[i_on:])
    flat = bool(slope0 > 0 and np.all(np.abs(after) <= 0.1 * slope0))
    return onset, plateau, monotone and flat


def eta_jump(values, eta):
    """Largest ratio between neighbouring sweep points; returns (factor, index of the upper point)."""
    eta = np.asarray(eta, dtype=float)
    if len(eta) < 2:
        return math.nan, -1
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(eta[:-1] > 0, eta[1:] / eta[:-1], np.inf * (eta[1:] > 0))
    i = int(np.nanargmax(r))
    return float(r[i]), i + 1
