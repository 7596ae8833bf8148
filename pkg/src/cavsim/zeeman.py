"""Internal-state engine for the F=4 ground manifold.

Rate equations for the nine Zeeman populations under pi pumping on
F=4 -> F'=5 (quantization axis along the incident polarization), Larmor
mixing from the field component transverse to that axis, light shifts,
and the quasi-static collective-emission threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
import math

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import CONSTANTS, HBAR, MU_B, TWO_PI, DriveConfig
from .spectrum import ETA_S_MAX, eta_below_threshold

F_G = 4
M_VALUES = np.arange(-F_G, F_G + 1)
N_SUB = len(M_VALUES)
Q_PUMP = 0
# average of cg_squared(m, 0) over a uniform population, (1/3)(11/9)
_CG_PI_MEAN = 11.0 / 27.0


def scattering_rate_fs(s_total, delta_a, const=CONSTANTS):
    """Free-space scattering rate per atom (1/s)."""
    s_total = np.asarray(s_total, dtype=float)
    if np.any(s_total < 0):
        raise ValueError("saturation parameter must be >= 0")
    x2 = (2.0 * delta_a / const.Gamma) ** 2
    out = 0.5 * const.Gamma * s_total / (1.0 + s_total + x2)
    return float(out) if out.ndim == 0 else out


def saturation_for_rate(gamma_fs, delta_a, const=CONSTANTS):
    """Total saturation parameter giving scattering rate ``gamma_fs``."""
    half = 0.5 * const.Gamma
    if not 0 <= gamma_fs < half:
        raise ValueError("rate must lie in [0, Gamma/2)")
    x2 = (2.0 * delta_a / const.Gamma) ** 2
    return gamma_fs * (1.0 + x2) / (half - gamma_fs)


def saturation_parameter_p(s_total, delta_a, const=CONSTANTS):
    """Off-resonant saturation parameter of the whole standing wave."""
    return s_total / (1.0 + (2.0 * delta_a / const.Gamma) ** 2)


def cg_squared(m, q):
    """|<4,m; 1,q | 5,m+q>|^2."""
    m, q = int(m), int(q)
    if abs(m) > F_G:
        raise ValueError(f"m={m} outside F=4 manifold")
    if q not in (-1, 0, 1):
        raise ValueError("q must be -1, 0 or +1")
    j = F_G
    if abs(m + q) > j + 1:
        raise ValueError("target sublevel outside F'=5")
    if q == 1:
        return (j + m + 1) * (j + m + 2) / ((2 * j + 1) * (2 * j + 2))
    if q == 0:
        return (j - m + 1) * (j + m + 1) / ((2 * j + 1) * (j + 1))
    return (j - m + 1) * (j - m + 2) / ((2 * j + 1) * (2 * j + 2))


_CG = {q: np.array([cg_squared(m, q) for m in M_VALUES]) for q in (-1, 0, 1)}


@dataclass(frozen=True)
class ZeemanState:
    populations: np.ndarray
    light_shifts: np.ndarray
    inversion_w: float = 0.0
    gain_pair: tuple = (0, 1)

    @classmethod
    def uniform(cls):
        p = np.full(N_SUB, 1.0 / N_SUB)
        return cls(p, np.zeros(N_SUB), 0.0)


def inversion(populations):
    """Largest population excess on a Raman gain transition.

    Gain runs m -> m+1 for m >= 0 and m -> m-1 for m <= 0. Returns the
    excess and the (m, m') pair it belongs to.
    """
    p = np.asarray(populations)
    best, pair = 0.0, (0, 1)
    for m in range(0, F_G):
        i = m + F_G
        up = p[i] - p[i + 1]
        down = p[F_G - m] - p[F_G - m - 1]
        if up > best:
            best, pair = up, (m, m + 1)
        if down > best:
            best, pair = down, (-m, -m - 1)
    return float(best), pair


def larmor_rate(drive: DriveConfig, const=CONSTANTS):
    """Larmor angular frequency from the field component transverse to the polarization."""
    B = np.asarray(drive.b_field) * 1e-4  # gauss -> tesla
    axis = drive.dipole_axis
    b_perp = np.linalg.norm(B - axis * (B @ axis))
    return const.g_F * MU_B * b_perp / HBAR


def _pump_base():
    # pumping out of m at rate cg^2(m, 0) / mean; repopulation through decay of |5, m>
    A = -np.diag(_CG[Q_PUMP] / _CG_PI_MEAN)
    for i, m in enumerate(M_VALUES):
        for q in (-1, 0, 1):
            target = m - q
            if abs(target) <= F_G:
                A[target + F_G, i] += _CG[Q_PUMP][i] / _CG_PI_MEAN * cg_squared(target, q)
    return A


def _larmor_base():
    L = np.zeros((N_SUB, N_SUB))
    for i in range(N_SUB - 1):
        L[i, i] -= 1.0
        L[i + 1, i] += 1.0
        L[i + 1, i + 1] -= 1.0
        L[i, i + 1] += 1.0
    return L


_PUMP_BASE = _pump_base()
_LARMOR_BASE = _larmor_base()


def rate_matrix(gamma_fs, omega_L=0.0):
    """Generator A of d(pi)/dt = A pi for pi pumping plus Larmor mixing."""
    A = gamma_fs * _PUMP_BASE
    if omega_L > 0:
        A = A + omega_L * _LARMOR_BASE
    return A


def light_shift(m, drive: DriveConfig, const=CONSTANTS, s_total=None):
    """Light shift of sublevel ``m`` in Hz (sign follows the detuning)."""
    if drive.delta_a == 0:
        raise ValueError("dispersive light shift undefined on resonance")
    s = drive.s_total if s_total is None else s_total
    gamma_hz = const.Gamma / TWO_PI
    return gamma_hz ** 2 * s * cg_squared(m, Q_PUMP) / (8.0 * drive.delta_a / TWO_PI)


def light_shifts(drive, const=CONSTANTS, s_total=None):
    if drive.delta_a == 0:
        raise ValueError("dispersive light shift undefined on resonance")
    s = drive.s_total if s_total is None else s_total
    gamma_hz = const.Gamma / TWO_PI
    return gamma_hz ** 2 * s * _CG[Q_PUMP] / (8.0 * drive.delta_a / TWO_PI)


def _with_derived(populations, drive, const, s_total):
    w, pair = inversion(populations)
    shifts = light_shifts(drive, const, s_total) if drive.delta_a != 0 else np.zeros(N_SUB)
    return ZeemanState(populations, shifts, w, pair)


def pump_step(state: ZeemanState, drive: DriveConfig, gamma_fs, dt, const=CONSTANTS, s_total=None):
    """Advance the populations by ``dt`` with explicit Euler sub-steps."""
    p = np.asarray(state.populations, dtype=float)
    if abs(p.sum() - 1.0) > 1e-6 or np.any(p < -1e-12):
        raise ValueError("populations must be normalized and non-negative")
    if gamma_fs * dt >= 0.1:
        raise ValueError("pump step too large: need dt*gamma_fs < 0.1")
    omega_L = larmor_rate(drive, const)
    A = rate_matrix(gamma_fs, omega_L)
    fastest = np.max(-np.diag(A))
    n_sub = max(1, math.ceil(fastest * dt / 0.1))
    h = dt / n_sub
    for _ in range(n_sub):
        p = p + h * (A @ p)
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    return _with_derived(p, drive, const, s_total)


@lru_cache(maxsize=64)
def _propagator(gamma_fs, omega_L, dt):
    return expm(rate_matrix(gamma_fs, omega_L) * dt)


def propagate(state: ZeemanState, drive: DriveConfig, gamma_fs, dt, const=CONSTANTS, s_total=None,
              omega_L=None):
    """Exact populations after ``dt`` at constant rates (matrix exponential).

    Unlike :func:`pump_step` there is no step-size restriction; propagators
    are cached, so repeated steps at the same rate cost one matrix product.
    """
    if gamma_fs < 0 or dt < 0:
        raise ValueError("gamma_fs and dt must be >= 0")
    if omega_L is None:
        omega_L = larmor_rate(drive, const)
    U = _propagator(float(gamma_fs), float(omega_L), float(dt))
    p = np.clip(U @ np.asarray(state.populations, dtype=float), 0.0, None)
    return _with_derived(p / p.sum(), drive, const, s_total)


def steady_state(drive: DriveConfig, gamma_fs=1.0, const=CONSTANTS, s_total=None):
    """Null vector of the rate matrix, normalized (independent of overall rate)."""
    A = rate_matrix(gamma_fs, larmor_rate(drive, const))
    M = np.vstack([A, np.ones(N_SUB)])
    rhs = np.zeros(N_SUB + 1)
    rhs[-1] = 1.0
    p = np.linalg.lstsq(M, rhs, rcond=None)[0]
    p = np.clip(p, 0.0, None)
    return _with_derived(p / p.sum(), drive, const, s_total)


@dataclass(frozen=True)
class EmissionState:
    eta: float
    eta_s: float
    eta_c: float
    gamma_fs: float
    p_sat: float
    above_threshold: bool
    gain: float = 0.0
    I_th: float = None

    @property
    def gamma_c(self):
        return self.eta * self.gamma_fs


def gain_suppression(state: ZeemanState, kappa):
    """Lorentzian weight of the non-degenerate gain pair against the cavity linewidth."""
    m1, m2 = state.gain_pair
    du = state.light_shifts[m1 + F_G] - state.light_shifts[m2 + F_G]
    hw = kappa / 2.0 / TWO_PI
    return du * du / (du * du + hw * hw)


def collective_gain(state, drive, n_in_mode, gamma_fs, table, g0, const=CONSTANTS):
    """Small-signal collective gain (same units as kappa)."""
    if n_in_mode <= 0 or gamma_fs <= 0:
        return 0.0
    rho_rel = eta_below_threshold(table, drive.Delta_c / TWO_PI) / ETA_S_MAX
    return g0 * n_in_mode * gamma_fs * state.inversion_w * gain_suppression(state, const.kappa) * rho_rel


def threshold_state(state: ZeemanState, drive: DriveConfig, n_physical_in_mode, gamma_fs, table,
                    g0, eta_c=1.0, const=CONSTANTS, s_total=None):
    """Quasi-static emission regime: eta = eta_c above threshold, else eta_s(Delta_c)."""
    eta_s = float(eta_below_threshold(table, drive.Delta_c / TWO_PI))
    s = drive.s_total if s_total is None else s_total
    p = saturation_parameter_p(s, drive.delta_a, const)
    G = collective_gain(state, drive, n_physical_in_mode, gamma_fs, table, g0, const)
    above = bool(n_physical_in_mode > 0 and G >= const.kappa * (1.0 - 1e-12))
    return EmissionState(eta_c if above else eta_s, eta_s, eta_c, float(gamma_fs), float(p), above, float(G))


def eta_saturation_rolloff(emission: EmissionState, p_sat=None):
    """Slow decrease of eta above threshold as the transition saturates."""
    if not emission.above_threshold:
        return emission
    p = emission.p_sat if p_sat is None else p_sat
    if p < 0:
        raise ValueError("p_sat must be >= 0")
    eta = max(emission.eta / (1.0 + p), emission.eta_s)
    return replace(emission, eta=eta, p_sat=p)


# operating point where threshold is pinned: Gamma_fs = 2e5 1/s per atom, 1e6 atoms
REFERENCE = dict(delta_a=TWO_PI * -78e6, Delta_c=TWO_PI * -150e6, gamma_fs=2e5, n_atoms=1e6)


class ThresholdModel(BaseEstimator):
    """Collective-emission threshold with its single gain constant.

    ``fit`` pins the gain constant so that the reference operating point
    sits exactly at threshold; ``predict`` maps drives to emission states
    using the steady-state sublevel populations.
    """

    def __init__(self, ref_delta_a=REFERENCE["delta_a"], ref_Delta_c=REFERENCE["Delta_c"],
                 ref_gamma_fs=REFERENCE["gamma_fs"], ref_n_atoms=REFERENCE["n_atoms"], eta_c=1.0,
                 table=None):
        self.ref_delta_a = ref_delta_a
        self.ref_Delta_c = ref_Delta_c
        self.ref_gamma_fs = ref_gamma_fs
        self.ref_n_atoms = ref_n_atoms
        self.eta_c = eta_c
        self.table = table

    def _table(self):
        if self.table is not None:
            return self.table
        from .spectrum import default_table
        return default_table()

    def fit(self, X=None, y=None, const=CONSTANTS):
        s = saturation_for_rate(self.ref_gamma_fs, self.ref_delta_a, const)
        drive = DriveConfig(s_single_beam=s / 2, delta_a=self.ref_delta_a, Delta_c=self.ref_Delta_c)
        st = steady_state(drive, const=const)
        G1 = collective_gain(st, drive, self.ref_n_atoms, self.ref_gamma_fs, self._table(), 1.0, const)
        if G1 <= 0:
            raise ValueError("reference point has no gain; cannot calibrate")
        self.g0_ = const.kappa / G1
        self.table_ = self._table()
        self.reference_drive_ = drive
        return self

    def evaluate(self, state, drive, n_in_mode, gamma_fs, s_total=None, rolloff=True, const=CONSTANTS):
        check_is_fitted(self, "g0_")
        em = threshold_state(state, drive, n_in_mode, gamma_fs, self.table_, self.g0_, self.eta_c,
                             const, s_total)
        return eta_saturation_rolloff(em) if rolloff else em

    def predict(self, drive: DriveConfig, n_in_mode, with_threshold=False, const=CONSTANTS):
        """Steady-state emission regime for ``drive`` (populations relaxed)."""
        check_is_fitted(self, "g0_")
        st = steady_state(drive, const=const)
        gfs = scattering_rate_fs(drive.s_total, drive.delta_a, const)
        em = self.evaluate(st, drive, n_in_mode, gfs, const=const)
        if with_threshold:
            em = replace(em, I_th=self.threshold_intensity(drive, n_in_mode, const))
        return em

    def threshold_intensity(self, drive, n_in_mode, const=CONSTANTS, s_hi=1e4):
        """Single-beam intensity (W/m^2) where the gain reaches kappa, or inf."""
        check_is_fitted(self, "g0_")
        st = steady_state(drive, const=const)

        def excess(s_single):
            s = 2 * s_single
            gfs = scattering_rate_fs(s, drive.delta_a, const)
            st_s = replace(st, light_shifts=light_shifts(drive, const, s))
            return collective_gain(st_s, drive, n_in_mode, gfs, self.table_, self.g0_, const) / const.kappa - 1.0

        if n_in_mode <= 0 or excess(s_hi) < 0:
            return math.inf
        return brentq(excess, 1e-9, s_hi, rtol=1e-12) * const.I_s
