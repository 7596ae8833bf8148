"""Deterministic accelerations and recoil kicks.

Cavity-Doppler friction acts along x (absorption axis) and z (cavity
axis) with one coefficient, ``2 eta Gamma_fs v_rec k / kappa_eff``.
Recoil kicks are sampled per scattering event.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
import warnings

import numpy as np

from .core import CONSTANTS, HBAR, K_B, DriveConfig
from .zeeman import scattering_rate_fs

FREE_SPACE = "free_space"
CAVITY = "cavity"


@dataclass(frozen=True)
class ForceModelConfig:
    """Force-model switches and the cooling-volume envelope.

    The envelope is a hard box (full extents ``box``) times a transverse
    Gaussian ``exp(-2 (x^2 + y^2) / w_env^2)``; ``w_env=None`` disables
    the Gaussian.
    """

    kappa_eff: float = CONSTANTS.kappa
    include_fs_doppler_x: bool = False
    dipole_axis: tuple = (0.0, 0.0, 1.0)
    box: tuple = (2.5e-3, 800e-6, 0.075)
    w_env: float = 600e-6
    emission: str = "dipole"
    gravity: bool = True

    def __post_init__(self):
        if not self.kappa_eff > 0:
            raise ValueError("kappa_eff must be > 0")
        if len(self.box) != 3 or min(self.box) <= 0:
            raise ValueError("envelope extents must be positive")
        if self.w_env is not None and not self.w_env > 0:
            raise ValueError("w_env must be positive")
        if self.emission not in ("dipole", "isotropic"):
            raise ValueError("emission must be 'dipole' or 'isotropic'")
        axis = np.asarray(self.dipole_axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ValueError("dipole_axis must be non-zero")
        object.__setattr__(self, "dipole_axis", tuple(axis / n))

    @classmethod
    def for_drive(cls, drive: DriveConfig, **kw):
        return cls(dipole_axis=tuple(drive.dipole_axis), **kw)


def envelope(positions, cfg: ForceModelConfig):
    """Coupling factor in [0, 1]; 1 at the centre, 0 outside the cooling volume."""
    pos = np.atleast_2d(positions)
    half = 0.5 * np.asarray(cfg.box)
    inside = np.all(np.abs(pos) <= half, axis=1)
    out = inside.astype(float)
    if cfg.w_env is not None:
        r2 = pos[:, 0] ** 2 + pos[:, 1] ** 2
        out *= np.exp(-2.0 * r2 / cfg.w_env ** 2)
    return out


def friction_rate(eta, gamma_fs, cfg: ForceModelConfig, const=CONSTANTS):
    """Velocity damping rate (1/s) of the cavity force."""
    return 2.0 * eta * gamma_fs * const.v_rec * const.k / cfg.kappa_eff


def cavity_friction_accel(v, eta, gamma_fs, cfg: ForceModelConfig, const=CONSTANTS, env=1.0):
    """Cavity-Doppler deceleration along x and z (m/s^2), zero along y."""
    if eta < 0 or gamma_fs < 0:
        raise ValueError("eta and gamma_fs must be >= 0")
    v = np.asarray(v, dtype=float)
    beta = friction_rate(eta, gamma_fs, cfg, const)
    a = -beta * v * np.asarray(env)[..., None] if v.ndim == 2 else -beta * v * env
    a = np.array(a, dtype=float)
    a[..., 1] = 0.0
    return a


def check_linear_regime(v, cfg: ForceModelConfig, const=CONSTANTS):
    """Warn when 2 k v exceeds the cavity linewidth (sideband structure ignored)."""
    vmax = float(np.max(np.abs(v))) if np.size(v) else 0.0
    if 2.0 * const.k * vmax > cfg.kappa_eff:
        warnings.warn(f"|v|={vmax:.3g} m/s outside linear friction regime", RuntimeWarning)
        return False
    return True


def fs_doppler_beta(drive: DriveConfig, const=CONSTANTS, s_single=None):
    """Two-beam Doppler damping rate (1/s), positive for red detuning."""
    s = drive.s_single_beam if s_single is None else s_single
    d = drive.delta_a
    G = const.Gamma
    D = 1.0 + 2.0 * s + (2.0 * d / G) ** 2
    # -(hbar k / m) * 2k * dR/d(delta), R = (G/2) s / D per beam
    return -8.0 * HBAR * const.k ** 2 * s * d / (const.mass * G * D * D)


def fs_doppler_accel_x(v_x, drive: DriveConfig, const=CONSTANTS, s_single=None):
    return -fs_doppler_beta(drive, const, s_single) * np.asarray(v_x, dtype=float)


def doppler_temperature_x(delta_a, const=CONSTANTS):
    """Low-intensity one-dimensional Doppler temperature (K)."""
    G = const.Gamma
    d = abs(delta_a)
    return HBAR * G / (4.0 * K_B) * (2.0 * d / G + G / (2.0 * d))


def _orthonormal_frame(axis):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2, axis


def sample_emission_directions(n, rng, dipole_axis=(0.0, 0.0, 1.0), pattern="dipole"):
    """Unit vectors from a sin^2(theta) pattern about ``dipole_axis`` (or isotropic)."""
    xi = rng.random(n)
    if pattern == "isotropic":
        u = 2.0 * xi - 1.0
    else:
        # inverse CDF of (3/4)(1 - u^2) on [-1, 1]
        u = 2.0 * np.sin(np.arcsin(2.0 * xi - 1.0) / 3.0)
    phi = 2.0 * math.pi * rng.random(n)
    s = np.sqrt(np.clip(1.0 - u * u, 0.0, None))
    e1, e2, ax = _orthonormal_frame(dipole_axis)
    return (s * np.cos(phi))[:, None] * e1 + (s * np.sin(phi))[:, None] * e2 + u[:, None] * ax


def sample_recoil_kicks(event, dipole_axis, rng, n=1, pattern="dipole", const=CONSTANTS):
    """Momentum kicks (kg m/s), shape (n, 3), for ``n`` events of one type."""
    hk = HBAR * const.k
    kicks = np.zeros((n, 3))
    kicks[:, 0] = hk * rng.choice((-1.0, 1.0), size=n)
    if event == CAVITY:
        kicks[:, 2] += hk * rng.choice((-1.0, 1.0), size=n)
    elif event == FREE_SPACE:
        kicks += hk * sample_emission_directions(n, rng, dipole_axis, pattern)
    else:
        raise ValueError(f"unknown scatter event {event!r}")
    return kicks


def emission_second_moment(dipole_axis, axis, pattern="dipole"):
    """<(k_hat . axis)^2> of the emission pattern."""
    if pattern == "isotropic":
        return 1.0 / 3.0
    c = float(np.dot(np.asarray(dipole_axis) / np.linalg.norm(dipole_axis), axis))
    # sin^2 pattern about d: <n_i n_j> = (2 delta_ij - d_i d_j) / 5
    return (2.0 - c * c) / 5.0


def predicted_equilibrium_Tz(eta, cfg: ForceModelConfig = None, const=CONSTANTS):
    """Closed-form vertical temperature k_B T = hbar kappa_eff (eta + 1/5) / (2 eta)."""
    if eta <= 0:
        raise ValueError("eta must be > 0 for a friction equilibrium")
    kappa = const.kappa if cfg is None else cfg.kappa_eff
    return HBAR * kappa * (eta + 0.2) / (2.0 * eta * K_B)


def small_eta_Tz(eta, cfg: ForceModelConfig = None, const=CONSTANTS):
    """Small-eta limit hbar kappa / (10 k_B eta)."""
    if eta <= 0:
        raise ValueError("eta must be > 0")
    kappa = const.kappa if cfg is None else cfg.kappa_eff
    return HBAR * kappa / (10.0 * K_B * eta)


def balance_Tz(eta, cfg: ForceModelConfig = None, const=CONSTANTS):
    """Friction/diffusion balance of the sampled kick model along z.

    Heating per unit Gamma_fs is v_rec^2 (eta + q_z) with q_z the emission
    second moment along z; damping of <v_z^2> is twice the friction rate.
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    cfg = cfg or ForceModelConfig()
    qz = emission_second_moment(cfg.dipole_axis, (0.0, 0.0, 1.0), cfg.emission)
    return HBAR * cfg.kappa_eff * (eta + qz) / (4.0 * eta * K_B)


def balance_Tx_doppler(drive: DriveConfig, cfg: ForceModelConfig = None, const=CONSTANTS):
    """Free-space Doppler equilibrium along x for the sampled 3-D kick model."""
    cfg = cfg or ForceModelConfig.for_drive(drive)
    qx = emission_second_moment(cfg.dipole_axis, (1.0, 0.0, 0.0), cfg.emission)
    rate = scattering_rate_fs(drive.s_total, drive.delta_a, const)
    beta = fs_doppler_beta(drive, const)
    return const.mass * rate * const.v_rec ** 2 * (1.0 + qx) / (2.0 * beta * K_B)
