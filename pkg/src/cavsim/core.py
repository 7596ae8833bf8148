"""Physical constants, drive/ensemble configuration and MOT sampling.

Coordinate frame: z vertical along the cavity axis (gravity along -z),
x along the incident standing wave, y transverse. SI units throughout;
unit conversion happens only in :mod:`cavsim.scenarios`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import constants as sc

HBAR = sc.hbar
K_B = sc.k
C_LIGHT = sc.c
MU_B = sc.physical_constants["Bohr magneton"][0]
TWO_PI = 2.0 * math.pi

POLARIZATIONS = ("vertical_z", "horizontal_y")


@dataclass(frozen=True)
class Constants:
    """Cs D2 and cavity scalars used everywhere.

    The mass is derived from the recoil velocity so that ``mass*v_rec``
    equals one photon momentum exactly.
    """

    wavelength: float = 852e-9
    v_rec: float = 3.5e-3
    I_s: float = 11.0  # W/m^2 (1.1 mW/cm^2)
    Gamma: float = TWO_PI * 5.22e6
    g_accel: float = 9.81
    kappa: float = TWO_PI * 2e6
    g_F: float = 0.25

    def __post_init__(self):
        for name in ("wavelength", "v_rec", "I_s", "Gamma", "g_accel", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"constant {name} must be positive")

    @property
    def k(self) -> float:
        return TWO_PI / self.wavelength

    @property
    def mass(self) -> float:
        return HBAR * self.k / self.v_rec


CONSTANTS = Constants()

# tabulated Cs-133 mass; the derived mass must agree to 1%
_CS_MASS = 132.905451961 * sc.atomic_mass
assert abs(CONSTANTS.mass / _CS_MASS - 1.0) < 0.01, "inconsistent recoil velocity"


@dataclass(frozen=True)
class DriveConfig:
    """Incident standing-wave settings.

    Detunings are angular frequencies (rad/s). ``delta_a`` is the
    light-atom detuning (negative = red); ``Delta_c`` is the laser-cavity
    detuning omega_i - omega_c.
    """

    s_single_beam: float = 16.0
    delta_a: float = TWO_PI * -63e6
    Delta_c: float = TWO_PI * -150e6
    polarization: str = "vertical_z"
    b_field: tuple = (0.0, 0.0, 0.0)
    exposure_time: float = 5e-3
    extinction_tau: float = 0.0

    def __post_init__(self):
        if self.s_single_beam < 0:
            raise ValueError("s_single_beam must be >= 0")
        if self.exposure_time < 0:
            raise ValueError("exposure_time must be >= 0")
        if self.extinction_tau < 0:
            raise ValueError("extinction_tau must be >= 0")
        if self.polarization not in POLARIZATIONS:
            raise ValueError(f"polarization must be one of {POLARIZATIONS}")
        if len(self.b_field) != 3:
            raise ValueError("b_field must be a 3-vector")
        object.__setattr__(self, "b_field", tuple(float(b) for b in self.b_field))

    @property
    def s_total(self) -> float:
        # two counter-propagating beams of the standing wave
        return 2.0 * self.s_single_beam

    @property
    def dipole_axis(self) -> np.ndarray:
        return np.array([0.0, 0.0, 1.0]) if self.polarization == "vertical_z" else np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class AtomEnsembleInit:
    n_atoms: int = 10_000
    n_physical: float = 1e6
    T_mot: float = 10e-6
    drop_height: float = 1.147e-3
    cloud_sigma: tuple = (0.3e-3, 0.3e-3, 0.3e-3)

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if not self.T_mot > 0:
            raise ValueError("T_mot must be > 0")
        if self.drop_height < 0:
            raise ValueError("drop_height must be >= 0")
        if self.n_physical <= 0:
            raise ValueError("n_physical must be > 0")
        if len(self.cloud_sigma) != 3 or min(self.cloud_sigma) < 0:
            raise ValueError("cloud_sigma must be three non-negative lengths")
        object.__setattr__(self, "cloud_sigma", tuple(float(s) for s in self.cloud_sigma))

    @property
    def weight(self) -> float:
        """Physical atoms represented by each sample."""
        return self.n_physical / self.n_atoms


@dataclass
class AtomEnsemble:
    """Sampled atoms plus the cloud-wide internal/emission state.

    ``zeeman`` and ``emission`` are filled in by the engine.
    """

    positions: np.ndarray
    velocities: np.ndarray
    weight: float = 1.0
    alive: np.ndarray = None
    zeeman: object = None
    emission: object = None
    time: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")
        if self.alive is None:
            self.alive = np.ones(len(self.positions), dtype=bool)

    def __len__(self):
        return len(self.positions)

    def copy(self):
        return AtomEnsemble(self.positions.copy(), self.velocities.copy(), self.weight,
                            self.alive.copy(), self.zeeman, self.emission, self.time,
                            dict(self.extra))


def initial_velocity_from_drop(drop_height, const=CONSTANTS):
    """Speed (downward positive) after falling ``drop_height`` from rest."""
    if drop_height < 0:
        raise ValueError("drop_height must be >= 0")
    return math.sqrt(2.0 * const.g_accel * drop_height)


def thermal_velocity_sigma(T, const=CONSTANTS):
    return math.sqrt(K_B * T / const.mass)


def sample_ensemble(init: AtomEnsembleInit, seed: int, const=CONSTANTS) -> AtomEnsemble:
    """Gaussian MOT cloud arriving at the cavity centre.

    Positions are centred on the origin with per-axis ``cloud_sigma``;
    velocities are Maxwell-Boltzmann at ``T_mot`` plus the bulk drop
    velocity along -z.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0FFEE]))
    n = init.n_atoms
    pos = rng.standard_normal((n, 3)) * np.asarray(init.cloud_sigma)
    sigma_v = thermal_velocity_sigma(init.T_mot, const)
    vel = rng.standard_normal((n, 3)) * sigma_v
    vel[:, 2] -= initial_velocity_from_drop(init.drop_height, const)
    return AtomEnsemble(pos, vel, weight=init.weight)
