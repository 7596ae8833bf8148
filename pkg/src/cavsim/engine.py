"""Time-stepped Monte Carlo integrator.

Each step is bulk-synchronous: atoms are advanced block by block (blocks
may run on worker threads), then the shared sublevel populations and the
emission regime are updated once from ensemble reductions. Every block
owns a random stream keyed by (seed, block index) and advanced once per
step, so results do not depend on the number of workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import hashlib
import json
import math
import time

import numpy as np

from .core import CONSTANTS, K_B, AtomEnsemble, AtomEnsembleInit, DriveConfig, sample_ensemble
from .forces import (ForceModelConfig, _orthonormal_frame, check_linear_regime, envelope, friction_rate,
                     fs_doppler_beta)
from .kernel import advance_block
from .zeeman import EmissionState, ThresholdModel, ZeemanState, larmor_rate, propagate, scattering_rate_fs

BLOCK_SIZE = 4096


class StabilityError(ValueError):
    """Time step violates the scattering or friction stability bound."""


@dataclass(frozen=True)
class EngineParams:
    """Integration and emission-control settings.

    ``eta_override`` pins eta (no threshold dynamics); ``gamma_fs_override``
    pins the peak scattering rate instead of deriving it from the drive.
    ``duration`` defaults to the exposure plus five extinction constants.
    """

    dt: float = 1e-6
    duration: float = None
    record_every: float = 10e-6
    workers: int = 1
    seed: int = 0
    eta_override: float = None
    gamma_fs_override: float = None
    eta_c: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.duration is not None and self.duration < 0:
            raise ValueError("duration must be >= 0")
        if self.eta_override is not None and self.eta_override < 0:
            raise ValueError("eta_override must be >= 0")


def intensity_factor(t, drive: DriveConfig):
    """Fraction of the incident intensity at time ``t`` (exposure then extinction)."""
    if t < drive.exposure_time:
        return 1.0
    if drive.extinction_tau > 0:
        return math.exp(-(t - drive.exposure_time) / drive.extinction_tau)
    return 0.0


def peak_gamma_fs(drive, params, const=CONSTANTS, factor=1.0):
    if factor <= 0:
        return 0.0
    if params.gamma_fs_override is not None:
        return params.gamma_fs_override * factor
    return scattering_rate_fs(drive.s_total * factor, drive.delta_a, const)


def check_stability(dt, drive, force, params, const=CONSTANTS):
    gfs = peak_gamma_fs(drive, params, const)
    if gfs <= 0:
        return
    eta_max = params.eta_override if params.eta_override is not None else params.eta_c
    beta = friction_rate(eta_max, gfs, force, const)
    if force.include_fs_doppler_x:
        beta = max(beta, fs_doppler_beta(drive, const))
    # event counts are drawn exactly per step, so only the friction update limits dt
    bound = 0.02 / beta if beta > 0 else math.inf
    if dt > bound * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.3g} s exceeds stability bound {bound:.3g} s")


@dataclass
class RunRecord:
    scenario_hash: str
    seed: int
    config: dict
    times: np.ndarray
    series: dict
    snapshots: dict
    final: AtomEnsemble
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def at(self, t):
        """Snapshot (positions, velocities) recorded at time ``t``."""
        key = min(self.snapshots, key=lambda s: abs(s - t))
        if abs(key - t) > 1e-9:
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[key]


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


class Simulation:
    """Drop, exposure, extinction and free fall of one sampled cloud."""

    def __init__(self, init: AtomEnsembleInit, drive: DriveConfig, force: ForceModelConfig = None,
                 params: EngineParams = None, threshold: ThresholdModel = None, const=CONSTANTS):
        self.init = init
        self.drive = drive
        self.force = force or ForceModelConfig.for_drive(drive)
        self.params = params or EngineParams()
        self.const = const
        self.threshold = threshold
        check_stability(self.params.dt, drive, self.force, self.params, const)

    def config(self):
        return {"init": asdict(self.init), "drive": asdict(self.drive), "force": asdict(self.force),
                "params": asdict(self.params)}

    def _threshold_model(self):
        if self.threshold is None:
            self.threshold = default_threshold_model()
        return self.threshold

    def _emission(self, zeeman, n_in_mode, gfs, s_total):
        p = self.params
        if p.eta_override is not None:
            return EmissionState(p.eta_override, p.eta_override, p.eta_c, gfs, 0.0,
                                 p.eta_override > 0.5 * p.eta_c)
        return self._threshold_model().evaluate(zeeman, self.drive, n_in_mode, gfs, s_total=s_total,
                                                const=self.const)

    def run(self, seed=None, snapshot_times=(), ensemble: AtomEnsemble = None):
        """Integrate the scenario; returns a :class:`RunRecord`.

        ``snapshot_times`` lists times (s) at which full phase-space copies
        are kept, e.g. a sweep of exposure times with instant extinction.
        """
        seed = self.params.seed if seed is None else int(seed)
        t0 = time.perf_counter()
        p, c, drive, force = self.params, self.const, self.drive, self.force
        ens = ensemble.copy() if ensemble is not None else sample_ensemble(self.init, seed, c)
        n = len(ens)
        duration = p.duration if p.duration is not None else drive.exposure_time + 5 * drive.extinction_tau
        n_steps = int(round(duration / p.dt))
        rec_every = max(1, int(round(p.record_every / p.dt)))
        snap_steps = {int(round(t / p.dt)): t for t in snapshot_times}

        blocks = [slice(i, min(i + BLOCK_SIZE, n)) for i in range(0, n, BLOCK_SIZE)]
        rngs = [np.random.default_rng(np.random.SeedSequence([seed, b, 0x5EED])) for b in range(len(blocks))]
        pool = ThreadPoolExecutor(p.workers) if p.workers > 1 and len(blocks) > 1 else None

        pos, vel = ens.positions, ens.velocities
        env = envelope(pos, force)
        zeeman = ZeemanState.uniform()
        f0 = intensity_factor(0.0, drive)
        gfs0 = peak_gamma_fs(drive, p, c, f0) if f0 > 0 else 0.0
        emission = self._emission(zeeman, ens.weight * env.sum(), gfs0, drive.s_total * f0)

        rows, times = [], []
        snapshots = {}
        if 0 in snap_steps:
            snapshots[snap_steps[0]] = (pos.copy(), vel.copy())
        self._record(rows, times, 0.0, ens, env, emission if gfs0 > 0 else None)
        dt = p.dt
        kin = _KernelGeometry(force)
        omega_L = larmor_rate(drive, c)
        warned = False
        fac = intensity_factor(0.0, drive)
        gfs = peak_gamma_fs(drive, p, c, fac)
        try:
            for step in range(n_steps):
                coeffs = _step_coefficients(emission.eta, gfs, fac, drive, force, c, dt)

                def advance(b):
                    sl = blocks[b]
                    advance_block(pos[sl], vel[sl], env[sl], dt, *coeffs, *kin.args, rngs[b])

                if pool is not None:
                    list(pool.map(advance, range(len(blocks))))
                else:
                    for b in range(len(blocks)):
                        advance(b)

                if gfs > 0:
                    zeeman = propagate(zeeman, drive, gfs, dt, c, s_total=drive.s_total * fac, omega_L=omega_L)
                t_next = (step + 1) * dt
                fac_next = intensity_factor(t_next, drive)
                gfs_next = gfs if fac_next == fac else peak_gamma_fs(drive, p, c, fac_next)
                fac, gfs = fac_next, gfs_next
                if gfs > 0:
                    emission = self._emission(zeeman, ens.weight * env.sum(), gfs, drive.s_total * fac)
                if (step + 1) in snap_steps:
                    snapshots[snap_steps[step + 1]] = (pos.copy(), vel.copy())
                if (step + 1) % rec_every == 0 or step + 1 == n_steps:
                    if not np.all(np.isfinite(vel)):
                        raise FloatingPointError("non-finite velocity in ensemble")
                    if gfs > 0 and not warned and coeffs[1] > 0:
                        warned = not check_linear_regime(vel[env > 0], force, c)
                    ens.time = t_next
                    self._record(rows, times, t_next, ens, env, emission if gfs > 0 else None)
        finally:
            if pool is not None:
                pool.shutdown()

        ens.time = n_steps * dt
        env = envelope(pos, force)
        ens.alive = env > 0
        ens.zeeman = zeeman
        ens.emission = emission
        series = {k: np.array([r[k] for r in rows]) for k in rows[0]}
        cfg = self.config()
        return RunRecord(config_hash(cfg), seed, cfg, np.array(times), series, snapshots, ens,
                         time.perf_counter() - t0)

    def _record(self, rows, times, t, ens, env, emission):
        m = self.const.mass
        v = ens.velocities
        inside = env > 0
        row = {"mean_vx": v[:, 0].mean(), "mean_vy": v[:, 1].mean(), "mean_vz": v[:, 2].mean(),
               "mean_z": ens.positions[:, 2].mean()}
        for i, ax in enumerate("xyz"):
            row[f"T_{ax}"] = m * v[:, i].var() / K_B
            row[f"T_{ax}_mode"] = m * v[inside, i].var() / K_B if inside.sum() > 1 else float("nan")
        row["mean_vz_mode"] = v[inside, 2].mean() if inside.any() else float("nan")
        row["mean_z_mode"] = ens.positions[inside, 2].mean() if inside.any() else float("nan")
        row["fraction_in_envelope"] = inside.mean()
        row["mean_envelope"] = env.mean()
        row["eta"] = emission.eta if emission is not None else 0.0
        row["gamma_fs"] = emission.gamma_fs if emission is not None else 0.0
        row["above_threshold"] = float(emission.above_threshold) if emission is not None else 0.0
        rows.append(row)
        times.append(t)


class _KernelGeometry:
    """Envelope and emission-frame arguments for :func:`advance_block`."""

    def __init__(self, force: ForceModelConfig):
        e1, e2, ax = _orthonormal_frame(force.dipole_axis)
        self.args = (0.5 * np.asarray(force.box, dtype=float),
                     float(force.w_env) if force.w_env is not None else 0.0,
                     np.ascontiguousarray(np.vstack([e1, e2, ax])),
                     force.emission == "isotropic")


def _step_coefficients(eta, gfs, fac, drive, force, const, dt):
    """(g, beta_c, beta_d, event mean per unit envelope, p_cavity, v_rec) for one step."""
    eta = eta if gfs > 0 else 0.0
    beta_c = friction_rate(eta, gfs, force, const)
    beta_d = fs_doppler_beta(drive, const, drive.s_single_beam * fac) if (
        force.include_fs_doppler_x and fac > 0) else 0.0
    g = const.g_accel if force.gravity else 0.0
    return (g, beta_c, beta_d, (1.0 + eta) * gfs * dt, eta / (1.0 + eta), const.v_rec)


_DEFAULT_THRESHOLD = None


def default_threshold_model():
    global _DEFAULT_THRESHOLD
    if _DEFAULT_THRESHOLD is None:
        _DEFAULT_THRESHOLD = ThresholdModel().fit()
    return _DEFAULT_THRESHOLD


def step(ensemble: AtomEnsemble, dt, drive: DriveConfig, force: ForceModelConfig = None,
         params: EngineParams = None, seed=0, t=0.0, const=CONSTANTS):
    """Advance an ensemble by one step of the engine; returns a new ensemble.

    The emission regime comes from ``params.eta_override`` or
    ``ensemble.emission`` and is re-evaluated after the move.
    """
    force = force or ForceModelConfig.for_drive(drive)
    params = params or EngineParams(dt=dt)
    check_stability(dt, drive, force, params, const)
    ens = ensemble.copy()
    fac = intensity_factor(t, drive)
    gfs = peak_gamma_fs(drive, params, const, fac) if fac > 0 else 0.0
    if params.eta_override is not None:
        eta = params.eta_override
    else:
        eta = ens.emission.eta if ens.emission is not None else 0.0
    env = np.empty(len(ens))
    advance_block(ens.positions, ens.velocities, env, dt,
                  *_step_coefficients(eta, gfs, fac, drive, force, const, dt),
                  *_KernelGeometry(force).args, np.random.default_rng(seed))
    if gfs > 0:
        zeeman = ens.zeeman or ZeemanState.uniform()
        ens.zeeman = propagate(zeeman, drive, gfs, dt, const, s_total=drive.s_total * fac)
        if params.eta_override is None:
            ens.emission = default_threshold_model().evaluate(
                ens.zeeman, drive, ens.weight * env.sum(), gfs, s_total=drive.s_total * fac, const=const)
    ens.time = t + dt
    ens.alive = envelope(ens.positions, force) > 0
    return ens


def run_scenario(scenario, seed=None, snapshot_times=()):
    """Run a scenario object exposing ``ensemble``, ``drive``, ``force`` and ``engine``."""
    sim = Simulation(scenario.ensemble, scenario.drive, scenario.force, scenario.engine,
                     threshold=getattr(scenario, "threshold_model", lambda: None)())
    return sim.run(seed, snapshot_times)
