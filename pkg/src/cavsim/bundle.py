"""Scenario execution, CSV/manifest emission and expectation reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import CONSTANTS, initial_velocity_from_drop
from .detection import (crossing_times, decompose_peaks, synthesize_tof, temperature_from_ensemble,
                        temperature_from_tof)
from .engine import Simulation, config_hash
from .metrics import (drift_sag, eta_jump, initial_deceleration, lifetime, plateau_onset, relaxation_time, sag,
                      stop_time, time_average)
from .scenarios import KEY_INDEX, UNITS, Scenario, ScenarioError, emit_scenario, load_preset, scenario_dict
from .spectrum import default_table
from .zeeman import saturation_parameter_p

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.9g"
SUMMARY_COLUMNS = ("t_e_ms", "t_f_ms", "T_z_uK", "delayed_fraction", "eta", "gamma_fs")
SERIES_COLUMNS = ("time_ms", "mean_vz", "mean_vz_mode", "mean_z_mm", "mean_z_mode_mm", "T_x_uK", "T_y_uK",
                  "T_z_uK", "T_x_mode_uK", "T_z_mode_uK", "fraction_in_envelope", "eta", "gamma_fs",
                  "above_threshold")

NOT_REPRODUCED = (
    ("collective_temperature_7_16uK",
     "Observed 7-16 uK collective temperatures; the source itself says they cannot be explained by a "
     "single-atom model, and the simulated collective regime stays near hbar*kappa/(4 k_B) ~ 29 uK."),
    ("capture_fraction_30_15pct",
     "Capture fractions of up to 30% (vertical) and 15% (horizontal) depend on the unmodelled MOT and "
     "light-sheet geometry; the simulated delayed fraction is reported as a metric only."),
    ("threshold_scaling_delta_a_squared",
     "I_th proportional to 1/delta_a^2 is not produced: a fixed threshold rate with Gamma_fs ~ I/delta_a^2 "
     "would give I_th ~ delta_a^2, and the light-shift gain suppression lowers this to |delta_a|^(4/3)."),
    ("threshold_scaling_T_mot",
     "I_th proportional to 1/T_MOT is not modelled; the threshold depends only on atom number in the mode."),
)


class BundleError(RuntimeError):
    """Failure while running a scenario or writing its bundle."""


def fmt(value):
    """Locale-independent fixed-precision text for one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return FLOAT_FORMAT % v


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


@dataclass
class PointResult:
    """Detection outcome of one exposure point (``trace`` is None without gravity)."""

    t_e: float
    t_f_ms: float
    T_z_uK: float
    T_z_true_uK: float
    delayed_fraction: float
    eta: float
    gamma_fs: float
    n_peaks: int
    trace: object
    upper_bound: bool = False


def free_fall_arrival_ms(sc: Scenario, t_e, const=CONSTANTS):
    """Arrival time (ms after ``t_e``) of an untouched atom with the bulk drop velocity."""
    v0 = -initial_velocity_from_drop(sc.ensemble.drop_height, const)
    g = const.g_accel if sc.force.gravity else 0.0
    z = v0 * t_e - 0.5 * g * t_e ** 2
    v = v0 - const.g_accel * t_e if sc.force.gravity else v0
    return 1e3 * float(crossing_times(np.array([[0.0, 0.0, z]]), np.array([[0.0, 0.0, v]]),
                                      sc.detection.sheet_depth, const)[0])


def analyse_snapshot(sc: Scenario, snapshot, t_e, offset=0.0, eta=0.0, gamma_fs=0.0, const=CONSTANTS):
    """TOF trace, peak decomposition and temperature for one extinction.

    ``offset`` (s) is the time between the start of the extinction and
    the snapshot, added to peak centres so fall times share one clock.
    """
    det = sc.detection
    w = sc.ensemble.weight
    pos, vel = snapshot
    if not sc.force.gravity:
        # nothing falls to the light sheet; only the true temperature is defined
        T_true = temperature_from_ensemble((pos, vel), "z", None, const)
        return PointResult(t_e, math.nan, math.nan, T_true * 1e6, math.nan, eta, gamma_fs, 0, None)
    trace = synthesize_tof((pos, vel), det.sheet_depth, det.tof_bin, weight=w, const=const)
    peaks = decompose_peaks(trace, const=const)
    arrival = crossing_times(pos, vel, det.sheet_depth, const) * 1e3
    last = peaks[-1]
    if len(peaks) == 2:
        first = peaks[0]
        cut = first.center + (last.center - first.center) * first.width / (first.width + last.width)
        members = arrival > cut
        delayed = last.fraction
    else:
        members = np.ones(len(arrival), dtype=bool)
        free = free_fall_arrival_ms(sc, t_e, const)
        delayed = last.fraction if last.center - free > last.width else 0.0
    tof_T = temperature_from_tof(last, det.sheet_depth, sc.ensemble.cloud_sigma[2], det.tof_bin, const)
    T_true = temperature_from_ensemble((pos, vel), "z", members, const) if members.sum() > 1 else math.nan
    return PointResult(t_e, last.center + offset * 1e3, tof_T.T * 1e6, T_true * 1e6, delayed, eta, gamma_fs,
                       len(peaks), trace, tof_T.upper_bound)


def _value_before(times, values, t, dt):
    """Series value at the last record strictly before ``t`` (emission at extinction is already off)."""
    idx = np.flatnonzero(np.asarray(times) < t - 0.5 * dt)
    return float(np.asarray(values)[idx[-1]]) if idx.size else float(np.asarray(values)[0])


def _exposure_snapshot_mode(sc: Scenario):
    return (sc.sweep is not None and sc.sweep.path == "drive.exposure_time"
            and sc.drive.extinction_tau == 0)


@dataclass
class Execution:
    scenario: Scenario
    records: list        # RunRecord per engine run
    points: list         # PointResult per sweep point
    sweep_values: tuple  # SI values (empty without a sweep)


def execute(sc: Scenario, progress=None) -> Execution:
    """Run every point of a scenario.

    An exposure-time sweep with instant extinction is one run with
    snapshots at each exposure time; any other sweep runs one job per value.
    """
    threshold = sc.threshold_model() if sc.engine.eta_override is None else None
    if _exposure_snapshot_mode(sc):
        values = tuple(sorted(sc.sweep.values))
        longest = replace(sc.with_value("drive.exposure_time", values[-1]), sweep=None)
        if longest.engine.duration is None:
            longest = replace(longest, engine=replace(longest.engine, duration=values[-1]))
        sim = Simulation(longest.ensemble, longest.drive, longest.force, longest.engine, threshold)
        rec = sim.run(snapshot_times=values)
        pts = []
        for t_e in values:
            eta = _value_before(rec.times, rec.series["eta"], t_e, sc.engine.dt)
            gfs = _value_before(rec.times, rec.series["gamma_fs"], t_e, sc.engine.dt)
            pts.append(analyse_snapshot(sc, rec.at(t_e), t_e, 0.0, eta, gfs))
            if progress:
                progress(len(pts), len(values))
        return Execution(sc, [rec], pts, values)
    recs, pts = [], []
    points = sc.points()
    for i, p in enumerate(points):
        sim = Simulation(p.ensemble, p.drive, p.force, p.engine, threshold)
        rec = sim.run()
        t_e = p.drive.exposure_time
        end = rec.times[-1]
        eta = _value_before(rec.times, rec.series["eta"], t_e, p.engine.dt)
        gfs = _value_before(rec.times, rec.series["gamma_fs"], t_e, p.engine.dt)
        snap = (rec.final.positions, rec.final.velocities)
        pts.append(analyse_snapshot(p, snap, t_e, max(0.0, end - t_e), eta, gfs))
        recs.append(rec)
        if progress:
            progress(i + 1, len(points))
    return Execution(sc, recs, pts, tuple(sc.sweep.values) if sc.sweep else ())


# metrics ---------------------------------------------------------------------

def _display(path, value):
    """Sweep value in the unit its key is written in, plus that unit."""
    key = KEY_INDEX[path]
    table = UNITS.get(key.kind)
    if not table or key.unit not in table:
        return float(value), ""
    return float(value) / table[key.unit], key.unit


def compute_metrics(ex: Execution, const=CONSTANTS):
    """Named scalar observables of an execution as (name, value, unit) rows."""
    sc = ex.scenario
    rows = []

    def add(name, value, unit=""):
        rows.append((name, float(value), unit))

    pts = ex.points
    last = pts[-1]
    add("t_f_ms", last.t_f_ms, "ms")
    add("T_z_tof_uK", last.T_z_uK, "uK")
    add("T_z_true_uK", last.T_z_true_uK, "uK")
    add("delayed_fraction", last.delayed_fraction)
    add("eta_at_extinction", last.eta)

    if sc.sweep is not None and len(pts) > 1:
        vals = np.array(ex.sweep_values if _exposure_snapshot_mode(sc) else sc.sweep.values)
        if sc.sweep.path == "drive.exposure_time":
            onset, plateau, shape = plateau_onset(vals * 1e3, [p.t_f_ms for p in pts], sc.detection.tof_bin * 1e3)
            add("plateau_onset_ms", onset, "ms")
            add("tf_plateau_ms", plateau, "ms")
            add("tf_monotone_then_flat", float(shape))
            return rows
        T = np.array([p.T_z_uK for p in pts])
        if np.isfinite(T).all():
            add("T_z_tof_min_uK", T.min(), "uK")
            add("T_z_tof_max_uK", T.max(), "uK")
            add("T_z_tof_rel_spread", (T.max() - T.min()) / T.mean())
        if sc.sweep.path != "drive.s_single_beam":
            return rows
        factor, idx = eta_jump(vals, [p.eta for p in pts])
        add("eta_jump_factor", factor)
        if idx >= 0:
            v, unit = _display(sc.sweep.path, vals[idx])
            add("eta_jump_at", v, unit)
            add("eta_below_jump", pts[idx - 1].eta)
            add("eta_above_jump", pts[idx].eta)
            at = sc.with_value(sc.sweep.path, vals[idx])
            below = sc.with_value(sc.sweep.path, vals[idx - 1])
            p_hi = saturation_parameter_p(at.drive.s_total, at.drive.delta_a, const)
            p_lo = saturation_parameter_p(below.drive.s_total, below.drive.delta_a, const)
            add("p_at_jump", math.sqrt(p_hi * p_lo))  # geometric midpoint of the bracketing points
        return rows

    rec = ex.records[-1]
    t, s = rec.times, rec.series
    t_exp = sc.drive.exposure_time if not _exposure_snapshot_mode(sc) else max(ex.sweep_values)
    g = const.g_accel if sc.force.gravity else 0.0
    during = t <= t_exp
    if during.sum() >= 3:
        if sc.ensemble.drop_height > 0:
            try:
                add("initial_decel_ms2", initial_deceleration(t, s["mean_vz"], g=g), "m/s^2")
            except (ValueError, RuntimeError):
                pass
        falling = sc.ensemble.drop_height > 0
        st = stop_time(t[during], s["mean_vz_mode"][during]) if falling else math.nan
        if falling:
            add("stop_time_ms", st * 1e3, "ms")
        Tz = s["T_z_mode"][during] * 1e6
        add("T_z_mode_final_uK", _value_before(t, s["T_z_mode"], t_exp + sc.engine.dt, sc.engine.dt) * 1e6, "uK")
        add("T_z_eq_uK", time_average(t[during], Tz, t_exp / 2), "uK")
        add("T_x_eq_uK", time_average(t[during], s["T_x_mode"][during] * 1e6, t_exp / 2), "uK")
        try:
            tau, T_inf = relaxation_time(t[during], Tz)
            add("tau_ms", tau * 1e3, "ms")
            add("T_inf_uK", T_inf, "uK")
        except (ValueError, RuntimeError):
            pass
        if math.isfinite(st):
            # the stopped cloud: from 1 ms after the stop while at least 10% stays in the envelope
            frac = s["fraction_in_envelope"]
            add("hold_lifetime_ms", lifetime(t[during], frac[during], st) * 1e3, "ms")
            held = during & (t >= st + 1e-3) & (frac >= 0.1)
            if held.sum() >= 3 and t[held][-1] - t[held][0] >= 1e-3:
                add("sag_rate_um_per_ms", drift_sag(t[held], s["mean_z_mode"][held], 1e-3) * 1e6, "um/ms")
                add("sag_25ms_um", drift_sag(t[held], s["mean_z_mode"][held]) * 1e6, "um")
                add("held_window_ms", (t[held][-1] - t[held][0]) * 1e3, "ms")
            if t_exp - st >= 25e-3 and frac[during][-1] >= 0.1:
                add("sag_um", sag(t[during], s["mean_z_mode"][during], t_exp) * 1e6, "um")
    return rows


# emission ----------------------------------------------------------------------

def _sweep_column(sc):
    if sc.sweep is None:
        return None
    v, unit = _display(sc.sweep.path, 0.0)
    name = KEY_INDEX[sc.sweep.path].name
    return f"{name}_{unit.replace('/', 'per')}" if unit else name


def render_files(ex: Execution, const=CONSTANTS):
    """All bundle files as ``{name: text}`` (deterministic content)."""
    sc = ex.scenario
    files = {}
    col = _sweep_column(sc)
    vals = list(ex.sweep_values) if sc.sweep else [None] * len(ex.points)

    if "tof" in sc.outputs:
        rows = []
        for i, p in enumerate(ex.points):
            if p.trace is not None:
                rows += [(i, tc, c) for tc, c in zip(p.trace.centers, p.trace.counts)]
        files["tof.csv"] = _csv_text(("point", "time_ms", "counts"), rows)

    if "summary" in sc.outputs:
        header = ("point",) + ((col,) if col else ()) + SUMMARY_COLUMNS + ("T_z_true_uK", "n_peaks",
                                                                          "T_upper_bound")
        rows = []
        for i, (p, v) in enumerate(zip(ex.points, vals)):
            sweep_cell = (_display(sc.sweep.path, v)[0],) if col else ()
            rows.append((i,) + sweep_cell + (p.t_e * 1e3, p.t_f_ms, p.T_z_uK, p.delayed_fraction, p.eta,
                                            p.gamma_fs, p.T_z_true_uK, p.n_peaks, bool(p.upper_bound)))
        files["summary.csv"] = _csv_text(header, rows)

    if "spectrum" in sc.outputs:
        files["spectrum.csv"] = spectrum_csv(sc.cavity.table())

    if "series" in sc.outputs:
        rows = []
        for i, rec in enumerate(ex.records):
            s = rec.series
            for j, tt in enumerate(rec.times):
                rows.append((i, tt * 1e3, s["mean_vz"][j], s["mean_vz_mode"][j], s["mean_z"][j] * 1e3,
                             s["mean_z_mode"][j] * 1e3, s["T_x"][j] * 1e6, s["T_y"][j] * 1e6,
                             s["T_z"][j] * 1e6, s["T_x_mode"][j] * 1e6, s["T_z_mode"][j] * 1e6,
                             s["fraction_in_envelope"][j], s["eta"][j], s["gamma_fs"][j],
                             bool(s["above_threshold"][j])))
        files["series.csv"] = _csv_text(("point",) + SERIES_COLUMNS, rows)

    if "snapshot" in sc.outputs:
        fin = ex.records[-1].final
        rows = [tuple(p) + tuple(v) + (bool(a),) for p, v, a in zip(fin.positions, fin.velocities, fin.alive)]
        files["snapshot.csv"] = _csv_text(("x", "y", "z", "vx", "vy", "vz", "in_envelope"), rows)

    files["metrics.csv"] = _csv_text(("metric", "value", "unit"), compute_metrics(ex, const))
    files["scenario.scn"] = emit_scenario(sc)
    archive = {
        "schema": f"cavsim.record/{SCHEMA_VERSION}",
        "scenario": scenario_dict(sc),
        "runs": [{"scenario_hash": r.scenario_hash, "seed": r.seed, "config": r.config,
                  "times": r.times, "series": r.series,
                  "final": {"n_atoms": len(r.final), "weight": r.final.weight, "time": r.final.time,
                            "mean_position": r.final.positions.mean(axis=0),
                            "mean_velocity": r.final.velocities.mean(axis=0),
                            "fraction_in_envelope": float(r.final.alive.mean())}}
                 for r in ex.records],
    }
    files["record.json"] = json.dumps(archive, sort_keys=True, indent=1, default=_json_default) + "\n"
    return files


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def spectrum_csv(table, step_hz=1e6):
    """Mode density and eta_s on a uniform grid of ``step_hz``."""
    lo = math.ceil(table.grid[0] / step_hz) * step_hz
    grid = np.arange(lo, table.grid[-1] + 0.5 * step_hz, step_hz)
    rho = np.interp(grid, table.grid, table.rho_normalized)
    eta = np.interp(grid, table.grid, table.eta_s_profile)
    return _csv_text(("detuning_MHz", "rho_normalized", "eta_s"), zip(grid / 1e6, rho, eta))


def manifest_text(files, meta):
    """Plain key=value manifest with per-file SHA-256 and a combined content hash."""
    lines = [f"schema_version={SCHEMA_VERSION}"]
    lines += [f"{k}={v}" for k, v in meta.items()]
    lines.append(f"float_format={FLOAT_FORMAT} (C locale, '.' decimal)")
    digests = []
    for name in sorted(files):
        d = hashlib.sha256(files[name].encode("utf-8")).hexdigest()
        digests.append(f"{d}  {name}")
        lines.append(f"file.{name}={d}")
    content = hashlib.sha256("\n".join(digests).encode()).hexdigest()
    lines.append(f"content_hash={content}")
    return "\n".join(lines) + "\n"


def write_bundle(files, out_dir, meta):
    """Write ``files`` plus a manifest into ``out_dir`` atomically.

    Files are written to a sibling temporary directory that replaces
    ``out_dir`` only once everything is on disk; on failure nothing is left.
    """
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text, encoding="utf-8", newline="")
        (tmp / "manifest.txt").write_text(manifest_text(files, meta), encoding="utf-8", newline="")
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


def apply_overrides(sc: Scenario, atoms=None, seed=None, workers=None):
    """Copy of ``sc`` with command-line overrides (physical atom number kept)."""
    if atoms is not None:
        sc = replace(sc, ensemble=replace(sc.ensemble, n_atoms=int(atoms)))
    eng = sc.engine
    if seed is not None:
        eng = replace(eng, seed=int(seed))
    if workers is not None:
        eng = replace(eng, workers=int(workers))
    return replace(sc, engine=eng)


def run_and_emit(sc: Scenario, out_dir, atoms=None, seed=None, workers=None, progress=None):
    """Execute a scenario and write its output bundle; returns (path, Execution)."""
    sc = apply_overrides(sc, atoms, seed, workers)
    ex = execute(sc, progress)
    files = render_files(ex)
    # the worker count does not change results, so it stays out of the hash
    cfg = scenario_dict(replace(sc, engine=replace(sc.engine, workers=1)))
    meta = {"scenario": sc.name, "config_hash": config_hash(cfg), "seed": sc.engine.seed,
            "atoms": sc.ensemble.n_atoms, "points": len(ex.points)}
    return write_bundle(files, out_dir, meta), ex


def emit_spectrum(out_dir, table=None):
    table = table if table is not None else default_table()
    files = {"spectrum.csv": spectrum_csv(table)}
    meta = {"scenario": "spectrum", "config_hash": config_hash({"geometry": table.geometry.__dict__}),
            "seed": "none", "atoms": 0, "points": 1}
    return write_bundle(files, out_dir, meta)


def verify_manifest(bundle):
    """True when every file hash in the manifest matches the bundle contents."""
    bundle = Path(bundle)
    meta = read_manifest(bundle)
    files = {k[5:]: v for k, v in meta.items() if k.startswith("file.")}
    for name, digest in files.items():
        p = bundle / name
        if not p.is_file() or hashlib.sha256(p.read_bytes()).hexdigest() != digest:
            return False
    digests = "\n".join(f"{files[n]}  {n}" for n in sorted(files))
    return hashlib.sha256(digests.encode()).hexdigest() == meta.get("content_hash")


def read_manifest(bundle):
    p = Path(bundle) / "manifest.txt"
    if not p.is_file():
        raise BundleError(f"{bundle}: no manifest.txt (incomplete bundle)")
    out = {}
    for line in p.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# reports -------------------------------------------------------------------------

EXPECT_COLUMNS = ("metric", "target", "tolerance", "mode", "provenance")
MODES = ("rel", "abs", "factor", "min", "max", "true")
PROVENANCE = ("PAPER", "DERIVED", "TRIVIAL")


@dataclass(frozen=True)
class Expectation:
    metric: str
    target: float
    tolerance: float
    mode: str
    provenance: str
    note: str = ""

    def check(self, value):
        """(passed, reason) for a measured ``value``."""
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return False, "metric missing or nan"
        t, tol = self.target, self.tolerance
        if self.mode == "rel":
            ok = abs(value - t) <= tol * abs(t)
            return ok, f"|{value:.4g} - {t:.4g}| {'<=' if ok else '>'} {tol:g}*|target|"
        if self.mode == "abs":
            ok = abs(value - t) <= tol
            return ok, f"|{value:.4g} - {t:.4g}| {'<=' if ok else '>'} {tol:g}"
        if self.mode == "factor":
            ok = t / tol <= value <= t * tol
            return ok, f"{value:.4g} {'within' if ok else 'outside'} [{t / tol:.4g}, {t * tol:.4g}]"
        if self.mode == "min":
            ok = value >= t
            return ok, f"{value:.4g} {'>=' if ok else '<'} {t:.4g}"
        if self.mode == "max":
            ok = value <= t
            return ok, f"{value:.4g} {'<=' if ok else '>'} {t:.4g}"
        ok = value >= 0.5
        return ok, "true" if ok else "false"


def load_expectations(path):
    """Read an expectations CSV (``preset:NAME`` loads the shipped file)."""
    path = str(path)
    if path.startswith("preset:"):
        name = path.split(":", 1)[1]
        load_preset(name)  # validates the name
        from importlib import resources
        text = (resources.files("cavsim") / "presets" / f"{name}.expect").read_text(encoding="utf-8")
        source = path
    else:
        p = Path(path)
        if not p.is_file():
            raise ScenarioError("file not found", None, path)
        text, source = p.read_text(encoding="utf-8"), str(p)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    missing = [c for c in EXPECT_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise ScenarioError(f"expectations need columns {EXPECT_COLUMNS}; missing {missing}", 1, source)
    out = []
    for i, row in enumerate(reader, start=2):
        try:
            e = Expectation(row["metric"].strip(), float(row["target"]), float(row["tolerance"]),
                            row["mode"].strip(), row["provenance"].strip().strip("[]").upper(),
                            (row.get("note") or "").strip())
        except ValueError as exc:
            raise ScenarioError(f"bad number: {exc}", i, source) from None
        if e.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}", i, source)
        if e.provenance not in PROVENANCE:
            raise ScenarioError(f"provenance must be one of {PROVENANCE}", i, source)
        out.append(e)
    return out


def read_metrics(bundle):
    p = Path(bundle) / "metrics.csv"
    if not p.is_file():
        raise BundleError(f"{bundle}: no metrics.csv")
    with open(p, newline="", encoding="utf-8") as fh:
        return {r["metric"]: float(r["value"]) for r in csv.DictReader(fh)}


def compare_report(bundle, expect_path, write=True):
    """Evaluate expectations against a bundle; returns (rows, all_passed).

    Each row is (metric, value, target, tolerance, mode, provenance,
    status, reason). The documented non-reproduced observations are
    appended with status NOT_REPRODUCED and do not affect the verdict.
    """
    bundle = Path(bundle)
    read_manifest(bundle)
    metrics = read_metrics(bundle)
    rows = []
    ok_all = True
    for e in load_expectations(expect_path):
        value = metrics.get(e.metric)
        if value is None:
            passed, reason = False, f"metric {e.metric!r} missing from bundle"
        else:
            passed, reason = e.check(value)
        ok_all &= passed
        rows.append((e.metric, value if value is not None else math.nan, e.target, e.tolerance, e.mode,
                     e.provenance, "PASS" if passed else "FAIL", reason + (f"; {e.note}" if e.note else "")))
    for name, why in NOT_REPRODUCED:
        rows.append((name, math.nan, math.nan, math.nan, "-", "PAPER", "NOT_REPRODUCED", why))
    if write:
        header = ("metric", "value", "target", "tolerance", "mode", "provenance", "status", "reason")
        (bundle / "report.csv").write_text(_csv_text(header, rows), encoding="utf-8", newline="")
    return rows, ok_all
