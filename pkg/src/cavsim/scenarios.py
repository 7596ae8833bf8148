"""Scenario files: parsing, emission and sweeps.

A scenario is a line-oriented ``key = value`` file split into
``[section]`` blocks. Dimensional values carry a unit suffix that is
converted to SI at load time::

    [drive]
    s_single_beam = 16
    delta_a = -63 MHz          # detunings are nu/2pi, stored as rad/s
    exposure_time = 5 ms
    b_field = 0 G, 0 G, 0.4 G

Unknown keys, unknown units, units of the wrong kind and out-of-range
values are errors that quote the line number.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from importlib import resources
import math
from pathlib import Path
import re

import numpy as np

from .core import CONSTANTS, POLARIZATIONS, TWO_PI, AtomEnsembleInit, DriveConfig
from .engine import EngineParams
from .forces import ForceModelConfig
from .spectrum import ETA_S_MAX, CavityGeometry, build_spectrum_table, calibrate_spectrum, default_table
from .zeeman import REFERENCE, ThresholdModel


class ScenarioError(ValueError):
    """Invalid scenario text; ``line`` is 1-based or None."""

    def __init__(self, message, line=None, source="<scenario>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


_ANGULAR = {"GHz": TWO_PI * 1e9, "MHz": TWO_PI * 1e6, "kHz": TWO_PI * 1e3, "Hz": TWO_PI, "rad/s": 1.0}
UNITS = {
    "detuning": _ANGULAR,
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6},
    "field": {"G": 1.0, "mG": 1e-3},
    "rate": {"": 1.0, "1/s": 1.0},
    # intensity: bare numbers are I/I_s per beam
    "intensity": {"": 1.0, "mW/cm2": 10.0 / CONSTANTS.I_s},
    "number": {"": 1.0},
}
def _to_si(num, factor):
    # divide by exact powers of ten so "50 um" is the same double as 50e-6
    inv = 1.0 / factor
    if factor < 1.0 and inv == round(inv):
        return num / round(inv)
    return num * factor


def _from_si(value, factor):
    inv = 1.0 / factor
    if factor < 1.0 and inv == round(inv):
        return value * round(inv)
    return value / factor


_NUM = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)$")


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    kind: str  # a UNITS kind, or "int", "bool", "str", "choice", "list"
    unit: str = ""  # unit used when emitting
    lo: float = -math.inf
    hi: float = math.inf
    size: int = 1
    optional: bool = False
    choices: tuple = ()
    attr: str = None

    @property
    def path(self):
        return f"{self.section}.{self.name}"

    @property
    def field_name(self):
        return self.attr or self.name


KEYS = [
    Key("scenario", "name", "str"),
    Key("scenario", "description", "str"),
    Key("ensemble", "n_atoms", "int", lo=1, hi=1e8),
    Key("ensemble", "n_physical", "number", lo=1, hi=1e9),
    Key("ensemble", "T_mot", "temperature", "uK", lo=1e-9, hi=1e-2),
    Key("ensemble", "drop_height", "length", "mm", lo=0.0, hi=5e-3),
    Key("ensemble", "cloud_sigma", "length", "mm", lo=0.0, hi=1e-2, size=3),
    Key("drive", "s_single_beam", "intensity", lo=0.0, hi=1e4),
    Key("drive", "delta_a", "detuning", "MHz", lo=-TWO_PI * 5e9, hi=TWO_PI * 5e9),
    Key("drive", "Delta_c", "detuning", "MHz", lo=-TWO_PI * 5e9, hi=TWO_PI * 5e9),
    Key("drive", "polarization", "choice", choices=POLARIZATIONS),
    Key("drive", "b_field", "field", "G", lo=-100.0, hi=100.0, size=3),
    Key("drive", "exposure_time", "time", "ms", lo=0.0, hi=1.0),
    Key("drive", "extinction_tau", "time", "ms", lo=0.0, hi=1.0),
    Key("force", "kappa_eff", "detuning", "MHz", lo=TWO_PI * 1e3, hi=TWO_PI * 1e9),
    Key("force", "fs_doppler_x", "bool", attr="include_fs_doppler_x"),
    Key("force", "box", "length", "mm", lo=1e-6, hi=1e3, size=3),
    Key("force", "w_env", "length", "um", lo=1e-6, hi=1e3, optional=True),
    Key("force", "emission", "choice", choices=("dipole", "isotropic")),
    Key("force", "gravity", "bool"),
    Key("cavity", "length_L", "length", "mm", lo=1e-3, hi=10.0),
    Key("cavity", "finesse_F", "number", lo=1.0, hi=1e7),
    Key("cavity", "waist_w0", "length", "um", lo=1e-6, hi=1e-2),
    Key("cavity", "eps_x", "length", "um", lo=-1e-2, hi=1e-2),
    Key("cavity", "eps_y", "length", "um", lo=-1e-2, hi=1e-2),
    Key("cavity", "fold_target", "detuning", "MHz", lo=-TWO_PI * 1e9, hi=-TWO_PI * 1e6),
    Key("cavity", "eta_s_max", "number", lo=0.0, hi=0.06),
    Key("engine", "dt", "time", "us", lo=1e-9, hi=1e-3),
    Key("engine", "duration", "time", "ms", lo=0.0, hi=10.0, optional=True),
    Key("engine", "record_every", "time", "us", lo=1e-9, hi=1.0),
    Key("engine", "seed", "int", lo=0, hi=2 ** 63 - 1),
    Key("engine", "workers", "int", lo=1, hi=1024),
    Key("engine", "eta_override", "number", lo=0.0, hi=10.0, optional=True),
    Key("engine", "gamma_fs_override", "rate", lo=0.0, hi=1e8, optional=True),
    Key("engine", "eta_c", "number", lo=0.0, hi=10.0),
    Key("threshold", "ref_delta_a", "detuning", "MHz", lo=-TWO_PI * 5e9, hi=TWO_PI * 5e9),
    Key("threshold", "ref_Delta_c", "detuning", "MHz", lo=-TWO_PI * 5e9, hi=TWO_PI * 5e9),
    Key("threshold", "ref_gamma_fs", "rate", lo=1.0, hi=1e8),
    Key("threshold", "ref_n_atoms", "number", lo=1.0, hi=1e10),
    Key("detection", "sheet_depth", "length", "mm", lo=1e-3, hi=1.0),
    Key("detection", "tof_bin", "time", "ms", lo=1e-6, hi=1e-2),
    Key("detection", "pixel", "length", "um", lo=1e-7, hi=1e-2),
    Key("detection", "image_delay", "time", "ms", lo=0.0, hi=1.0),
    Key("sweep", "path", "str"),
    Key("sweep", "values", "list"),
    Key("outputs", "files", "list"),
]
KEY_INDEX = {k.path: k for k in KEYS}
SECTIONS = tuple(dict.fromkeys(k.section for k in KEYS))
REQUIRED = ("scenario.name", "drive.s_single_beam", "drive.delta_a", "drive.Delta_c", "drive.exposure_time")
OUTPUT_FILES = ("tof", "summary", "spectrum", "series", "snapshot")
SWEEPABLE = ("ensemble", "drive", "force", "engine")


@dataclass(frozen=True)
class CavityConfig:
    """Resonator overrides; the defaults reproduce the nominal calibrated cavity."""

    length_L: float = 0.075
    finesse_F: float = 1000.0
    waist_w0: float = 101e-6
    eps_x: float = -24e-6
    eps_y: float = -28e-6
    fold_target: float = TWO_PI * -200e6
    eta_s_max: float = ETA_S_MAX

    def is_default(self):
        return self == CavityConfig()

    def geometry(self):
        fsr = 299792458.0 / (2.0 * self.length_L)
        return CavityGeometry(self.length_L, self.finesse_F, TWO_PI * fsr / self.finesse_F, self.waist_w0,
                              self.eps_x, self.eps_y)

    def table(self):
        if self.is_default():
            return default_table()
        geom = calibrate_spectrum(self.geometry(), self.fold_target / TWO_PI)
        return build_spectrum_table(geom, eta_s_max=self.eta_s_max)


@dataclass(frozen=True)
class ThresholdConfig:
    ref_delta_a: float = REFERENCE["delta_a"]
    ref_Delta_c: float = REFERENCE["Delta_c"]
    ref_gamma_fs: float = REFERENCE["gamma_fs"]
    ref_n_atoms: float = REFERENCE["n_atoms"]


@dataclass(frozen=True)
class DetectionConfig:
    sheet_depth: float = 0.02
    tof_bin: float = 0.5e-3
    pixel: float = 50e-6
    image_delay: float = 10e-3


@dataclass(frozen=True)
class Sweep:
    path: str
    values: tuple

    def __post_init__(self):
        key = KEY_INDEX.get(self.path)
        if key is None or key.section not in SWEEPABLE or key.size != 1 or key.kind in ("str", "list", "bool",
                                                                                         "choice"):
            raise ScenarioError(f"sweep path {self.path!r} is not a sweepable numeric parameter")
        if not self.values:
            raise ScenarioError("sweep needs at least one value")
        vals = tuple(float(v) for v in self.values)
        if not all(math.isfinite(v) for v in vals):
            raise ScenarioError("sweep values must be finite")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class Scenario:
    name: str
    ensemble: AtomEnsembleInit = field(default_factory=AtomEnsembleInit)
    drive: DriveConfig = field(default_factory=DriveConfig)
    force: ForceModelConfig = None
    cavity: CavityConfig = field(default_factory=CavityConfig)
    engine: EngineParams = field(default_factory=EngineParams)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    sweep: Sweep = None
    outputs: tuple = ("tof", "summary")
    description: str = ""

    def __post_init__(self):
        force = self.force or ForceModelConfig()
        # the emission dipole always follows the incident polarization
        object.__setattr__(self, "force", replace(force, dipole_axis=tuple(self.drive.dipole_axis)))
        bad = [o for o in self.outputs if o not in OUTPUT_FILES]
        if bad:
            raise ScenarioError(f"unknown output(s) {bad}; choose from {OUTPUT_FILES}")
        object.__setattr__(self, "outputs", tuple(self.outputs))

    def threshold_model(self):
        t = self.threshold
        return ThresholdModel(t.ref_delta_a, t.ref_Delta_c, t.ref_gamma_fs, t.ref_n_atoms,
                              eta_c=self.engine.eta_c, table=self.cavity.table()).fit()

    def with_value(self, path, value):
        """Copy with one parameter replaced (``section.key`` path)."""
        key = KEY_INDEX[path]
        sec = getattr(self, key.section)
        value = int(value) if key.kind == "int" else value
        return replace(self, **{key.section: replace(sec, **{key.field_name: value})})

    def points(self):
        """Scenarios for each sweep value (or just this one)."""
        if self.sweep is None:
            return [self]
        return [replace(self.with_value(self.sweep.path, v), sweep=None) for v in self.sweep.values]


# parsing -------------------------------------------------------------------

def _parse_quantity(text, key: Key, line, source):
    text = text.replace("µ", "u").replace("μ", "u").strip()
    m = _NUM.match(text)
    if not m:
        raise ScenarioError(f"{key.path}: cannot parse number from {text!r}", line, source)
    num, unit = float(m.group(1)), m.group(2)
    table = UNITS[key.kind]
    if unit not in table:
        other = [k for k, t in UNITS.items() if unit in t and unit]
        hint = f" (a {other[0]} unit)" if other else ""
        allowed = ", ".join(u or "<none>" for u in table)
        raise ScenarioError(f"{key.path}: unit {unit or '<none>'!r}{hint} not allowed; use {allowed}", line,
                            source)
    value = _to_si(num, table[unit])
    if not (key.lo <= value <= key.hi):
        raise ScenarioError(f"{key.path}: value {text!r} out of range", line, source)
    return value


def _parse_value(text, key: Key, line, source):
    raw = text.strip()
    if key.optional and raw.lower() == "none":
        return None
    if key.kind == "str":
        if not raw:
            raise ScenarioError(f"{key.path}: empty value", line, source)
        return raw
    if key.kind == "list":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if key.kind == "bool":
        if raw.lower() in ("true", "yes", "on", "1"):
            return True
        if raw.lower() in ("false", "no", "off", "0"):
            return False
        raise ScenarioError(f"{key.path}: expected true/false, got {raw!r}", line, source)
    if key.kind == "choice":
        if raw not in key.choices:
            raise ScenarioError(f"{key.path}: expected one of {key.choices}, got {raw!r}", line, source)
        return raw
    if key.kind == "int":
        try:
            v = int(raw)
        except ValueError:
            raise ScenarioError(f"{key.path}: expected an integer, got {raw!r}", line, source) from None
        if not key.lo <= v <= key.hi:
            raise ScenarioError(f"{key.path}: value {v} out of range", line, source)
        return v
    parts = [p for p in raw.split(",")]
    if len(parts) != key.size:
        raise ScenarioError(f"{key.path}: expected {key.size} value(s), got {len(parts)}", line, source)
    vals = [_parse_quantity(p, key, line, source) for p in parts]
    return tuple(vals) if key.size > 1 else vals[0]


def parse_scenario(text, source="<scenario>"):
    """Parse scenario text into a :class:`Scenario`."""
    section = None
    values, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ScenarioError(f"malformed section header {s!r}", no, source)
            section = s[1:-1].strip()
            if section not in SECTIONS:
                raise ScenarioError(f"unknown section [{section}]", no, source)
            continue
        if "=" not in s:
            raise ScenarioError(f"expected 'key = value', got {s!r}", no, source)
        if section is None:
            raise ScenarioError("key outside of any [section]", no, source)
        name, val = (p.strip() for p in s.split("=", 1))
        key = KEY_INDEX.get(f"{section}.{name}")
        if key is None:
            raise ScenarioError(f"unknown key {name!r} in [{section}]", no, source)
        if key.path in values:
            raise ScenarioError(f"duplicate key {key.path} (first on line {lines[key.path]})", no, source)
        values[key.path] = _parse_value(val, key, no, source)
        lines[key.path] = no

    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ScenarioError("missing required keys: " + ", ".join(missing), None, source)
    return _build(values, lines, source)


def _section_kwargs(values, section):
    return {KEY_INDEX[p].field_name: v for p, v in values.items() if KEY_INDEX[p].section == section}


def _build(values, lines, source):
    def guard(section, fn):
        try:
            return fn(**_section_kwargs(values, section))
        except ScenarioError:
            raise
        except (ValueError, TypeError) as exc:
            first = min((lines[p] for p in values if p.startswith(section + ".")), default=None)
            raise ScenarioError(f"[{section}] {exc}", first, source) from None

    sweep = None
    if "sweep.path" in values or "sweep.values" in values:
        if "sweep.path" not in values or "sweep.values" not in values:
            raise ScenarioError("[sweep] needs both path and values", lines.get("sweep.path",
                                                                                  lines.get("sweep.values")),
                                source)
        path = values["sweep.path"]
        key = KEY_INDEX.get(path)
        if key is None:
            raise ScenarioError(f"sweep path {path!r} does not exist", lines["sweep.path"], source)
        if key.section not in SWEEPABLE or key.size != 1 or key.kind in ("str", "list", "bool", "choice"):
            raise ScenarioError(f"sweep path {path!r} is not a sweepable numeric parameter", lines["sweep.path"],
                                source)
        ln = lines["sweep.values"]
        vals = tuple(_parse_value(v, replace(key, size=1, optional=False), ln, source)
                     for v in values["sweep.values"])
        try:
            sweep = Sweep(path, vals)
        except ScenarioError as exc:
            raise ScenarioError(str(exc).split(": ", 1)[-1], lines["sweep.path"], source) from None

    outputs = values.get("outputs.files", ("tof", "summary"))
    try:
        return Scenario(
            name=values["scenario.name"],
            description=values.get("scenario.description", ""),
            ensemble=guard("ensemble", AtomEnsembleInit),
            drive=guard("drive", DriveConfig),
            force=guard("force", ForceModelConfig),
            cavity=guard("cavity", CavityConfig),
            engine=guard("engine", EngineParams),
            threshold=guard("threshold", ThresholdConfig),
            detection=guard("detection", DetectionConfig),
            sweep=sweep,
            outputs=outputs,
        )
    except ScenarioError as exc:
        if exc.line is None and "outputs.files" in lines:
            raise ScenarioError(str(exc).split(": ", 1)[-1], lines["outputs.files"], source) from None
        raise


def load_scenario(path):
    """Read a scenario file (``preset:NAME`` loads a shipped preset)."""
    path = str(path)
    if path.startswith("preset:"):
        return load_preset(path.split(":", 1)[1])
    p = Path(path)
    if not p.is_file():
        raise ScenarioError("file not found", None, path)
    return parse_scenario(p.read_text(encoding="utf-8"), source=str(p))


# emission ------------------------------------------------------------------

def _format_float(value, factor):
    """Shortest text that converts back to exactly ``value`` with ``factor``."""
    cand = _from_si(value, factor)
    for _ in range(8):
        back = _to_si(float(repr(cand)), factor)
        if back == value:
            return repr(cand)
        cand = float(np.nextafter(cand, math.inf if back < value else -math.inf))
    return None


def _emit_quantity(value, key: Key):
    table = UNITS[key.kind]
    unit = key.unit if key.unit in table else next(iter(table))
    for u in (unit, next(u for u, f in table.items() if f == 1.0)):
        txt = _format_float(float(value), table[u])
        if txt is not None:
            return f"{txt} {u}".strip()
    raise ValueError(f"cannot format {value!r} for {key.path}")


def _emit_value(value, key: Key):
    if value is None:
        return "none"
    if key.kind in ("str", "choice"):
        return str(value)
    if key.kind == "bool":
        return "true" if value else "false"
    if key.kind == "int":
        return str(int(value))
    if key.kind == "list":
        return ", ".join(value)
    if key.size > 1:
        return ", ".join(_emit_quantity(v, key) for v in value)
    return _emit_quantity(value, key)


def emit_scenario(sc: Scenario) -> str:
    """Scenario text such that ``parse_scenario(emit_scenario(sc)) == sc``."""
    out = []
    for section in SECTIONS:
        if section == "sweep" and sc.sweep is None:
            continue
        out.append(f"[{section}]")
        for key in (k for k in KEYS if k.section == section):
            if section == "scenario":
                v = sc.name if key.name == "name" else sc.description
                if key.name == "description" and not v:
                    continue
                out.append(f"{key.name} = {v}")
            elif section == "sweep":
                if key.name == "path":
                    out.append(f"path = {sc.sweep.path}")
                else:
                    sk = KEY_INDEX[sc.sweep.path]
                    out.append("values = " + ", ".join(_emit_value(v, replace(sk, size=1))
                                                       for v in sc.sweep.values))
            elif section == "outputs":
                out.append("files = " + ", ".join(sc.outputs))
            else:
                out.append(f"{key.name} = {_emit_value(getattr(getattr(sc, section), key.field_name), key)}")
        out.append("")
    return "\n".join(out)


# presets -------------------------------------------------------------------

PRESETS = ("fig2", "fig3", "fig4", "fig5", "single_atom", "doppler_x", "off_resonant", "hold")


def preset_path(name):
    return resources.files("cavsim") / "presets" / f"{name}.scn"


def load_preset(name):
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {PRESETS}")
    res = preset_path(name)
    return parse_scenario(res.read_text(encoding="utf-8"), source=f"preset:{name}")


def scenario_dict(sc: Scenario) -> dict:
    d = asdict(sc)
    d["sweep"] = asdict(sc.sweep) if sc.sweep else None
    return d
