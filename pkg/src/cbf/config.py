"""Experiment configuration: a sectioned ``key = value`` text format.

::

    # comment
    [pulse]
    sigma = 200e-9
    f0 = 3e6

Values are JSON (numbers, booleans, ``null``, lists, quoted strings); anything
that does not parse as JSON is taken as a bare string. Every error is reported
with its file, line and ``section.key`` path, and all errors are collected
before failing.
"""

from dataclasses import dataclass
import copy
import hashlib
import json
import math
import re

_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w-]*)\s*\]$")
_KEY = re.compile(r"^([A-Za-z_][\w-]*)\s*=\s*(.*)$")


def _pos(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0


def _nonneg(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _int_ge(n):
    return lambda x: isinstance(x, int) and not isinstance(x, bool) and x >= n


def _opt(check):
    return lambda x: x is None or check(x)


def _choice(*opts):
    return lambda x: x in opts


def _bool(x):
    return isinstance(x, bool)


def _list_of(check, min_len=0):
    return lambda x: isinstance(x, list) and len(x) >= min_len and all(check(v) for v in x)


def _frac(x):
    return _num(x) and 0 < x < 1


def _angle_deg(x):
    return _num(x) and abs(x) < 90


# section -> key -> (default, check, description)
SCHEMA = {
    "run": {
        "seed": (0, _int_ge(0), "global seed; every random draw derives from it"),
        "figures": (True, _bool, "render PNG figures next to the data exports"),
    },
    "pulse": {
        "sigma": (200e-9, _pos, "Gaussian envelope std-dev, s"),
        "f0": (3e6, _pos, "carrier frequency, Hz"),
        "beta": (0.0, _num, "carrier phase, rad"),
        "delta": (None, _opt(_pos), "support length, s (null: 10 sigma)"),
        "envelope_center": (None, _opt(_nonneg), "envelope peak offset, s (null: delta / 2)"),
    },
    "geometry": {
        "count": (63, _int_ge(1), "number of elements"),
        "pitch_m": (0.29e-3, _pos, "element pitch, m"),
        "reference_index": (None, _opt(_int_ge(0)), "0-based reference element (null: middle)"),
        "speed_mps": (1540.0, _pos, "speed of sound, m/s"),
        "window": ("uniform", _choice("uniform", "hanning"), "receive apodization"),
        "gated": (True, _bool, "exclude element m before t = 2|gamma_m|"),
    },
    "frame": {
        "duration_s": (210e-6, _pos, "frame length T, s"),
        "rate_hz": (100e6, _pos, "dense simulation rate, Hz"),
    },
    "kappa": {
        "policy": ("consecutive", _choice("consecutive", "random"), "index-set policy"),
        "k0": (None, _opt(_int_ge(0)), "center index (null: ceil(f0 T))"),
        "K": (121, _int_ge(1), "number of Fourier coefficients"),
        "threshold_db": (2.0, _pos, "admissible band for random draws, dB below peak"),
    },
    "fig3": {
        "delays": (400, _int_ge(2), "number of echo delays on the grid"),
        "t_min_frac": (0.0025, _frac, "first delay as a fraction of T"),
        "t_max_frac": (0.97, _frac, "last delay as a fraction of T"),
        "elements": (None, _opt(_list_of(_int_ge(0), 1)), "element indices (null: all)"),
        "theta_deg": (0.0, _angle_deg, "steering angle, degrees"),
    },
    "scene": {
        "depths_mm": (None, _opt(_list_of(_pos, 0)), "on-axis reflector depths, mm (null: random)"),
        "amplitudes": (None, _opt(_list_of(_num)), "reflector amplitudes (null: ones)"),
        "phases_rad": (None, _opt(_list_of(_num)), "carrier phase offsets (null: zeros)"),
        "count": (3, _int_ge(0), "reflector count when depths are random"),
        "depth_range_mm": ([35.0, 85.0], _list_of(_pos, 2), "interval for random depths, mm"),
        "min_separation_mm": (5.0, _nonneg, "minimum spacing of random depths, mm"),
        "snr_db": (None, _opt(_num), "additive white noise on the beamformed signal (null: none)"),
    },
    "xample": {
        "mode": ("both", _choice("exact", "approx", "both"), "distorted kernels, approximation, or both"),
        "rho_sq": (0.95, _frac, "retained kernel energy fraction"),
        "theta_deg": (0.0, _angle_deg, "steering angle, degrees"),
        "plan_rate_hz": (None, _opt(_pos), "grid for kernel coefficients (null: frame rate)"),
    },
    "recover": {
        "method": ("omp", _choice("matrix_pencil", "cadzow_tls", "omp"), "recovery method"),
        "L": (None, _opt(_int_ge(0)), "model order (null: scene count)"),
        "grid_rate_hz": (20e6, _pos, "OMP grid density N / T, Hz"),
        "iterations": (20, _int_ge(0), "Cadzow iterations"),
        "residual_tol": (None, _opt(_pos), "OMP relative residual stop (null: L rounds)"),
    },
    "sweep": {
        "trials": (50, _int_ge(1), "Monte-Carlo trials per cell"),
        "snrs_db": ([5.0, 10.0, 15.0, 20.0, 25.0], _list_of(_num, 1), "SNR grid, dB"),
        "etas": ([1.5, 2.0, 3.0, 5.0], _list_of(lambda x: _num(x) and x > 1, 1), "oversampling grid"),
        "methods": (["cadzow_tls", "matrix_pencil", "omp_consecutive", "omp_random"],
                    _list_of(_choice("cadzow_tls", "matrix_pencil", "omp_consecutive", "omp_random"), 1),
                    "recovery methods"),
        "signal_count": (6, _int_ge(1), "reflectors per phantom"),
        "speckle_count": (10_000, _int_ge(0), "speckle scatterers per phantom"),
        "depth_range_mm": ([35.0, 85.0], _list_of(_pos, 2), "signal reflector interval, mm"),
        "min_separation_mm": (0.0, _nonneg, "minimum reflector spacing, mm"),
        "beam_width_mm": (2.0, _pos, "-6 dB lateral beam width, mm"),
        "focus_depth_mm": (70.0, _pos, "calibration reflector depth, mm"),
        "grid_rate_hz": (20e6, _pos, "OMP grid density, Hz"),
        "spreading": (False, _bool, "apply spherical spreading"),
    },
    "image": {
        "scanlines": (11, _int_ge(1), "number of steering angles"),
        "half_angle_deg": (15.0, lambda x: _num(x) and 0 <= x < 90, "sector half-angle, degrees"),
        "scheme": ("exact", _choice("exact", "approx"), "Xampling scheme"),
        "method": ("omp", _choice("matrix_pencil", "cadzow_tls", "omp"), "recovery method"),
        "mode": ("phase-aware", _choice("phase-aware", "real-part", "modulus"), "reconstruction mode"),
        "pixel_mm": (0.25, _pos, "pixel pitch, mm"),
        "interpolation": ("bilinear", _choice("nearest", "bilinear"), "scan-conversion interpolation"),
        "dynamic_range_db": (60.0, _pos, "display dynamic range, dB"),
        "speckle_count": (0, _int_ge(0), "speckle scatterers"),
        "beam_width_mm": (2.0, _pos, "-6 dB lateral beam width, mm"),
        "grid_rate_hz": (20e6, _pos, "OMP grid density, Hz"),
        "window_mm": (1.2, _pos, "maxima-matching window, mm"),
    },
    "kernels": {
        "indices": ([3, 5], _list_of(_int_ge(0), 1), "Fourier indices k_j"),
        "elements": (None, _opt(_list_of(_int_ge(0), 1)), "elements (null: m0, m0+5, ..., m0+30)"),
        "theta_deg": (0.0, _angle_deg, "steering angle, degrees"),
        "rate_hz": (10e6, _pos, "export sample rate, Hz"),
    },
}

REQUIRED = ("pulse",)

# per-command defaults layered over SCHEMA
PRESETS = {
    "fig3": {
        "pulse": {"sigma": 200e-9, "f0": 3e6},
        "geometry": {"count": 63, "pitch_m": 0.29e-3, "reference_index": 31},
        "frame": {"duration_s": 210e-6},
        "kappa": {"K": 121, "k0": 630},
    },
    "sweep": {
        "pulse": {"sigma": 216e-9, "f0": 3.5e6},
        "geometry": {"count": 64, "pitch_m": 0.49e-3, "reference_index": 31, "window": "hanning"},
        "frame": {"duration_s": 124e-6},
    },
    "xample": {
        "pulse": {"sigma": 216e-9, "f0": 3.5e6},
        "geometry": {"count": 64, "pitch_m": 0.29e-3, "reference_index": 31},
        "frame": {"duration_s": 124e-6},
        "kappa": {"K": 100},
    },
    "recover": {
        "pulse": {"sigma": 216e-9, "f0": 3.5e6},
        "frame": {"duration_s": 124e-6},
        "kappa": {"K": 100},
    },
    "image": {
        "pulse": {"sigma": 216e-9, "f0": 3.5e6},
        "geometry": {"count": 64, "pitch_m": 0.29e-3, "reference_index": 31},
        "frame": {"duration_s": 124e-6},
        "kappa": {"K": 100},
        "scene": {"count": 6},
    },
    "kernels": {
        "geometry": {"count": 64, "pitch_m": 0.49e-3, "reference_index": 31},
        "frame": {"duration_s": 210e-6},
    },
}


@dataclass(frozen=True)
class ConfigIssue:
    path: str
    line: int
    message: str

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class ExperimentConfig:
    """Resolved configuration: documented defaults, command preset, then user values."""

    def __init__(self, values, explicit=None):
        self.values = values
        self.explicit = explicit or {}

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    def with_seed(self, seed):
        v = copy.deepcopy(self.values)
        v["run"]["seed"] = int(seed)
        return ExperimentConfig(v, self.explicit)

    def to_dict(self):
        return copy.deepcopy(self.values)

    def digest(self):
        blob = json.dumps(self.values, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def defaults(command=None):
    out = {sec: {k: copy.deepcopy(v[0]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}
    for sec, kv in PRESETS.get(command, {}).items():
        out[sec].update(copy.deepcopy(kv))
    return out


def _parse_value(raw):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config(text, source="<config>", command=None):
    """Parse and validate; raises :class:`ConfigError` listing every problem found."""
    issues = []
    seen = {}
    explicit = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#") or s.startswith(";"):
            continue
        m = _SECTION.match(s)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                issues.append(ConfigIssue(source, lineno, f"unknown section: {section}"))
            elif section in explicit:
                prev = explicit[section]["__line__"]
                issues.append(ConfigIssue(source, lineno,
                                          f"duplicate section: {section} (first at line {prev})"))
            else:
                explicit[section] = {"__line__": lineno}
            continue
        m = _KEY.match(s)
        if not m:
            issues.append(ConfigIssue(source, lineno, f"cannot parse line: {s!r}"))
            continue
        key, raw = m.group(1), m.group(2)
        if section is None:
            issues.append(ConfigIssue(source, lineno, f"key {key} outside any section"))
            continue
        if section not in SCHEMA:
            continue
        path = f"{section}.{key}"
        if key not in SCHEMA[section]:
            issues.append(ConfigIssue(source, lineno, f"unknown key: {path}"))
            continue
        if path in seen:
            issues.append(ConfigIssue(source, lineno,
                                      f"duplicate key: {path} (lines {seen[path]} and {lineno})"))
            continue
        seen[path] = lineno
        value = _parse_value(raw)
        if isinstance(value, int) and not isinstance(value, bool) and isinstance(SCHEMA[section][key][0], float):
            value = float(value)
        if not SCHEMA[section][key][1](value):
            issues.append(ConfigIssue(source, lineno,
                                      f"invalid value for {path}: {raw.strip()} ({SCHEMA[section][key][2]})"))
            continue
        explicit[section][key] = value
    for req in REQUIRED:
        if req not in explicit:
            issues.append(ConfigIssue(source, 0, f"missing section: {req}"))
    values = defaults(command)
    for sec, kv in explicit.items():
        for k, v in kv.items():
            if k != "__line__":
                values[sec][k] = v
    issues.extend(_cross_checks(values, source, seen))
    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(values, {s: {k: v for k, v in kv.items() if k != "__line__"}
                                     for s, kv in explicit.items()})


def _cross_checks(values, source, seen):
    out = []

    def bad(path, msg):
        out.append(ConfigIssue(source, seen.get(path, 0), f"{path}: {msg}"))

    p, g, f = values["pulse"], values["geometry"], values["frame"]
    delta = p["delta"] if p["delta"] is not None else 10 * p["sigma"]
    if delta < 10 * p["sigma"] * (1 - 1e-12):
        bad("pulse.delta", "must be at least 10 sigma")
    if p["envelope_center"] is not None and p["envelope_center"] >= delta:
        bad("pulse.envelope_center", "must lie inside [0, delta)")
    if g["reference_index"] is not None and g["reference_index"] >= g["count"]:
        bad("geometry.reference_index", "out of range for geometry.count")
    for sec in ("scene", "sweep"):
        lo, hi = values[sec]["depth_range_mm"][:2]
        if not lo < hi or len(values[sec]["depth_range_mm"]) != 2:
            bad(f"{sec}.depth_range_mm", "needs [low, high] with low < high")
    sc = values["scene"]
    n = len(sc["depths_mm"]) if sc["depths_mm"] is not None else sc["count"]
    for key in ("amplitudes", "phases_rad"):
        if sc[key] is not None and len(sc[key]) != n:
            bad(f"scene.{key}", f"needs {n} entries")
    fig = values["fig3"]
    if fig["t_min_frac"] >= fig["t_max_frac"]:
        bad("fig3.t_min_frac", "must be below fig3.t_max_frac")
    if f["rate_hz"] * f["duration_s"] < 2:
        bad("frame.rate_hz", "frame holds fewer than two samples")
    return out


def load_config(path, command=None):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, source=str(path), command=command)


def render_defaults(command=None):
    """Config text listing every key with its default and description."""
    vals = defaults(command)
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for k, (_, _, doc) in keys.items():
            lines.append(f"# {doc}")
            lines.append(f"{k} = {json.dumps(vals[sec][k])}")
        lines.append("")
    return "\n".join(lines)
