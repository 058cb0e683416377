"""Simulation configuration: a small ``[section]`` / ``key = value`` format.

Lines starting with ``#`` are comments.  Unknown sections or keys are
errors.  Values are parsed according to the type of the default; vectors
are written as whitespace-separated numbers.
"""
from __future__ import annotations

import copy
import hashlib
import math

from .errors import ConfigError

# (section, key, default, doc, check) ; check is a tuple (kind, arg)
_SCHEMA = [
    ("geometry", "inclusion", "circle", "inclusion shape: circle, square or none", ("choice", ("circle", "square", "none"))),
    ("geometry", "center", (0.5, 0.5), "inclusion centre in the unit cell", ("vector", 2)),
    ("geometry", "size", 0.3, "circle radius or square half-width", ("positive", None)),
    ("geometry", "membrane_arc", (), "angular range in degrees of the no-exchange membrane patch (empty for none)", ("vector", (0, 2))),
    ("geometry", "cell_resolution", 32, "elements per side of the unit cell", ("min_int", 8)),
    ("geometry", "labelling", "centroid", "element phase rule: centroid or area", ("choice", ("centroid", "area"))),

    ("material", "young", 13.0, "Young-type modulus of the wall phase (plane strain)", ("positive", None)),
    ("material", "poisson", 0.3, "Poisson ratio of the wall phase", ("open", (-1.0, 0.5))),
    ("material", "K_p", 0.05, "wall permeability (A2 positivity: must be > 0)", ("positive", None)),
    ("material", "D_b", (1.0, 1.0, 0.1), "pectin diffusion coefficients b1 b2 b3", ("positive_vector", 3)),
    ("material", "D_e", 1.0, "calcium diffusion in the wall phase", ("positive", None)),
    ("material", "D_f", 1.0, "calcium diffusion in the cell inside", ("positive", None)),
    ("material", "mu", 1.0, "fluid viscosity", ("positive", None)),
    ("material", "rho_e", 1.0, "wall density", ("positive", None)),
    ("material", "rho_p", 1.0, "pore-pressure storage coefficient", ("positive", None)),
    ("material", "rho_f", 1.0, "fluid density", ("positive", None)),

    ("chemistry", "mu1", 0.5, "de-esterification rate", ("nonneg", None)),
    ("chemistry", "mu2", 0.1, "calcium decay rate in the fluid", ("nonneg", None)),
    ("chemistry", "r_dc", 1.0, "crosslink creation rate", ("nonneg", None)),
    ("chemistry", "r_d", 0.1, "pectin decay rate", ("nonneg", None)),
    ("chemistry", "kappa_M", 1.0, "Michaelis constant of crosslink creation", ("positive", None)),
    ("chemistry", "r_b", 0.1, "crosslink breakage coefficient", ("nonneg", None)),
    ("chemistry", "p1", 1.0, "pectin deposition scale at the membrane", ("nonneg", None)),
    ("chemistry", "f_b", 1.0, "external pectin boundary permeability", ("nonneg", None)),
    ("chemistry", "f_c", 1.0, "external calcium boundary permeability", ("nonneg", None)),
    ("chemistry", "k0", 1.0, "memory kernel amplitude", ("nonneg", None)),
    ("chemistry", "tau_kappa", 1.0, "memory kernel relaxation time", ("positive", None)),
    ("chemistry", "e_s", 1.0, "crosslink stiffening gain", ("nonneg", None)),
    ("chemistry", "R", 1.0, "saturation bound of the convective velocity response", ("positive", None)),
    ("chemistry", "memory_samples", 17, "number of tabulated memory values", ("min_int", 2)),
    ("chemistry", "b3_cap", 10.0, "crosslink density bound used to size the memory table", ("positive", None)),

    ("modes", "elasticity", "quasi_stationary", "quasi_stationary or evolutionary", ("choice", ("quasi_stationary", "evolutionary"))),
    ("modes", "pressure", "compressible", "compressible or incompressible", ("choice", ("compressible", "incompressible"))),
    ("modes", "fluid", "quasi_steady", "quasi_steady closure or full two-scale cell flow", ("choice", ("quasi_steady", "full"))),
    ("modes", "chemistry", "coupled", "coupled, or frozen (densities and memory held at their initial values)", ("choice", ("coupled", "frozen"))),

    ("time", "T", 1.0, "final time", ("positive", None)),
    ("time", "dt", 0.01, "time step", ("positive", None)),

    ("macro", "resolution", 32, "macroscopic elements per side", ("min_int", 2)),
    ("macro", "fp_tol", 1e-8, "fixed-point tolerance on successive iterates", ("open", (0.0, 1.0))),
    ("macro", "fp_max_iter", 30, "maximum fixed-point sweeps per step", ("min_int", 2)),

    ("loads", "traction_left", (-0.05, 0.0), "traction F_u on x = 0", ("vector", 2)),
    ("loads", "traction_right", (0.05, 0.0), "traction F_u on x = 1", ("vector", 2)),
    ("loads", "traction_bottom", (0.0, 0.0), "traction F_u on y = 0", ("vector", 2)),
    ("loads", "traction_top", (0.0, 0.0), "traction F_u on y = 1", ("vector", 2)),
    ("loads", "flux_left", 0.01, "fluid flux F_p on x = 0", ("real", None)),
    ("loads", "flux_right", -0.01, "fluid flux F_p on x = 1", ("real", None)),
    ("loads", "flux_bottom", 0.0, "fluid flux F_p on y = 0", ("real", None)),
    ("loads", "flux_top", 0.0, "fluid flux F_p on y = 1", ("real", None)),
    ("loads", "ramp", 0.0, "time over which loads ramp linearly from zero to full (0: applied at once)", ("nonneg", None)),

    ("initial", "b", (1.0, 0.5, 0.1), "initial pectin densities b1 b2 b3", ("nonneg_vector", 3)),
    ("initial", "c", 0.5, "initial calcium density", ("nonneg", None)),
    ("initial", "p", 0.0, "initial pore pressure", ("real", None)),

    ("solver", "tol", 1e-10, "relative residual tolerance of linear solves", ("open", (0.0, 1.0))),
    ("solver", "method", "direct", "direct, cg or minres", ("choice", ("direct", "cg", "minres"))),
    ("solver", "monitor_tol", 1e-10, "tolerated negative excursion of densities", ("positive", None)),

    ("output", "dir", "out", "output directory", ("str", None)),
    ("output", "vtk_every", 0, "write a VTK snapshot every n steps (0: never)", ("min_int", 0)),

    ("dns", "cells", (2, 4, 8), "tissue sizes N (cells per side) for dns and compare", ("int_vector", None)),
    ("dns", "cell_resolution", 16, "elements per side of each cell copy", ("min_int", 16)),
    ("dns", "gamma", 1.0, "energy weight exponent gamma in zeta = exp(-gamma t); must exceed the admissibility bound", ("positive", None)),
]

SECTIONS = tuple(dict.fromkeys(s for s, *_ in _SCHEMA))
_INDEX = {(s, k): (d, doc, chk) for s, k, d, doc, chk in _SCHEMA}


class SimulationConfig:
    """Validated configuration; values are reached as ``cfg.section.key``."""

    def __init__(self, values=None):
        self._values = {s: {} for s in SECTIONS}
        for s, k, d, _, _ in _SCHEMA:
            self._values[s][k] = copy.deepcopy(d)
        for (s, k), v in (values or {}).items():
            self.set(s, k, v)
        self.validate()

    def set(self, section, key, value):
        if (section, key) not in _INDEX:
            raise ConfigError(f"unknown key {section}.{key}", field=f"{section}.{key}")
        self._values[section][key] = value

    def get(self, section, key):
        return self._values[section][key]

    def __getattr__(self, name):
        if name.startswith("_") or name not in SECTIONS:
            raise AttributeError(name)
        return _Section(self._values[name])

    def as_dict(self):
        return copy.deepcopy(self._values)

    def validate(self):
        for s, k, _, _, chk in _SCHEMA:
            _check(s, k, self._values[s][k], chk)
        m = self._values["modes"]
        t = self._values["time"]
        if t["dt"] > t["T"]:
            raise ConfigError("time.dt must not exceed time.T", field="time.dt")
        g = self._values["geometry"]
        if g["inclusion"] != "none":
            c, s = g["center"], g["size"]
            if min(c) - s <= 0 or max(c) + s >= 1:
                raise ConfigError("inclusion must lie strictly inside the unit cell", field="geometry.size")
        if m["pressure"] == "incompressible":
            L = self._values["loads"]
            net = L["flux_left"] + L["flux_right"] + L["flux_bottom"] + L["flux_top"]
            if abs(net) > 1e-12:
                raise ConfigError("incompressible mode needs fluid fluxes with zero net boundary integral",
                                  field="loads.flux_left")

    def to_text(self, annotate=True):
        lines = []
        for s in SECTIONS:
            if lines:
                lines.append("")
            lines.append(f"[{s}]")
            for s2, k, d, doc, _ in _SCHEMA:
                if s2 != s:
                    continue
                if annotate:
                    lines.append(f"# {doc} (default: {_format(d)})")
                lines.append(f"{k} = {_format(self._values[s][k])}")
        return "\n".join(lines) + "\n"

    def hash(self):
        return hashlib.sha256(self.to_text(annotate=False).encode()).hexdigest()[:12]

    def __eq__(self, other):
        return isinstance(other, SimulationConfig) and self.to_text(False) == other.to_text(False)

    def copy(self, **overrides):
        """Copy with ``section__key=value`` overrides."""
        vals = {}
        for name, v in overrides.items():
            s, k = name.split("__", 1)
            vals[(s, k)] = v
        new = SimulationConfig.__new__(SimulationConfig)
        new._values = self.as_dict()
        for (s, k), v in vals.items():
            new.set(s, k, v)
        new.validate()
        return new


class _Section:
    def __init__(self, values):
        self._v = values

    def __getattr__(self, name):
        try:
            return self._v[name]
        except KeyError:
            raise AttributeError(name) from None


def _format(v):
    if isinstance(v, tuple):
        return " ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _check(section, key, v, chk):
    kind, arg = chk
    name = f"{section}.{key}"

    def bad(msg):
        raise ConfigError(f"{name}: {msg}", field=name)

    if kind == "choice":
        if v not in arg:
            bad(f"must be one of {', '.join(arg)}, got {v!r}")
    elif kind == "positive":
        if not (math.isfinite(v) and v > 0):
            bad(f"must be > 0, got {v}" + (" (A2 positivity of the permeability)" if key == "K_p" else ""))
    elif kind == "nonneg":
        if not (math.isfinite(v) and v >= 0):
            bad(f"must be >= 0, got {v}")
    elif kind == "real":
        if not math.isfinite(v):
            bad("must be finite")
    elif kind == "open":
        lo, hi = arg
        if not (lo < v < hi):
            bad(f"must lie in ({lo}, {hi}), got {v}")
    elif kind == "min_int":
        if v < arg:
            bad(f"must be >= {arg}, got {v}")
    elif kind in ("vector", "positive_vector", "nonneg_vector"):
        n = arg
        if isinstance(n, tuple):
            if len(v) not in n:
                bad(f"needs {' or '.join(map(str, n))} values, got {len(v)}")
        elif len(v) != n:
            bad(f"needs {n} values, got {len(v)}")
        if not all(math.isfinite(x) for x in v):
            bad("values must be finite")
        if kind == "positive_vector" and min(v) <= 0:
            bad("values must be > 0")
        if kind == "nonneg_vector" and min(v) < 0:
            bad("values must be >= 0")
    elif kind == "int_vector":
        if not v or any(x < 2 or x > 8 for x in v):
            bad("tissue sizes must lie in 2..8")


def _parse_value(raw, default, section, key, line):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = raw.replace(",", " ").split()
            if section == "dns" and key == "cells":
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {section}.{key} = {raw!r}", line=line, field=f"{section}.{key}") from None


def parse_config(text):
    """Parse configuration text; an empty text gives the defaults."""
    values = {}
    section = None
    for n, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw_line.strip()!r}", line=n)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", line=n)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", line=n)
        if section is None:
            raise ConfigError("key outside of any section", line=n)
        key, raw = (p.strip() for p in line.split("=", 1))
        if (section, key) not in _INDEX:
            raise ConfigError(f"unknown key {section}.{key}", line=n, field=f"{section}.{key}")
        default = _INDEX[(section, key)][0]
        values[(section, key)] = _parse_value(raw, default, section, key, n)
    return SimulationConfig(values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_config():
    return SimulationConfig()
