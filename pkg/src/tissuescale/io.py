"""Output files: CSV series, legacy VTK snapshots, binary checkpoints and the coefficient cache.

Every file starts with the line ``# tissuescale <version> config=<hash>``,
except VTK files, whose first line is fixed by the format; there the same
text is the title line.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .effective import EffectiveCoefficients, ElasticityTable
from .errors import ValidationError

MAGIC = b"TSBIN\x00"
FORMAT_VERSION = 1
CACHE_ENV = "TISSUESCALE_CACHE"
# sections that determine the effective coefficients
COEFFICIENT_KEYS = ("geometry", "material", "chemistry")


def header_line(config_hash):
    return f"# tissuescale {__version__} config={config_hash}"


def parse_header(line):
    parts = line.strip().split()
    if len(parts) < 4 or parts[0] != "#" or parts[1] != "tissuescale" or not parts[3].startswith("config="):
        raise ValidationError(f"not a tissuescale file header: {line.strip()!r}")
    return {"version": parts[2], "config": parts[3].split("=", 1)[1]}


def _fmt(x):
    if isinstance(x, str):
        return f'"{x}"' if "," in x else x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, columns, rows, config_hash):
    """Header line, column names, one row per line; floats use round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(header_line(config_hash) + "\n")
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(x) for x in r) + "\n")
    return path


def read_csv(path):
    """``(header dict, columns, float array)``."""
    with open(path) as fh:
        head = parse_header(fh.readline())
        columns = fh.readline().strip().split(",")
        data = [[float(x) for x in line.split(",")] for line in fh if line.strip()]
    return head, columns, np.array(data, dtype=float).reshape(len(data), len(columns))


def write_series(path, series, config_hash, columns=None):
    """CSV of a list of per-step summary dicts."""
    if not series:
        raise ValidationError("empty series")
    columns = columns or [k for k, v in series[0].items() if np.isscalar(v)]
    return write_csv(path, columns, [[s[c] for c in columns] for s in series], config_hash)


def write_tensor_csv(path, name, tensor, config_hash):
    """One row per entry: index tuple and value."""
    tensor = np.asarray(tensor, dtype=float)
    rows = [[name, *idx, tensor[idx]] for idx in np.ndindex(tensor.shape)]
    columns = ["name"] + [f"i{k}" for k in range(tensor.ndim)] + ["value"]
    return write_csv(path, columns, rows, config_hash)


def write_vtk(path, grid, point_data, config_hash, cell_data=None):
    """Legacy ASCII structured-points file.

    ``point_data`` maps names to arrays over the ``(nx + 1) * (ny + 1)`` grid
    nodes, either scalar or ``(n, 2)`` vectors; ``cell_data`` likewise per element.
    """
    if grid.periodic:
        raise ValidationError("VTK output needs a non-periodic grid")
    mx, my = grid.node_shape
    hx, hy = grid.h
    lines = ["# vtk DataFile Version 3.0", header_line(config_hash)[2:], "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {mx} {my} 1", "ORIGIN 0 0 0", f"SPACING {hx!r} {hy!r} 1"]

    def block(data, count):
        out = []
        for name, arr in data.items():
            a = np.asarray(arr, dtype=float)
            if a.shape[0] != count:
                raise ValidationError(f"field {name} has {a.shape[0]} values, expected {count}")
            if a.ndim == 1:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                out += [repr(float(x)) for x in a]
            else:
                out.append(f"VECTORS {name} double")
                out += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in a[:, :2]]
        return out

    lines += [f"POINT_DATA {mx * my}"] + block(point_data, mx * my)
    if cell_data:
        lines += [f"CELL_DATA {grid.n_elements}"] + block(cell_data, grid.n_elements)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


# --------------------------------------------------------------------- binary
def write_binary(path, meta, arrays, config_hash):
    """Header line, magic, format version, JSON metadata, named little-endian float64 arrays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write((header_line(config_hash) + "\n").encode())
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        js = json.dumps(meta, sort_keys=True).encode()
        fh.write(struct.pack("<Q", len(js)))
        fh.write(js)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())
    return path


def read_binary(path):
    """``(header dict, meta, arrays)``; raises ValidationError on a malformed file."""
    with open(path, "rb") as fh:
        head = parse_header(fh.readline().decode(errors="replace"))
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValidationError(f"{path}: bad magic")
        (ver,) = struct.unpack("<I", fh.read(4))
        if ver != FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported format version {ver}")
        (n,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(n).decode())
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (ln,) = struct.unpack("<I", fh.read(4))
            name = fh.read(ln).decode()
            (nd,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{nd}Q", fh.read(8 * nd)) if nd else ()
            size = int(np.prod(shape)) if nd else 1
            buf = fh.read(8 * size)
            if len(buf) != 8 * size:
                raise ValidationError(f"{path}: truncated array {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return head, meta, arrays


# ---------------------------------------------------------------- checkpoints
_STATE_ARRAYS = ("u", "v", "a", "p", "b", "c", "F", "Q", "V", "cell_velocity", "V_mem")


def save_checkpoint(path, state, config):
    """Write a macro state; restoring it continues the run bit for bit."""
    arrays = {k: getattr(state, k) for k in _STATE_ARRAYS if getattr(state, k) is not None}
    arrays["memory_P"] = state.memory["P"]
    arrays["memory_R"] = state.memory["R"]
    record = {k: (list(map(float, v)) if isinstance(v, (list, tuple)) else v) for k, v in state.record.items()}
    meta = {"kind": "macro_state", "t": state.t, "step": state.step, "memory_steps": state.memory["steps"],
            "record": record, "config": config.to_text(annotate=False)}
    return write_binary(path, meta, arrays, config.hash())


def load_checkpoint(path):
    """``(MacroState, config text)``."""
    from .macro import MacroState

    _, meta, arr = read_binary(path)
    if meta.get("kind") != "macro_state":
        raise ValidationError(f"{path} is not a macro checkpoint")
    memory = {"P": arr["memory_P"], "R": arr["memory_R"], "steps": int(meta["memory_steps"])}
    st = MacroState(float(meta["t"]), int(meta["step"]), arr["u"], arr["v"], arr["a"], arr["p"], arr["b"],
                    arr["c"], arr["F"], memory, arr["Q"], arr["V"], arr.get("cell_velocity"), arr.get("V_mem"),
                    dict(meta.get("record", {})))
    return st, meta["config"]


# ----------------------------------------------------------- coefficient cache
def coefficient_key(config):
    """Hash of the config sections the effective coefficients depend on."""
    d = config.as_dict()
    payload = {s: d[s] for s in COEFFICIENT_KEYS}
    payload["solver"] = {"tol": d["solver"]["tol"], "method": d["solver"]["method"]}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=list).encode()).hexdigest()[:16]


def cache_dir():
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "tissuescale"


def cache_path(config, resolution=None):
    res = int(resolution or config.geometry.cell_resolution)
    return cache_dir() / f"coefficients-{coefficient_key(config)}-r{res}.bin"


_COEF_ARRAYS = ("E_hom", "K_p", "K_u", "D_b", "D", "v_f", "Q_p", "Q_u", "mean_velocity", "viscous", "darcy",
                "stress_trace", "dissipation", "kinetic")


def save_coefficients(path, coef, config_hash):
    arrays = {k: getattr(coef, k) for k in _COEF_ARRAYS if getattr(coef, k) is not None}
    if coef.table is not None:
        arrays["table_F"] = coef.table.F
        arrays["table_E"] = coef.table.E
    meta = {"kind": "coefficients", "theta_e": coef.theta_e, "theta_f": coef.theta_f,
            "theta_gamma": coef.theta_gamma, "meta": coef.meta}
    return write_binary(path, meta, arrays, config_hash)


def load_coefficients(path):
    _, meta, arr = read_binary(path)
    if meta.get("kind") != "coefficients":
        raise ValidationError(f"{path} is not a coefficient file")
    table = ElasticityTable(arr.pop("table_F"), arr.pop("table_E")) if "table_F" in arr else None
    kw = {k: arr.get(k) for k in _COEF_ARRAYS}
    return EffectiveCoefficients(theta_e=meta["theta_e"], theta_f=meta["theta_f"],
                                 theta_gamma=meta["theta_gamma"], table=table, meta=meta["meta"], **kw)
