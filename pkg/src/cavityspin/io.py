"""Output formats: CSV tables, JSON manifests and binary density-matrix checkpoints.

CSV numbers use Python's shortest round-trip ``repr`` so that identical
results always produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import struct
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError
from .params import ModelParams

UNITS_NOTE = "units: time s; rates 1/s; angular frequencies rad/s; spin components in units of hbar"


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def write_csv(path, columns, rows, comment: str | None = None) -> Path:
    """Write a table with a ``#`` comment line naming the units, then a header row."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {UNITS_NOTE}\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} fields, expected {len(columns)}")
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into strict JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba", "pydantic"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(out_dir, subcommand: str, config: dict, files, wall_time: float, diagnostics: dict) -> Path:
    """Manifest listing every output file with its SHA-256."""
    out_dir = Path(out_dir)
    entries = {}
    for f in sorted(Path(f) for f in files):
        entries[f.name] = {"sha256": sha256_file(f), "bytes": f.stat().st_size}
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "versions": versions(),
        "wall_time_s": wall_time,
        "diagnostics": diagnostics,
        "files": entries,
    }
    return write_json(out_dir / "manifest.json", manifest)


# --- checkpoints -----------------------------------------------------------
#
# Layout (little-endian):
#   8 bytes   magic b"CSPINCKP"
#   uint32    format version
#   uint32    N
#   float64   chi, gamma, omega, t
#   complex128 x (N+1)^2, row-major

CHECKPOINT_MAGIC = b"CSPINCKP"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sII4d")


def save_checkpoint(path, rho: np.ndarray, p: ModelParams, t: float) -> Path:
    d = p.n_atoms + 1
    rho = np.asarray(rho, dtype="<c16")
    if rho.shape != (d, d):
        raise InvalidParameterError("state dimension does not match n_atoms")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, p.n_atoms, p.chi, p.gamma, p.omega, float(t)))
        fh.write(np.ascontiguousarray(rho).tobytes(order="C"))
    return path


def load_checkpoint(path) -> tuple[np.ndarray, ModelParams, float]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidParameterError("checkpoint truncated")
    magic, version, n, chi, gamma, omega, t = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise InvalidParameterError("not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise InvalidParameterError(f"unsupported checkpoint version {version}")
    d = n + 1
    body = raw[_HEADER.size :]
    if len(body) != 16 * d * d:
        raise InvalidParameterError("checkpoint body size does not match header")
    rho = np.frombuffer(body, dtype="<c16").reshape(d, d).astype(complex)
    return rho, ModelParams(n, chi, gamma, omega), t
