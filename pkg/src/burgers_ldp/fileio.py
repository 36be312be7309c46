"""Configuration files, trajectory serialization and run manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .solver import TrajectoryPath

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "parse_config",
    "load_config",
    "dump_config",
    "config_hash",
    "fmt_float",
    "write_path_csv",
    "read_path_csv",
    "write_path_binary",
    "read_path_binary",
    "write_json_atomic",
    "write_text_atomic",
    "version_string",
]

BINARY_MAGIC = b"BLDP1\n"


class ConfigError(ValueError):
    """Unreadable or invalid configuration; the message names the line or field."""


# --- config ------------------------------------------------------------------

def _flatten(table: dict, prefix: str = "", depth: int = 0) -> dict:
    out = {}
    for key, val in table.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            if depth >= 1:
                raise ConfigError(f"{name}: sections nest at most two levels deep")
            out.update(_flatten(val, name + ".", depth + 1))
        else:
            out[name] = val
    return out


def parse_config(text: str) -> dict:
    """Parse flat ``section.key = value`` text into ``{"section.key": value}``."""
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config syntax error: {err}") from None
    return _flatten(table)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text)


def _literal(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        # TOML basic string: JSON escapes are valid except surrogate pairs; DEL must be escaped
        return json.dumps(v, ensure_ascii=False).replace("\x7f", "\\u007f")
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_literal(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def dump_config(flat: dict) -> str:
    """Inverse of :func:`parse_config`: one ``key = value`` line per entry, sorted."""
    return "".join(f"{k} = {_literal(flat[k])}\n" for k in sorted(flat))


def config_hash(flat: dict) -> str:
    return hashlib.sha256(dump_config(flat).encode()).hexdigest()


# --- trajectories --------------------------------------------------------------

def fmt_float(x: float) -> str:
    return "%.17g" % x


def _atomic_write_bytes(path: Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str):
    _atomic_write_bytes(Path(path), text.encode())


def write_json_atomic(path, obj):
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def path_csv_text(path: TrajectoryPath) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"u_{k}" for k in range(1, path.n_modes + 1)])
    for t, row in zip(path.times, path.values):
        w.writerow([fmt_float(t)] + [fmt_float(x) for x in row])
    return buf.getvalue()


def write_path_csv(file, path: TrajectoryPath):
    """Columns ``t, u_1..u_N`` with 17 significant digits."""
    write_text_atomic(file, path_csv_text(path))


def read_path_csv(file, meta: dict | None = None) -> TrajectoryPath:
    data = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    return TrajectoryPath(data[:, 0], data[:, 1:], dict(meta or {}))


def write_path_binary(file, path: TrajectoryPath, header: dict | None = None):
    """Magic line, uint32 header length, JSON header, then little-endian float64 rows ``[t, u_1..u_N]``."""
    hdr = {"N": path.n_modes, "h": path.h, "n_times": path.times.size}
    hdr.update({k: v for k, v in path.meta.items() if k in ("scheme", "seed")})
    hdr.update(header or {})
    raw = json.dumps(hdr, sort_keys=True, default=_json_default).encode()
    body = np.column_stack([path.times, path.values]).astype("<f8").tobytes()
    _atomic_write_bytes(Path(file), BINARY_MAGIC + struct.pack("<I", len(raw)) + raw + body)


def read_path_binary(file) -> TrajectoryPath:
    data = Path(file).read_bytes()
    if not data.startswith(BINARY_MAGIC):
        raise ValueError(f"{file}: not a trajectory binary file")
    off = len(BINARY_MAGIC)
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    hdr = json.loads(data[off : off + n])
    off += n
    arr = np.frombuffer(data[off:], dtype="<f8").reshape(hdr["n_times"], hdr["N"] + 1)
    return TrajectoryPath(arr[:, 0], arr[:, 1:], hdr)


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__
