"""Run configuration, result files and run manifests."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import os
import re
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from . import ensembles as en

COMMANDS = ("sample", "transition", "spacing", "density", "mscaling", "ginibre")
MU_UNITS = ("raw", "mu0", "ET")
OUTPUT_ENV = "PTRMT_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_SOLVER = 4


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_MU_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(raw|mu0|ET)?\s*$")


def parse_mu(value, path: str = "mu"):
    """Split a mu value into (number, unit tag or None).

    Accepts numbers, strings such as ``"5mu0"``, ``"2ET"``, ``"0.2raw"`` and
    mappings ``{"value": 5, "unit": "mu0"}``.
    """
    if isinstance(value, Mapping):
        unit = value.get("unit")
        if unit is not None and unit not in MU_UNITS:
            raise ConfigError(path, f"unknown mu unit {unit!r}")
        return _number(value.get("value"), path), unit
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value), None
    if isinstance(value, str):
        m = _MU_RE.match(value)
        if m:
            return _number(m.group(1), path), m.group(2)
    raise ConfigError(path, f"cannot parse mu value {value!r}")


def _number(v, path):
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {v!r}") from None
    if not np.isfinite(x):
        raise ConfigError(path, f"expected a finite number, got {v!r}")
    return x


def _int(v, path, lo=None):
    if isinstance(v, bool):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    try:
        x = int(v)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected an integer, got {v!r}") from None
    if x != float(v):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and x < lo:
        raise ConfigError(path, f"must be >= {lo}, got {x}")
    return x


def _list(v, path, conv):
    if isinstance(v, str):
        v = [p for p in v.split(",") if p.strip()]
    if not isinstance(v, (list, tuple)):
        raise ConfigError(path, f"expected a list, got {v!r}")
    return [conv(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _transparency(v, path):
    x = _number(v, path)
    if not 0.0 <= x <= 1.0:
        raise ConfigError(path, "T out of [0,1]")
    return x


def _positive(v, path):
    x = _number(v, path)
    if x <= 0:
        raise ConfigError(path, f"must be positive, got {x}")
    return x


def _str_choice(choices):
    def conv(v, path):
        if v not in choices:
            raise ConfigError(path, f"must be one of {list(choices)}, got {v!r}")
        return v

    return conv


def _window(v, path):
    """``"default"``, ``null`` (no window) or ``[lo, hi]``."""
    if v == "default" or v is None:
        return v
    if isinstance(v, str) and v.lower() == "none":
        return None
    if isinstance(v, str):
        v = v.split(",")
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(path, f"expected 'default', null or [lo, hi], got {v!r}")
    lo, hi = _number(v[0], f"{path}[0]"), _number(v[1], f"{path}[1]")
    if hi <= lo:
        raise ConfigError(path, "window must have lo < hi")
    return [lo, hi]


def _ensemble(v, path):
    try:
        return en.EnsembleSpec.from_name(str(v), 2, 0, 0.0).name
    except en.EnsembleError as exc:
        raise ConfigError(path, str(exc)) from None


_COMMON = {
    "ensemble": (_ensemble, "GOOE"),
    "M": (lambda v, p: _int(v, p, 1), 200),
    "N": (lambda v, p: _int(v, p, 0), 40),
    "T": (_transparency, 1.0),
    "master_seed": (lambda v, p: _int(v, p, 0), 0),
    "samples": (lambda v, p: _int(v, p, 1), 20),
    "workers": (lambda v, p: _int(v, p, 1), 1),
    "output_dir": (lambda v, p: str(v), None),
}

_SCHEMA: Dict[str, Dict[str, Any]] = {
    "sample": {"mu": (None, 0.0), "mu_unit": (_str_choice(MU_UNITS), "raw")},
    "transition": {
        "T_values": (lambda v, p: _list(v, p, _transparency), None),
        "mu_grid": (None, None),
        "mu_max": (None, None),
        "n_mu": (lambda v, p: _int(v, p, 2), 25),
        "mu_unit": (_str_choice(MU_UNITS), "mu0"),
        "samples": (lambda v, p: _int(v, p, 1), 200),
        "window": (_window, "default"),
    },
    "spacing": {
        "T_values": (lambda v, p: _list(v, p, _transparency), None),
        "mode": (_str_choice(("superposed", "single_sequence")), "superposed"),
        "bin_width": (_positive, 0.1),
        "window": (_window, [-0.5, 0.5]),
        "samples": (lambda v, p: _int(v, p, 1), 500),
    },
    "density": {
        "mu": (None, 0.0),
        "mu_unit": (_str_choice(MU_UNITS), "raw"),
        "re_min": (_number, -3.0),
        "re_max": (_number, 3.0),
        "n_re": (lambda v, p: _int(v, p, 1), 121),
        "im_min": (_number, -0.5),
        "im_max": (_number, 0.5),
        "n_im": (lambda v, p: _int(v, p, 1), 51),
        "lam": (_positive, 1e-3),
        "method": (_str_choice(("fd", "implicit")), "fd"),
        "dz": (_positive, 0.05),
        "samples": (lambda v, p: _int(v, p, 0), 0),
    },
    "mscaling": {
        "M_values": (lambda v, p: _list(v, p, lambda x, q: _int(x, q, 2)), [100, 200, 400, 800]),
        "alpha": (_number, 0.2),
        "mu_over_ET": (_number, 1.0),
        "samples": (lambda v, p: _int(v, p, 1), 50),
        "window": (_window, [-0.5, 0.5]),
    },
    "ginibre": {
        "M_values": (lambda v, p: _list(v, p, lambda x, q: _int(x, q, 2)), [50, 100, 200, 400]),
        "samples": (lambda v, p: _int(v, p, 1), 1000),
    },
}


@dataclass
class RunConfig:
    command: str
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def output_dir(self) -> Path:
        d = self.params.get("output_dir") or os.environ.get(OUTPUT_ENV) or "ptrmt-out"
        return Path(d)

    def spec(self, mu: float = 0.0) -> en.EnsembleSpec:
        p = self.params
        try:
            return en.EnsembleSpec.from_name(p["ensemble"], p["M"], p["N"], p["T"], mu)
        except en.EnsembleError as exc:
            raise ConfigError("ensemble", str(exc)) from None

    def to_dict(self) -> dict:
        return {"command": self.command, **self.params}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _normalize_mu(cfg: RunConfig, raw: dict):
    """Resolve unit tags; mu values end up as plain numbers in ``mu_unit``."""
    p = cfg.params
    unit = raw.get("mu_unit")
    keys = [k for k in ("mu", "mu_max") if k in raw] + (["mu_grid"] if "mu_grid" in raw else [])
    seen = set()
    for key in keys:
        vals = raw[key] if key == "mu_grid" else [raw[key]]
        if key == "mu_grid" and isinstance(vals, str):
            vals = [v for v in vals.split(",") if v.strip()]
        if key == "mu_grid" and not isinstance(vals, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {vals!r}")
        parsed = [parse_mu(v, f"{key}[{i}]" if key == "mu_grid" else key) for i, v in enumerate(vals)]
        for _, u in parsed:
            if u is not None:
                seen.add(u)
        if key == "mu_grid":
            p[key] = [x for x, _ in parsed]
        else:
            p[key] = parsed[0][0]
    if len(seen) > 1:
        raise ConfigError("mu_unit", f"conflicting mu units {sorted(seen)}")
    if seen:
        tag = seen.pop()
        if unit is not None and unit != tag:
            raise ConfigError("mu_unit", f"conflicting units: mu_unit={unit!r} but value tagged {tag!r}")
        p["mu_unit"] = tag
    for key in ("mu", "mu_max"):
        if key in p and p[key] is not None and p[key] < 0:
            raise ConfigError(key, "mu must be nonnegative")
    if p.get("mu_grid") is not None:
        g = p["mu_grid"]
        if any(b <= a for a, b in zip(g, g[1:])) or any(x < 0 for x in g):
            raise ConfigError("mu_grid", "must be nonnegative and strictly increasing")


def parse_config(source=None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Merge a JSON config (text, path or mapping) with overrides and validate.

    A run manifest is accepted as well; its ``config`` entry is used.
    Overrides win over the file.  Unknown keys raise :class:`ConfigError`.
    """
    raw: Dict[str, Any] = {}
    if source is not None:
        if isinstance(source, Mapping):
            raw = dict(source)
        else:
            text = str(source)
            if not text.lstrip().startswith("{"):
                text = Path(text).read_text()
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError("<json>", str(exc)) from None
        if "config" in raw and "command" not in raw:
            raw = dict(raw["config"])
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    command = raw.pop("command", None)
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {list(COMMANDS)}, got {command!r}")
    schema = {**_COMMON, **_SCHEMA[command]}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    cfg = RunConfig(command)
    for key, (conv, default) in schema.items():
        if conv is None:
            continue
        if key in raw and (raw[key] is not None or key == "window"):
            cfg.params[key] = conv(raw[key], key)
        elif key != "mu_unit":
            cfg.params[key] = default
    mu_keys = {k: raw[k] for k in ("mu", "mu_max", "mu_grid", "mu_unit") if k in raw and raw[k] is not None}
    for k in ("mu", "mu_max", "mu_grid"):
        if k in schema and k not in mu_keys:
            cfg.params[k] = schema[k][1]
    _normalize_mu(cfg, mu_keys)
    if "mu_unit" not in cfg.params and "mu_unit" in schema:
        cfg.params["mu_unit"] = schema["mu_unit"][1]
    p = cfg.params
    if p["N"] > p["M"]:
        raise ConfigError("N", f"N={p['N']} exceeds M={p['M']}")
    cfg.spec()
    if command in ("transition", "spacing") and p.get("T_values") is None:
        p["T_values"] = [p["T"]]
    return cfg


def mu_in_raw(cfg: RunConfig, value: float) -> float:
    """Convert a mu value in ``cfg``'s unit to energy units."""
    from .experiments import mu_zero

    unit = cfg.params.get("mu_unit", "raw")
    spec = cfg.spec()
    if unit == "raw":
        return value
    if unit == "mu0":
        return value * mu_zero(spec)
    return value * en.scales(spec).e_thouless


def mu_grid_in_mu0(cfg: RunConfig) -> np.ndarray:
    """Transition grid in units of mu_0, built from mu_grid or mu_max."""
    from .experiments import default_mu_grid, mu_zero

    p = cfg.params
    if p.get("mu_grid") is not None:
        vals = np.asarray(p["mu_grid"], dtype=float)
    elif p.get("mu_max") is not None:
        hi = p["mu_max"]
        if hi <= 0:
            raise ConfigError("mu_max", "must be positive")
        vals = default_mu_grid(p["n_mu"], hi / 100, hi)
    else:
        return default_mu_grid(p["n_mu"])
    spec = cfg.spec()
    scale = {"mu0": 1.0, "raw": 1.0 / mu_zero(spec), "ET": en.scales(spec).e_thouless / mu_zero(spec)}
    return vals * scale[p.get("mu_unit", "mu0")]


# -- output files ---------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_text(columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def git_blob_hash(data: bytes) -> str:
    """Content hash computed like ``git hash-object``."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ResultWriter:
    """Serializes all writes of one run and builds its manifest."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = cfg.output_dir
        self.files: Dict[str, str] = {}
        self.failures: List[dict] = []
        self.seeds: Dict[str, Any] = {}
        self.extra: Dict[str, Any] = {}
        self.started = _dt.datetime.now(_dt.timezone.utc)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"output directory {self.dir} is not writable: {exc}") from exc
        if not os.access(self.dir, os.W_OK):
            raise OSError(f"output directory {self.dir} is not writable")

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        write_atomic(path, text)
        self.files[name] = git_blob_hash(text.encode())
        return path

    def write_csv(self, name: str, columns, rows) -> Path:
        return self.write(name, csv_text(columns, rows))

    def manifest(self, scales: Optional[en.ScalesReport] = None) -> dict:
        ended = _dt.datetime.now(_dt.timezone.utc)
        return {
            "config": self.cfg.to_dict(),
            "scales": None if scales is None else {k: _jsonable(v) for k, v in asdict(scales).items()},
            "tool": "ptrmt",
            "version": __version__,
            "start": self.started.isoformat(),
            "end": ended.isoformat(),
            "wall_time": (ended - self.started).total_seconds(),
            "seeds": self.seeds,
            "outputs": dict(sorted(self.files.items())),
            "failures": self.failures,
            **self.extra,
        }

    def finish(self, scales: Optional[en.ScalesReport] = None) -> dict:
        m = self.manifest(scales)
        write_atomic(self.dir / "manifest.json", json.dumps(m, indent=2, sort_keys=True) + "\n")
        return m


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def verify_manifest(directory) -> Dict[str, bool]:
    """Recompute output hashes and compare them with ``manifest.json``."""
    directory = Path(directory)
    m = json.loads((directory / "manifest.json").read_text())
    return {
        name: git_blob_hash((directory / name).read_bytes()) == digest
        for name, digest in m["outputs"].items()
    }
