"""Flow-field, intrinsics, and solver-configuration file formats.

Everything is plain text for inspectability.  A flow file is

    # flow v1 mode=calibrated n=3
    0.1 -0.2 0.003 0.001
    ...

with rows `x y u v` and an optional fifth 0/1 validity column; rows flagged 0
are dropped after the count check.  Pixel-mode files carry pixel coordinates
and flows and need an intrinsics file for the conversion to calibrated units.
Intrinsics and solver configuration use flat `key = value` lines, with dotted
keys for nested solver fields (`lifted.tau = 0.05`).

Floats are serialized with repr, so write-then-parse round-trips bit-exactly;
all writes go through a temp file plus atomic rename.
"""

from __future__ import annotations

import math
import os
import re
import tempfile
from dataclasses import dataclass

import numpy as np

from .estimator import ErlConfig, SolverConfig
from .exceptions import (
    CountMismatchError,
    FlowFileError,
    MalformedHeaderError,
    NonFiniteValueError,
)
from .lifted import LiftedConfig
from .motion_field import FlowField

_HEADER_RE = re.compile(r"^#\s*flow v1 mode=(calibrated|pixel) n=(\d+)\s*$")


@dataclass
class Intrinsics:
    """Pinhole intrinsics in pixels; skew defaults to rectangular pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx!r} fy={self.fy!r}")


def atomic_write_text(path, text: str):
    """Write text to path via a temp file in the same directory + rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".egoflow-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_lines(path) -> list[str]:
    try:
        with open(path, "r") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise FlowFileError(f"cannot read {path}: {exc}")


def _parse_kv_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FlowFileError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def parse_intrinsics_file(path) -> Intrinsics:
    """Read `fx/fy/cx/cy[/skew] = value` lines into an Intrinsics."""
    mapping = _parse_kv_file(path)
    allowed = {"fx", "fy", "cx", "cy", "skew"}
    unknown = set(mapping) - allowed
    if unknown:
        raise FlowFileError(f"{path}: unknown intrinsics keys {sorted(unknown)}")
    missing = {"fx", "fy", "cx", "cy"} - set(mapping)
    if missing:
        raise FlowFileError(f"{path}: missing intrinsics keys {sorted(missing)}")
    values = {}
    for key, raw in mapping.items():
        try:
            values[key] = float(raw)
        except ValueError:
            raise FlowFileError(f"{path}: cannot parse {key} = {raw!r} as a number")
    try:
        return Intrinsics(**values)
    except ValueError as exc:
        raise FlowFileError(f"{path}: {exc}")


def parse_flow_file(path, intrinsics: Intrinsics | None = None) -> FlowField:
    """Parse a flow file into calibrated coordinates.

    Pixel-mode files are converted through the supplied intrinsics; rows with
    validity flag 0 are dropped after the header count is checked.  Errors
    name the offending line.
    """
    lines = _read_lines(path)
    if not lines:
        raise MalformedHeaderError(f"{path}:1: empty file, expected flow header")
    m = _HEADER_RE.match(lines[0])
    if m is None:
        raise MalformedHeaderError(f"{path}:1: bad header {lines[0]!r}")
    mode = m.group(1)
    n_declared = int(m.group(2))
    if mode == "pixel" and intrinsics is None:
        raise FlowFileError(f"{path}: pixel-mode file requires an intrinsics file")

    rows = []
    keep = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if len(rows) >= n_declared:
            raise CountMismatchError(
                f"{path}:{lineno}: more data rows than the declared n={n_declared}"
            )
        parts = line.split()
        if len(parts) not in (4, 5):
            raise FlowFileError(
                f"{path}:{lineno}: expected 'x y u v [flag]', got {len(parts)} fields"
            )
        try:
            vals = [float(p) for p in parts[:4]]
        except ValueError:
            raise FlowFileError(f"{path}:{lineno}: non-numeric field in {line!r}")
        if not all(math.isfinite(v) for v in vals):
            raise NonFiniteValueError(f"{path}:{lineno}: non-finite value in {line!r}")
        flag = True
        if len(parts) == 5:
            if parts[4] not in ("0", "1"):
                raise FlowFileError(f"{path}:{lineno}: validity flag must be 0 or 1")
            flag = parts[4] == "1"
        rows.append(vals)
        keep.append(flag)
    if len(rows) != n_declared:
        raise CountMismatchError(
            f"{path}:{len(lines) + 1}: expected {n_declared} data rows, found {len(rows)}"
        )

    data = np.asarray(rows, dtype=np.float64)[np.asarray(keep, dtype=bool)]
    if data.shape[0] == 0:
        raise FlowFileError(f"{path}: no valid rows after applying validity flags")
    x, y, u, v = data.T
    if mode == "pixel":
        yc = (y - intrinsics.cy) / intrinsics.fy
        xc = (x - intrinsics.cx - intrinsics.skew * yc) / intrinsics.fx
        vc = v / intrinsics.fy
        uc = (u - intrinsics.skew * vc) / intrinsics.fx
        return FlowField(points=np.stack([xc, yc], axis=1), flows=np.stack([uc, vc], axis=1))
    return FlowField(points=np.stack([x, y], axis=1), flows=np.stack([u, v], axis=1))


def write_flow_file(path, flow: FlowField):
    """Write a calibrated-mode flow file with full-precision floats."""
    lines = [f"# flow v1 mode=calibrated n={flow.n}"]
    for (x, y), (u, v) in zip(flow.points, flow.flows):
        lines.append(
            f"{repr(float(x))} {repr(float(y))} {repr(float(u))} {repr(float(v))}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


# Flat config keys mirroring SolverConfig, dotted for the nested blocks.
_CONFIG_SCHEMA = {
    "init_grid_size": int,
    "erl_grid_size": int,
    "gn_max_iterations": int,
    "gn_tolerance": float,
    "min_mean_flow_magnitude": float,
    "lifted_prune_iterations": int,
    "erl.kind": str,
    "lifted.tau": float,
    "lifted.lm_initial_damping": float,
    "lifted.max_iterations": int,
    "lifted.cost_tolerance": float,
    "lifted.w_init": float,
}


def parse_config_file(path) -> dict:
    """Read a solver config file into a raw key -> string mapping."""
    return _parse_kv_file(path)


def solver_config_from_mapping(mapping: dict) -> SolverConfig:
    """Validate and convert flat key=value strings into a SolverConfig."""
    top = {}
    erl = {}
    lifted = {}
    for key, raw in mapping.items():
        if key not in _CONFIG_SCHEMA:
            raise FlowFileError(
                f"unknown config key {key!r}; known keys: {sorted(_CONFIG_SCHEMA)}"
            )
        conv = _CONFIG_SCHEMA[key]
        try:
            value = conv(raw) if not isinstance(raw, conv) else raw
        except ValueError:
            raise FlowFileError(f"config key {key}: cannot parse {raw!r} as {conv.__name__}")
        if key.startswith("erl."):
            erl[key[4:]] = value
        elif key.startswith("lifted."):
            lifted[key[7:]] = value
        else:
            top[key] = value
    try:
        return SolverConfig(erl=ErlConfig(**erl), lifted=LiftedConfig(**lifted), **top)
    except ValueError as exc:
        raise FlowFileError(f"invalid config: {exc}")
