"""Readers for the harness's on-disk formats.

Every number the report displays is parsed from these files; nothing is
estimated on this side. Readers validate only the fields the plots need
and raise ReportInputError naming the file and the offending field, so a
bad input fails before any output is written.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# highest harness schema this package understands
SCHEMA_VERSION = 1


class ReportError(Exception):
    """Base class for everything this package raises on purpose."""


class ReportSpecError(ReportError):
    """The report spec itself is unusable."""


class ReportInputError(ReportError):
    """An input file is missing, malformed, or from a newer tool."""


def _num(value) -> float:
    # the harness serializes non-finite floats as the strings
    # "nan" / "inf" / "-inf"; float() accepts exactly those spellings
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ReportInputError(f"not a number: {value!r}")


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ReportInputError(f"{path}: cannot read input ({exc})") from exc
    try:
        rec = json.loads(text)
    except ValueError as exc:
        raise ReportInputError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(rec, dict):
        raise ReportInputError(f"{path}: expected a JSON object")
    return rec


def _check_version(rec: dict, path) -> None:
    version = rec.get("schema_version")
    if not isinstance(version, int) or version > SCHEMA_VERSION:
        raise ReportInputError(
            f"{path}: schema_version {version!r} is newer than supported "
            f"{SCHEMA_VERSION}; upgrade this tool")


def require(rec: dict, path, field: str):
    """Fetch a dotted field from a report, erroring with its exact name."""
    node = rec
    for part in field.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ReportInputError(f"{path}: missing field {field!r}")
        node = node[part]
    return node


def read_report(path, kind: str, fields=()) -> dict:
    """A report JSON of the given kind with the listed fields present."""
    rec = _load_json(path)
    _check_version(rec, path)
    got = rec.get("kind")
    if got != kind:
        raise ReportInputError(
            f"{path}: expected a {kind!r} report, found kind {got!r}")
    for field in fields:
        require(rec, path, field)
    return rec


def table_rows(rec: dict, path, table_field: str, key: str):
    """Estimate rows under one literal key of a table field.

    The key is taken verbatim; names like 'plateau:-1:0.5' contain dots,
    so they cannot go through the dotted require() path.
    """
    table = require(rec, path, table_field)
    if not isinstance(table, dict) or key not in table:
        raise ReportInputError(f"{path}: missing field '{table_field}[{key}]'")
    return estimate_rows(table[key], path, f"{table_field}[{key}]")


def estimate_rows(rows, path, field: str):
    """[(t, value, se)] out of a list of estimate records."""
    if not isinstance(rows, list) or not rows:
        raise ReportInputError(f"{path}: field {field!r} holds no records")
    out = []
    for rec in rows:
        if not isinstance(rec, dict):
            raise ReportInputError(f"{path}: field {field!r} has a non-record entry")
        for key in ("t", "value", "se"):
            if key not in rec:
                raise ReportInputError(f"{path}: missing field {field!r}[].{key}")
        out.append((_num(rec["t"]), _num(rec["value"]), _num(rec["se"])))
    return out


def curve_points(rec: dict, path, field: str):
    """(z, p) arrays from an embedded CDF curve record."""
    node = require(rec, path, field)
    z = require(node, path, "z") if isinstance(node, dict) else None
    if z is None:
        raise ReportInputError(f"{path}: field {field!r} is not a curve record")
    p = require(node, path, "p")
    z = np.asarray([_num(v) for v in z], dtype=np.float64)
    p = np.asarray([_num(v) for v in p], dtype=np.float64)
    if z.size != p.size or z.size == 0:
        raise ReportInputError(f"{path}: curve {field!r} has mismatched arrays")
    return z, p


@dataclass(frozen=True)
class DatasetSlice:
    """The small slice of a simulation stream the plots can use."""

    path: str
    master_seed: int
    columns: tuple
    checkpoints: tuple
    values: np.ndarray  # (replica, checkpoint, column)

    def column(self, t: float, name: str) -> np.ndarray:
        if name not in self.columns:
            raise ReportInputError(
                f"{self.path}: no column {name!r}; available: "
                + ", ".join(self.columns))
        deltas = [abs(c - t) for c in self.checkpoints]
        j = int(np.argmin(deltas))
        if deltas[j] > 1e-9:
            raise ReportInputError(
                f"{self.path}: no checkpoint at t={t!r}; grid: "
                + ", ".join(f"{c:g}" for c in self.checkpoints))
        return self.values[:, j, :][:, self.columns.index(name)]


def read_dataset(path) -> DatasetSlice:
    """Parse a simulate JSON Lines stream into replica x checkpoint x column."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ReportInputError(f"{path}: cannot read input ({exc})") from exc
    if not lines or not lines[0].strip():
        raise ReportInputError(f"{path}: empty stream, no header")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise ReportInputError(f"{path}: first line is not a header record")
    _check_version(header, path)
    columns = tuple(require(header, path, "columns"))
    checkpoints = tuple(_num(t) for t in require(header, path, "run.checkpoints"))
    rows = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("kind") != "row":
            continue
        rows.setdefault(int(rec["replica"]), []).append(
            [_num(v) for v in rec["values"]])
    if not rows:
        raise ReportInputError(f"{path}: stream contains no replica records")
    values = np.full((len(rows), len(checkpoints), len(columns)), np.nan)
    for i, rep in enumerate(sorted(rows)):
        got = rows[rep]
        if len(got) != len(checkpoints):
            raise ReportInputError(
                f"{path}: replica {rep} has {len(got)} rows, expected "
                f"{len(checkpoints)}")
        values[i] = np.asarray(got, dtype=np.float64)
    return DatasetSlice(path=str(path), master_seed=int(header.get("master_seed", 0)),
                        columns=columns, checkpoints=checkpoints, values=values)


@dataclass(frozen=True)
class WaveCurve:
    """One travelling-wave profile table plus the solver's header numbers."""

    path: str
    rho: float
    residual: float
    certain: bool
    x: np.ndarray
    g: np.ndarray


def read_wave_csv(path) -> WaveCurve:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ReportInputError(f"{path}: cannot read input ({exc})") from exc
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, eq, value = line[1:].strip().partition("=")
            if eq:
                meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    for key in ("rho", "residual", "certain_extinction"):
        if key not in meta:
            raise ReportInputError(f"{path}: missing field {key!r}")
    if not body or body[0].split(",")[:2] != ["x", "g"]:
        raise ReportInputError(f"{path}: missing x,g table header")
    xs, gs = [], []
    for line in body[1:]:
        parts = line.split(",")
        if len(parts) != 2:
            raise ReportInputError(f"{path}: malformed table row {line!r}")
        xs.append(_num(parts[0]))
        gs.append(_num(parts[1]))
    if not xs:
        raise ReportInputError(f"{path}: wave table has no rows")
    return WaveCurve(path=str(path), rho=_num(meta["rho"]),
                     residual=_num(meta["residual"]),
                     certain=bool(int(meta["certain_extinction"])),
                     x=np.asarray(xs), g=np.asarray(gs))
