"""Stable on-disk formats: JSON Lines for per-checkpoint records, CSV for
summary tables, JSON for fit reports.

Every file starts with a header carrying tool version, resolved config
hash, and master seed, enough to reproduce the stream byte for byte.
Floats are serialized with 17 significant digits so a rerun plus re-read
round-trips exactly; non-finite values appear as the quoted strings "nan",
"inf", "-inf" to stay inside strict JSON.
"""

from __future__ import annotations

import json
import math
import sys
from contextlib import contextmanager

import numpy as np

from . import __version__ as TOOL_VERSION
from .dataset import SCHEMA_VERSION, Dataset
from .errors import ParameterError, StateError
from .model import Frame, ModelParams, OffspringLaw


def format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def _parse_float(v) -> float:
    return float(v) if isinstance(v, str) else float(v)


def dumps_compact(obj) -> str:
    """Deterministic JSON with the 17-digit float policy.

    Insertion order of dict keys is preserved (callers construct records
    with a fixed field order), so reruns are byte-identical.
    """
    parts = []
    _dump(obj, parts)
    return "".join(parts)


def _dump(obj, parts):
    if isinstance(obj, dict):
        parts.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                parts.append(",")
            parts.append(json.dumps(str(k)))
            parts.append(":")
            _dump(v, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        parts.append("[")
        for i, v in enumerate(obj):
            if i:
                parts.append(",")
            _dump(v, parts)
        parts.append("]")
    elif isinstance(obj, bool) or obj is None:
        parts.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_float(float(obj)))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    else:
        raise ParameterError(f"cannot serialize {type(obj).__name__}")


@contextmanager
def _out(path):
    """Open a path for writing; '-' streams to stdout."""
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def write_jsonl(dataset: Dataset, path, config_hash: str = "") -> None:
    """One header line, then per replica: one "row" record per checkpoint
    (ordered by replica index then checkpoint) and one "final" record with
    the replica-level outcomes."""
    with _out(path) as fh:
        fh.write(dumps_compact(_header_record(dataset, config_hash)))
        fh.write("\n")
        for i in range(dataset.n_replicas):
            rep = int(dataset.replica_indices[i])
            for j in range(dataset.n_checkpoints):
                rec = {
                    "kind": "row",
                    "replica": rep,
                    "t": float(dataset.checkpoints[j]),
                    "values": dataset.values[i, j],
                }
                fh.write(dumps_compact(rec))
                fh.write("\n")
            fin = {
                "kind": "final",
                "replica": rep,
                "extinction_time": float(dataset.extinction_times[i]),
                "peak_alive": int(dataset.peak_alive[i]),
                "first_upper_touch": float(dataset.first_upper_touch[i]),
                "stopped_time": float(dataset.stopped_times[i]),
            }
            fh.write(dumps_compact(fin))
            fh.write("\n")


def _header_record(dataset: Dataset, config_hash: str) -> dict:
    sig = dataset.signature()
    return {
        "kind": "header",
        "schema_version": SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "config_hash": config_hash,
        "master_seed": dataset.master_seed,
        "model": {
            "beta": sig["beta"],
            "rho": sig["rho"],
            "x0": sig["x0"],
            "frame": sig["frame"],
            "offspring": {str(k): v for k, v in sig["offspring"].items()},
        },
        "run": {
            "barrier_mode": sig["barrier_mode"],
            "upper_line_z": sig["upper_line_z"],
            "segment_dt": sig["segment_dt"],
            "checkpoints": sig["checkpoints"],
            "s_cuts": sig["s_cuts"],
            "phi_names": sig["phi_names"],
        },
        "columns": dataset.column_names,
        "config": dataset.config,
    }


def read_jsonl(path) -> Dataset:
    """Parse a stream written by write_jsonl back into a Dataset.

    Rejects a stream whose schema_version is newer than this tool
    understands; tolerates older versions it can still interpret (none
    exist yet).
    """
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise StateError(f"{path}: empty stream, no header")
        header = json.loads(first)
        if header.get("kind") != "header":
            raise StateError(f"{path}: first line is not a header record")
        version = header.get("schema_version")
        if not isinstance(version, int) or version > SCHEMA_VERSION:
            raise StateError(
                f"{path}: stream schema_version {version!r} is newer than "
                f"supported {SCHEMA_VERSION}; upgrade the tool")
        model = header["model"]
        run = header["run"]
        law = OffspringLaw({int(k): _parse_float(v)
                            for k, v in model["offspring"].items()})
        params = ModelParams.create(
            beta=_parse_float(model["beta"]), rho=_parse_float(model["rho"]),
            x0=_parse_float(model["x0"]), frame=Frame.parse(model["frame"]),
            law=law)
        checkpoints = np.asarray([_parse_float(t) for t in run["checkpoints"]])
        upper = run["upper_line_z"]
        n_cols = len(header["columns"])

        rows = {}
        finals = {}
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            rep = int(rec["replica"])
            if rec["kind"] == "row":
                rows.setdefault(rep, []).append(
                    [_parse_float(v) for v in rec["values"]])
            elif rec["kind"] == "final":
                finals[rep] = rec

    if not rows:
        raise StateError(f"{path}: stream contains no replica records")
    reps = sorted(rows)
    if sorted(finals) != reps:
        raise StateError(f"{path}: replica row/final records inconsistent")
    n_cp = checkpoints.shape[0]
    values = np.empty((len(reps), n_cp, n_cols))
    ext = np.empty(len(reps))
    peak = np.empty(len(reps), dtype=np.int64)
    upt = np.empty(len(reps))
    stp = np.empty(len(reps))
    for i, rep in enumerate(reps):
        if len(rows[rep]) != n_cp:
            raise StateError(
                f"{path}: replica {rep} has {len(rows[rep])} rows, "
                f"expected {n_cp}")
        values[i] = rows[rep]
        fin = finals[rep]
        ext[i] = _parse_float(fin["extinction_time"])
        peak[i] = int(fin["peak_alive"])
        upt[i] = _parse_float(fin["first_upper_touch"])
        stp[i] = _parse_float(fin["stopped_time"])
    return Dataset(
        params=params, master_seed=int(header["master_seed"]),
        barrier_mode=run["barrier_mode"],
        upper_line_z=None if upper is None else _parse_float(upper),
        segment_dt=_parse_float(run["segment_dt"]),
        checkpoints=checkpoints, s_cuts=tuple(_parse_float(s)
                                              for s in run["s_cuts"]),
        phi_names=tuple(run["phi_names"]),
        replica_indices=np.asarray(reps, dtype=np.int64),
        values=values, extinction_times=ext, peak_alive=peak,
        first_upper_touch=upt, stopped_times=stp,
        config=header.get("config", {}))


def _csv_num(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_summary_csv(dataset: Dataset, path, config_hash: str = "") -> None:
    """Per-checkpoint cross-replica summary: for every functional column,
    the mean and standard error over replicas with a finite entry, plus
    the count of finite entries and the surviving-replica fraction."""
    names = dataset.column_names
    with _out(path) as fh:
        fh.write(f"# tool_version={TOOL_VERSION}\n")
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(f"# master_seed={dataset.master_seed}\n")
        fh.write(f"# n_replicas={dataset.n_replicas}\n")
        cols = ["t", "n_alive_replicas", "alive_fraction"]
        for nm in names:
            cols += [f"{nm}_mean", f"{nm}_se", f"{nm}_n"]
        fh.write(",".join(cols) + "\n")
        for j in range(dataset.n_checkpoints):
            t = float(dataset.checkpoints[j])
            alive = dataset.values[:, j, 0] > 0
            row = [_csv_num(t), str(int(alive.sum())),
                   _csv_num(alive.mean() if alive.size else math.nan)]
            for c in range(len(names)):
                col = dataset.values[:, j, c]
                fin = np.isfinite(col)
                n = int(fin.sum())
                if n:
                    m = math.fsum(col[fin]) / n
                    if n > 1:
                        var = math.fsum((v - m) ** 2 for v in col[fin])
                        se = math.sqrt(var / (n - 1) / n)
                    else:
                        se = math.nan
                else:
                    m = se = math.nan
                row += [_csv_num(m), _csv_num(se), str(n)]
            fh.write(",".join(row) + "\n")


def write_wave_csv(wave, path) -> None:
    """(x, g) table for a travelling-wave profile, residual in the header."""
    with _out(path) as fh:
        fh.write(f"# tool_version={TOOL_VERSION}\n")
        fh.write(f"# rho={_csv_num(wave.rho)}\n")
        fh.write(f"# beta={_csv_num(wave.beta)}\n")
        fh.write(f"# residual={_csv_num(wave.residual)}\n")
        fh.write(f"# g_prime0={_csv_num(wave.g_prime0)}\n")
        fh.write(f"# x_max={_csv_num(wave.x_max)}\n")
        fh.write(f"# certain_extinction={int(wave.certain)}\n")
        fh.write("x,g\n")
        for x, g in wave.table():
            fh.write(f"{_csv_num(float(x))},{_csv_num(float(g))}\n")


def write_report_json(report: dict, path, config_hash: str = "") -> None:
    """Fit/analysis report with the standard header fields prepended."""
    body = {
        "kind": "report",
        "schema_version": SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "config_hash": config_hash,
    }
    body.update(report)
    with _out(path) as fh:
        fh.write(dumps_compact(body))
        fh.write("\n")


def read_report_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.loads(fh.read())
    version = rec.get("schema_version")
    if not isinstance(version, int) or version > SCHEMA_VERSION:
        raise StateError(
            f"{path}: report schema_version {version!r} is newer than "
            f"supported {SCHEMA_VERSION}; upgrade the tool")
    return rec
