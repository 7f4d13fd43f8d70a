"""Plain-text experiment configuration: `key = value` lines, strict
schema, canonical rendering, and a stable hash.

The resolved configuration (every key, defaults filled in, values
rendered canonically) is what gets hashed and echoed into output
headers, so two configs that resolve identically hash identically no
matter how they were written down.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from .engine import DEFAULT_POPULATION_CAP, DEFAULT_SEGMENT_DT, KILL, TAG
from .errors import ParameterError
from .model import (Frame, ModelParams, OffspringLaw, plateau, smoothed_step,
                    tent, canonical_test_functions)


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _parse_float(key, text):
    try:
        return float(text)
    except ValueError:
        raise ParameterError(f"key {key!r}: expected a number, got {text!r}") from None


def _parse_int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ParameterError(f"key {key!r}: expected an integer, got {text!r}") from None


def _parse_float_list(key, text):
    text = text.strip()
    if not text:
        return ()
    return tuple(_parse_float(key, tok) for tok in text.split(","))


def parse_offspring(text: str) -> OffspringLaw:
    """Parse 'k:prob,k:prob,...' into an offspring law."""
    items = {}
    for tok in text.split(","):
        k, _, p = tok.partition(":")
        if not _:
            raise ParameterError(
                f"offspring atom {tok!r} is not of the form count:probability")
        key = _parse_int("offspring", k.strip())
        if key in items:
            raise ParameterError(f"offspring count {key} listed twice")
        items[key] = _parse_float("offspring", p.strip())
    return OffspringLaw(items)


def format_offspring(law: OffspringLaw) -> str:
    return ",".join(f"{int(k)}:{_fmt(float(p))}"
                    for k, p in zip(law.ks, law.ps))


def parse_test_functions(text: str):
    """Parse the phi catalog selection: 'none', 'canonical', or a comma
    list of step:a / tent:center:halfwidth / plateau:a:level specs."""
    text = text.strip()
    if text == "none" or not text:
        return ()
    if text == "canonical":
        return canonical_test_functions()
    out = []
    for tok in text.split(","):
        parts = tok.split(":")
        kind, args = parts[0].strip(), parts[1:]
        try:
            if kind == "step" and len(args) == 1:
                out.append(smoothed_step(float(args[0])))
            elif kind == "tent" and len(args) == 2:
                out.append(tent(float(args[0]), float(args[1])))
            elif kind == "plateau" and len(args) == 2:
                out.append(plateau(float(args[0]), float(args[1])))
            else:
                raise ValueError
        except ValueError:
            raise ParameterError(
                f"bad test-function spec {tok!r}; expected step:a, "
                "tent:center:halfwidth, or plateau:a:level") from None
    return tuple(out)


# key -> default as canonical text; None marks a required key
_SCHEMA = {
    "beta": "1",
    "offspring": "2:1",
    "rho": "0",
    "x0": "1",
    "frame": "standard",
    "barrier_mode": "tag",
    "replicas": "100",
    "replica_start": "0",
    "master_seed": "1",
    "checkpoints": None,
    "segment_dt": _fmt(DEFAULT_SEGMENT_DT),
    "upper_line_z": "none",
    "s_cuts": "",
    "phis": "none",
    "population_cap": str(DEFAULT_POPULATION_CAP),
    "survival_stop_count": "0",
    "survival_stop_clearance": "1",
    "threads": "auto",
    "output": "dataset.jsonl",
    "summary_output": "none",
}


def parse_config_text(text: str) -> dict:
    """Raw `key = value` lines to a dict; '#' starts a comment.

    Unknown and duplicate keys are rejected so a typo cannot silently
    fall back to a default.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, eq, value = body.partition("=")
        if not eq:
            raise ParameterError(
                f"config line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in _SCHEMA:
            raise ParameterError(
                f"config line {lineno}: unknown key {key!r}; known keys: "
                + ", ".join(sorted(_SCHEMA)))
        if key in raw:
            raise ParameterError(f"config line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A fully validated simulation request.

    Build with from_text / from_file; every field is already parsed and
    cross-checked (the model parameters are constructed eagerly, so
    an inconsistent config fails here and not mid-run).
    """

    params: ModelParams
    barrier_mode: str
    replicas: int
    replica_start: int
    master_seed: int
    checkpoints: tuple
    segment_dt: float
    upper_line_z: float | None
    s_cuts: tuple
    phis: tuple
    population_cap: int
    survival_stop_count: int
    survival_stop_clearance: float
    threads: int
    output: str
    summary_output: str | None
    resolved: dict = field(repr=False)

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None) -> "ExperimentConfig":
        raw = parse_config_text(text)
        for key, value in (overrides or {}).items():
            if key not in _SCHEMA:
                raise ParameterError(f"unknown config key {key!r}")
            raw[key] = str(value)
        missing = [k for k, d in _SCHEMA.items() if d is None and k not in raw]
        if missing:
            raise ParameterError(
                "missing required config key(s): " + ", ".join(sorted(missing)))
        resolved = {k: raw.get(k, d) for k, d in _SCHEMA.items()}

        law = parse_offspring(resolved["offspring"])
        params = ModelParams.create(
            beta=_parse_float("beta", resolved["beta"]),
            rho=_parse_float("rho", resolved["rho"]),
            x0=_parse_float("x0", resolved["x0"]),
            frame=Frame.parse(resolved["frame"]),
            law=law)
        barrier_mode = resolved["barrier_mode"]
        if barrier_mode not in (KILL, TAG):
            raise ParameterError(
                f"barrier_mode must be '{KILL}' or '{TAG}', got {barrier_mode!r}")
        replicas = _parse_int("replicas", resolved["replicas"])
        if replicas < 1:
            raise ParameterError("replicas must be >= 1")
        checkpoints = _parse_float_list("checkpoints", resolved["checkpoints"])
        if not checkpoints:
            raise ParameterError("checkpoints must name at least one time")
        upper = resolved["upper_line_z"]
        threads_text = resolved["threads"]
        if threads_text == "auto":
            threads = os.cpu_count() or 1
        else:
            threads = _parse_int("threads", threads_text)
            if threads < 1:
                raise ParameterError("threads must be >= 1")
        summary = resolved["summary_output"]

        # re-render every value canonically so equivalent spellings of the
        # same run hash identically
        canon = dict(resolved)
        canon["beta"] = _fmt(params.beta)
        canon["rho"] = _fmt(params.rho)
        canon["x0"] = _fmt(params.x0)
        canon["offspring"] = format_offspring(law)
        canon["frame"] = params.frame.value
        canon["replicas"] = str(replicas)
        canon["replica_start"] = str(_parse_int("replica_start", resolved["replica_start"]))
        canon["master_seed"] = str(_parse_int("master_seed", resolved["master_seed"]))
        canon["checkpoints"] = ",".join(_fmt(t) for t in checkpoints)
        canon["segment_dt"] = _fmt(_parse_float("segment_dt", resolved["segment_dt"]))
        canon["upper_line_z"] = ("none" if upper == "none"
                                 else _fmt(_parse_float("upper_line_z", upper)))
        canon["s_cuts"] = ",".join(_fmt(s) for s in
                                   _parse_float_list("s_cuts", resolved["s_cuts"]))
        phis = parse_test_functions(resolved["phis"])
        canon["phis"] = (resolved["phis"] if resolved["phis"] in ("none", "canonical")
                         else ",".join(f.name for f in phis))
        canon["population_cap"] = str(_parse_int("population_cap",
                                                 resolved["population_cap"]))
        canon["survival_stop_count"] = str(_parse_int(
            "survival_stop_count", resolved["survival_stop_count"]))
        canon["survival_stop_clearance"] = _fmt(_parse_float(
            "survival_stop_clearance", resolved["survival_stop_clearance"]))
        canon["threads"] = threads_text if threads_text == "auto" else str(threads)

        return cls(
            params=params, barrier_mode=barrier_mode, replicas=replicas,
            replica_start=int(canon["replica_start"]),
            master_seed=int(canon["master_seed"]),
            checkpoints=checkpoints,
            segment_dt=float(canon["segment_dt"]),
            upper_line_z=None if upper == "none" else float(canon["upper_line_z"]),
            s_cuts=_parse_float_list("s_cuts", canon["s_cuts"]),
            phis=phis,
            population_cap=int(canon["population_cap"]),
            survival_stop_count=int(canon["survival_stop_count"]),
            survival_stop_clearance=float(canon["survival_stop_clearance"]),
            threads=threads, output=resolved["output"],
            summary_output=None if summary == "none" else summary,
            resolved=canon)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read(), overrides)

    def data_keys(self) -> dict:
        """The resolved keys that determine the simulated data.  Output
        paths and thread count are execution details: the stream is
        independent of them, so they stay out of the hash and the header
        echo."""
        skip = ("output", "summary_output", "threads")
        return {k: v for k, v in self.resolved.items() if k not in skip}

    def canonical_text(self) -> str:
        data = self.data_keys()
        return "".join(f"{k} = {data[k]}\n" for k in sorted(data))

    @property
    def config_hash(self) -> str:
        return hash_text(self.canonical_text())

    def experiment_kwargs(self) -> dict:
        """Keyword arguments for estimators.run_experiment (everything but
        params, checkpoints, and replicas, which are passed positionally)."""
        return dict(
            master_seed=self.master_seed, replica_start=self.replica_start,
            barrier_mode=self.barrier_mode, upper_line_z=self.upper_line_z,
            segment_dt=self.segment_dt, s_cuts=self.s_cuts,
            test_functions=self.phis, population_cap=self.population_cap,
            survival_stop_count=self.survival_stop_count,
            survival_stop_clearance=self.survival_stop_clearance,
            threads=self.threads, config=self.data_keys())


def hash_text(text: str) -> str:
    """First 16 hex digits of the sha256 of the canonical text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
