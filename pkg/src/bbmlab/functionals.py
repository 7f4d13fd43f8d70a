"""Snapshot functionals: martingale sums, point measures, Laplace values.

These are the reference implementations, written directly off the defining
sums with exact (fsum) accumulation.  The engine computes the same
quantities inline while simulating; tests hold the two routes against each
other, so resist the temptation to make one call the other.

Weight convention used throughout: a particle at position X in a snapshot
at time t carries weight exp(lam*(X - vel*t)) where lam is the critical
tilt and vel = lam - rho_eff is the front speed in the snapshot's frame
(rho_eff = rho in the drifted frame, 0 otherwise).  With the default
beta=1, binary offspring, standard frame this is exp(sqrt(2)*X - 2*t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, StateError
from .model import Frame

ALL = "all"
SURVIVORS = "barrier-survivors"

U_NEGATIVE_TOL = 1e-9


def _restrict_mask(snapshot, restrict: str) -> np.ndarray:
    if restrict == ALL:
        return np.ones(len(snapshot), dtype=bool)
    if restrict == SURVIVORS:
        return snapshot.untouched_mask
    raise ParameterError(
        f"restrict must be {ALL!r} or {SURVIVORS!r}, got {restrict!r}")


def _velocity(snapshot) -> float:
    rho_eff = (snapshot.params.rho
               if snapshot.frame is Frame.DRIFTED_ABSORBED_AT_ZERO else 0.0)
    return snapshot.params.lam - rho_eff


def _weights(snapshot, mask: np.ndarray) -> np.ndarray:
    lam = snapshot.params.lam
    if lam == 0.0:
        return np.ones(int(mask.sum()))
    t = snapshot.time
    x = snapshot.positions[mask]
    return np.exp(lam * (x - _velocity(snapshot) * t))


def additive_W(snapshot, restrict: str = ALL) -> float:
    """Critically tilted population sum; the additive martingale."""
    mask = _restrict_mask(snapshot, restrict)
    return math.fsum(_weights(snapshot, mask))


def derivative_Z(snapshot, restrict: str = ALL) -> float:
    """Linear-in-position tilted sum; the derivative martingale.  Signed."""
    mask = _restrict_mask(snapshot, restrict)
    t = snapshot.time
    x = snapshot.positions[mask]
    w = _weights(snapshot, mask)
    return math.fsum((_velocity(snapshot) * t - x) * w)


def truncated_V(snapshot, z: float, restrict: str = ALL) -> float:
    """Nonnegative truncated martingale over lineages that never reached the
    upper line z + vel*s.  Needs a snapshot from a run that tracked that
    line."""
    if snapshot.upper_line_z is None:
        raise StateError("snapshot has no upper-line tracking; re-run with upper_line_z")
    if float(z) != snapshot.upper_line_z:
        raise StateError(
            f"snapshot tracked the line z={snapshot.upper_line_z!r}, not z={z!r}")
    mask = _restrict_mask(snapshot, restrict) & snapshot.never_upper_mask
    t = snapshot.time
    x = snapshot.positions[mask]
    w = _weights(snapshot, mask)
    return math.fsum((z + _velocity(snapshot) * t - x) * w)


def gap_U(v_value: float, vtilde_value: float) -> float:
    """U = V - Vtilde, the mass lost to barrier-touching lineages; >= 0."""
    u = float(v_value) - float(vtilde_value)
    if u < -U_NEGATIVE_TOL * max(1.0, abs(float(v_value))):
        raise NumericError(
            f"U = V - Vtilde = {u!r} is negative beyond tolerance; "
            "V and Vtilde disagree about the particle set")
    return max(u, 0.0)


def truncated_Z_s(snapshot, s: float) -> float:
    """Derivative sum over descendants of lineages untouched up to time s.

    For snapshot times t <= s every touch time is either <= t or absent, so
    the value coincides with the restricted sum, matching the defining
    convention for early t.
    """
    if not (math.isfinite(s) and s >= 0.0):
        raise ParameterError(f"cut time must be finite and >= 0, got {s!r}")
    taus = snapshot.barrier_touch_times
    mask = taus > s
    t = snapshot.time
    x = snapshot.positions[mask]
    w = _weights(snapshot, mask)
    return math.fsum((_velocity(snapshot) * t - x) * w)


@dataclass(frozen=True, eq=False)
class PointMeasure:
    """Finite point measure on the line, multiset of atom positions."""

    atoms: np.ndarray

    def __init__(self, atoms):
        arr = np.asarray(atoms, dtype=np.float64).reshape(-1)
        if arr.size and not np.all(np.isfinite(arr)):
            raise ParameterError("point-measure atoms must be finite")
        object.__setattr__(self, "atoms", arr)

    def __len__(self) -> int:
        return int(self.atoms.size)

    @property
    def max(self) -> float | None:
        return float(self.atoms.max()) if self.atoms.size else None

    def integrate(self, phi) -> float:
        """<measure, phi> = sum of phi over atoms."""
        if not self.atoms.size:
            return 0.0
        return math.fsum(np.asarray(phi(self.atoms), dtype=np.float64))

    def shifted(self, delta: float) -> "PointMeasure":
        return PointMeasure(self.atoms + delta)


def extremal_measure(snapshot, t: float | None = None,
                     s: float | None = None) -> PointMeasure:
    """Point measure of recentered positions X - m_t.

    Default: atoms from barrier survivors (the extremal process seen from
    the front).  With `s`, atoms come from lineages untouched up to s, the
    time-truncated variant; that set contains the survivor set.
    """
    time = snapshot.time if t is None else float(t)
    if time != snapshot.time:
        raise ParameterError(
            f"snapshot is at t={snapshot.time!r}, not t={time!r}")
    if not time > 0.0:
        raise ParameterError("centering is undefined at t <= 0")
    lam = snapshot.params.lam
    if lam == 0.0:
        raise ParameterError("centering is undefined for the single-particle mode")
    if s is None:
        mask = snapshot.untouched_mask
    else:
        if not (math.isfinite(s) and s >= 0.0):
            raise ParameterError(f"cut time must be finite and >= 0, got {s!r}")
        mask = snapshot.barrier_touch_times > s
    m_t = _velocity(snapshot) * time - 1.5 / lam * math.log(time)
    return PointMeasure(snapshot.positions[mask] - m_t)


def laplace(measure: PointMeasure, phi) -> float:
    """exp(-<measure, phi>); equals 1 on the empty measure, in (0, 1] for
    nonnegative phi."""
    return math.exp(-measure.integrate(phi))


def max_position(snapshot, restrict: str = ALL) -> float | None:
    """Rightmost particle of the selected set, None when the set is empty."""
    mask = _restrict_mask(snapshot, restrict)
    if not mask.any():
        return None
    return float(snapshot.positions[mask].max())


@dataclass(frozen=True, eq=False)
class FunctionalTrajectory:
    """One named functional sampled on a checkpoint grid."""

    name: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.shape != values.shape or times.ndim != 1:
            raise ParameterError("times and values must be 1d of equal length")
        if times.size and np.any(np.diff(times) <= 0.0):
            raise ParameterError("trajectory times must be strictly increasing")
        if self.name.startswith("U") and np.any(values < -U_NEGATIVE_TOL):
            raise NumericError("U trajectory went negative beyond tolerance")

    def __len__(self) -> int:
        return int(self.times.size)


def record_trajectory(record, name: str) -> FunctionalTrajectory:
    """Pull one named column out of a ReplicaRecord's trajectory matrix.

    The derived column "U" (= V_all - V_tilde) is synthesized on the fly.
    """
    from .engine import trajectory_columns

    columns = trajectory_columns(record.s_cuts, record.test_function_names)
    if name == "U":
        v = record.trajectory[:, columns.index("V_all")]
        vt = record.trajectory[:, columns.index("V_tilde")]
        vals = np.maximum(v - vt, 0.0)
        if np.any((v - vt) < -U_NEGATIVE_TOL * np.maximum(1.0, np.abs(v))):
            raise NumericError("V - Vtilde negative beyond tolerance in record")
        return FunctionalTrajectory("U", record.checkpoints, vals)
    try:
        idx = columns.index(name)
    except ValueError:
        raise ParameterError(
            f"no column {name!r}; available: {', '.join(columns)} and 'U'")
    return FunctionalTrajectory(name, record.checkpoints, record.trajectory[:, idx])
