"""Event-driven particle engine.

A replica is advanced on the merged grid of branch events, position-sampling
boundaries, and recording checkpoints.  Branch lifetimes are exponential and
sampled exactly; between consecutive position samples of one particle the
barrier (and the optional upper truncation line) is resolved by
Brownian-bridge thinning, so single-line absorption is exact at any sampling
spacing.  Only the joint event "one segment crosses both lines" is
approximated by independent thinning; the default spacing keeps that
probability negligible.

Two barrier modes: `kill` removes crossers at the end of the crossing
segment; `tag` records the lineage's first touch time and lets the particle
run on.  The upper line is always tag-only.  Crossing is resolved before
branching inside a segment; the two times coincide with probability zero,
so the tie-break has no distributional effect.

All randomness flows through per-particle counter-keyed streams, making the
output invariant to particle iteration order, dead-row compaction, and the
batching strategy sitting above this module.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import ParameterError, ResourceLimitError, StateError
from .model import Frame, ModelParams, OffspringLaw, TestFunction
from .rng import ParticleStream

KILL = "kill"
TAG = "tag"

DEFAULT_SEGMENT_DT = 0.1
DEFAULT_POPULATION_CAP = 10_000_000


def bridge_survival_prob(d1: float, d2: float, dt: float) -> float:
    """Probability a Brownian bridge with endpoint clearances d1, d2 over a
    segment of length dt stays strictly above the line.

    Exact for a single straight line; this is what makes absorption
    grid-free.  Clearances at or below zero mean the endpoint itself sits on
    the wrong side, so the stay probability is 0.
    """
    if not (math.isfinite(dt) and dt > 0.0):
        raise ParameterError(f"segment length must be positive, got {dt!r}")
    return float(_kernels.bridge_stay_prob(float(d1), float(d2), float(dt)))


def bridge_touch_time_cdf(d1: float, d2: float, dt: float, s: float) -> float:
    """CDF at s of the first touch time of a bridge that does touch.

    The bridge runs from clearance d1 > 0 to clearance d2 over dt; for
    d2 <= 0 touching is certain, for d2 > 0 the law is conditioned on the
    touch event.  Used by the exact touch-time sampler and by tests.
    """
    if not (math.isfinite(dt) and dt > 0.0):
        raise ParameterError(f"segment length must be positive, got {dt!r}")
    if not d1 > 0.0:
        raise ParameterError("starting clearance must be > 0")
    return float(_kernels.bridge_hit_cdf(float(d1), float(d2), float(dt), float(s)))


@dataclass
class Particle:
    """One particle, either a live snapshot member or a genealogy row.

    `barrier_first_touch` is the lineage's first barrier touch time (None if
    it never touched up to the time this view represents); the flag is
    inherited by children, so it tracks the lineage root's history, not just
    this particle's own path.
    """

    id: int
    parent_id: int | None
    birth_time: float
    birth_position: float
    current_position: float
    barrier_first_touch: float | None
    upper_line_touched: bool
    alive: bool
    death_time: float | None = None


def branch(parent: Particle, law: OffspringLaw, rng: ParticleStream,
           time: float | None = None, id_start: int = 0) -> list[Particle]:
    """Replace a live particle by L iid children at its position.

    Children inherit the lineage flags; the parent is marked dead in place.
    This is the reference implementation of the branching step; the compiled
    engine inlines the same logic.  `id_start` is the first child id, the
    caller owns uniqueness.
    """
    if not parent.alive:
        raise StateError(f"particle {parent.id} is dead and cannot branch")
    cdf = law.cdf_table()
    u = rng.uniform()
    j = int(np.searchsorted(cdf, u, side="right"))
    n_children = int(law.ks[min(j, len(cdf) - 1)])
    when = parent.birth_time if time is None else float(time)
    parent.alive = False
    parent.death_time = when
    return [
        Particle(
            id=id_start + c,
            parent_id=parent.id,
            birth_time=when,
            birth_position=parent.current_position,
            current_position=parent.current_position,
            barrier_first_touch=parent.barrier_first_touch,
            upper_line_touched=parent.upper_line_touched,
            alive=True,
        )
        for c in range(n_children)
    ]


@dataclass(frozen=True, eq=False)
class PopulationSnapshot:
    """Alive population at one checkpoint, flags as of that instant."""

    params: ModelParams
    frame: Frame
    time: float
    particles: tuple[Particle, ...]
    n_created: int
    upper_line_z: float | None = None

    @property
    def n_alive(self) -> int:
        return len(self.particles)

    def __len__(self) -> int:
        return len(self.particles)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.current_position for p in self.particles])

    @property
    def barrier_touch_times(self) -> np.ndarray:
        """First touch times, +inf for never-touched lineages."""
        return np.array([
            np.inf if p.barrier_first_touch is None else p.barrier_first_touch
            for p in self.particles
        ])

    @property
    def untouched_mask(self) -> np.ndarray:
        return np.array([p.barrier_first_touch is None for p in self.particles])

    @property
    def never_upper_mask(self) -> np.ndarray:
        return np.array([not p.upper_line_touched for p in self.particles])

    def shifted(self, delta: float, to: Frame) -> "PopulationSnapshot":
        """Same population with positions translated into the other frame.

        delta is the shift at the snapshot time; each particle's birth
        position shifts proportionally to its birth time since the frames
        differ by a linear flow.
        """
        rate = 0.0 if self.time == 0.0 else delta / self.time
        moved = tuple(
            replace(
                p,
                current_position=p.current_position + delta,
                birth_position=p.birth_position + rate * p.birth_time,
            )
            for p in self.particles
        )
        return PopulationSnapshot(
            params=self.params,
            frame=to,
            time=self.time,
            particles=moved,
            n_created=self.n_created,
            upper_line_z=self.upper_line_z,
        )


@dataclass(frozen=True, eq=False)
class ReplicaRecord:
    """Everything one simulated replica produced.

    `trajectory` is the raw per-checkpoint functional matrix in the column
    order reported by `trajectory_columns`; `particles` is the full
    genealogy in birth order with final states.  `wall_time_s` is diagnostic
    only and excluded from serialization and comparisons.
    """

    params: ModelParams
    master_seed: int
    replica_index: int
    barrier_mode: str
    upper_line_z: float | None
    segment_dt: float
    checkpoints: np.ndarray
    s_cuts: tuple[float, ...]
    test_function_names: tuple[str, ...]
    trajectory: np.ndarray
    snapshots: tuple[PopulationSnapshot, ...]
    particles: tuple[Particle, ...]
    barrier_crossings: tuple[tuple[int, float], ...]
    extinction_time: float | None
    peak_alive: int
    first_upper_touch_time: float | None
    stopped_time: float | None
    wall_time_s: float

    @property
    def n_created(self) -> int:
        return len(self.particles)


def trajectory_columns(s_cuts=(), test_function_names=()) -> tuple[str, ...]:
    """Stable column order of the per-checkpoint functional matrix."""
    names = ["alive", "n_tilde", "max_all", "max_tilde",
             "W_all", "W_tilde", "Z_all", "Z_tilde", "V_all", "V_tilde"]
    names += [f"Z_cut_{s:g}" for s in s_cuts]
    names += [f"late_max_{s:g}" for s in s_cuts]
    names += [f"phi_{n}" for n in test_function_names]
    return tuple(names)


def _as_checkpoints(checkpoints) -> np.ndarray:
    grid = np.asarray(checkpoints, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ParameterError("checkpoint grid must be a non-empty 1d sequence")
    if not np.all(np.isfinite(grid)):
        raise ParameterError("checkpoints must be finite")
    if grid[0] <= 0.0 or np.any(np.diff(grid) <= 0.0):
        raise ParameterError(
            "checkpoints must be strictly increasing and start after time 0")
    return grid


@dataclass(frozen=True, eq=False)
class _KernelPlan:
    """Validated, kernel-ready description of one run configuration."""

    params: ModelParams
    barrier_mode: str
    checkpoints: np.ndarray
    segment_dt: float
    drift: float
    low_on: bool
    low_b: float
    low_s: float
    kill: bool
    up_on: bool
    up_z: float
    up_s: float
    exact_tau: bool
    vel: float
    s_cuts: np.ndarray
    phi_xs: np.ndarray
    phi_ys: np.ndarray
    phi_off: np.ndarray
    phi_names: tuple[str, ...]
    cap: int
    stop_count: int
    stop_clear: float

    @property
    def n_columns(self) -> int:
        return _kernels.n_columns(self.s_cuts.size, len(self.phi_names))

    @property
    def column_names(self) -> tuple[str, ...]:
        return trajectory_columns(tuple(self.s_cuts), self.phi_names)

    def barrier_line(self, t: float) -> float:
        return self.low_b + self.low_s * t


def make_plan(params: ModelParams, checkpoints, *, barrier_mode: str = TAG,
              upper_line_z: float | None = None, segment_dt: float = DEFAULT_SEGMENT_DT,
              exact_touch_times: bool = True, s_cuts=(), test_functions=(),
              population_cap: int = DEFAULT_POPULATION_CAP,
              survival_stop_count: int = 0,
              survival_stop_clearance: float = 1.0) -> _KernelPlan:
    """Validate a run configuration and lower it to kernel arguments."""
    grid = _as_checkpoints(checkpoints)
    if barrier_mode not in (KILL, TAG):
        raise ParameterError(f"barrier_mode must be 'kill' or 'tag', got {barrier_mode!r}")
    if not (segment_dt > 0.0):
        raise ParameterError(f"segment_dt must be positive, got {segment_dt!r}")

    frame = params.frame
    if frame is Frame.DRIFTED_ABSORBED_AT_ZERO:
        drift, low_b, low_s = -params.rho, 0.0, 0.0
    elif frame is Frame.STANDARD_MOVING_BARRIER:
        drift, low_b, low_s = 0.0, 0.0, params.rho
    else:
        drift, low_b, low_s = 0.0, 0.0, 0.0
    low_on = frame.has_barrier
    vel = params.lam - params.rho_effective

    up_on = upper_line_z is not None
    up_z = float(upper_line_z) if up_on else 0.0
    if up_on and not up_z > params.x0:
        raise ParameterError(
            f"upper line intercept z={up_z!r} must exceed the start position "
            f"x0={params.x0!r}")

    s_arr = np.asarray(s_cuts, dtype=np.float64)
    if s_arr.ndim == 0:
        s_arr = s_arr.reshape(1)
    if s_arr.size and (not np.all(np.isfinite(s_arr)) or np.any(s_arr < 0.0)):
        raise ParameterError("s cut times must be finite and >= 0")
    if s_arr.size and not low_on:
        raise ParameterError("s cut functionals need a barrier frame")

    funcs = tuple(test_functions)
    for f in funcs:
        if not isinstance(f, TestFunction):
            raise ParameterError(f"not a test function: {f!r}")
    if funcs:
        phi_xs = np.concatenate([f.xs for f in funcs])
        phi_ys = np.concatenate([f.ys for f in funcs])
        phi_off = np.cumsum([0] + [f.xs.size for f in funcs]).astype(np.int64)
    else:
        phi_xs = np.empty(0)
        phi_ys = np.empty(0)
        phi_off = np.zeros(1, dtype=np.int64)
    if funcs and params.single_particle():
        raise ParameterError("test-function columns need branching (centering undefined)")

    cap = int(population_cap)
    if cap < 1:
        raise ParameterError("population cap must be >= 1")
    stop_count = int(survival_stop_count)
    if stop_count < 0:
        raise ParameterError("survival stop count must be >= 0")
    if stop_count > 0 and not low_on:
        raise ParameterError("early survival stopping needs a barrier frame")
    stop_clear = float(survival_stop_clearance)
    if stop_count > 0 and not stop_clear > 0.0:
        raise ParameterError("survival stop clearance must be > 0")

    return _KernelPlan(
        params=params, barrier_mode=barrier_mode, checkpoints=grid,
        segment_dt=float(segment_dt), drift=drift, low_on=low_on,
        low_b=low_b, low_s=low_s, kill=(barrier_mode == KILL and low_on),
        up_on=up_on, up_z=up_z, up_s=vel,
        exact_tau=bool(exact_touch_times), vel=vel, s_cuts=s_arr,
        phi_xs=phi_xs, phi_ys=phi_ys, phi_off=phi_off,
        phi_names=tuple(f.name for f in funcs), cap=cap,
        stop_count=stop_count, stop_clear=stop_clear)


def run_plan(plan: _KernelPlan, master_seed: int, replica_index: int,
             collect: bool, out_traj: np.ndarray | None = None,
             work: tuple | None = None):
    """Run one replica of a validated plan through the compiled kernel.

    `work` accepts the particle-table buffers from a previous result
    (entries 6..9) so tight loops can reuse grown tables instead of
    re-growing fresh ones every call.
    """
    p = plan.params
    if out_traj is None:
        out_traj = np.empty((plan.checkpoints.size, plan.n_columns))
    if work is None:
        cap0 = 1024
        work = (np.empty((cap0, _kernels.NF)), np.empty((cap0, _kernels.NI), dtype=np.int64),
                np.zeros(cap0, dtype=np.uint8), np.empty((cap0, 4), dtype=np.uint64))
    res = _kernels.run_replica(
        np.uint64(master_seed), np.int64(replica_index),
        p.x0, p.beta, p.law.cdf_table(), p.law.ks,
        plan.drift, plan.low_on, plan.low_b, plan.low_s, plan.kill,
        plan.up_on, plan.up_z, plan.up_s, plan.exact_tau,
        plan.checkpoints, plan.segment_dt,
        p.lam, plan.vel,
        plan.s_cuts, plan.phi_xs, plan.phi_ys, plan.phi_off,
        plan.cap, plan.stop_count, plan.stop_clear,
        collect, out_traj, *work)
    return res, out_traj


def _raise_cap(plan: _KernelPlan, replica_index: int, cap_time: float):
    grid = plan.checkpoints
    nxt = grid[int(np.searchsorted(grid, cap_time))] if cap_time < grid[-1] else grid[-1]
    raise ResourceLimitError(
        f"population cap {plan.cap} exceeded at t={cap_time:g} while "
        f"advancing replica {replica_index} toward checkpoint t={nxt:g}",
        replica_index=replica_index, cap=plan.cap, time=cap_time,
        checkpoint=float(nxt))


def simulate_replica(params: ModelParams, checkpoints, *, master_seed: int,
                     replica_index: int = 0, barrier_mode: str = TAG,
                     upper_line_z: float | None = None,
                     segment_dt: float = DEFAULT_SEGMENT_DT,
                     exact_touch_times: bool = True,
                     s_cuts=(), test_functions=(),
                     population_cap: int = DEFAULT_POPULATION_CAP) -> ReplicaRecord:
    """Simulate one replica and keep full snapshots and genealogy.

    Deterministic: identical arguments give an identical record (up to the
    diagnostic wall_time_s field).  For large sweeps use the batch path in
    `estimators`, which skips snapshot assembly.
    """
    plan = make_plan(params, checkpoints, barrier_mode=barrier_mode,
                     upper_line_z=upper_line_z, segment_dt=segment_dt,
                     exact_touch_times=exact_touch_times, s_cuts=s_cuts,
                     test_functions=test_functions, population_cap=population_cap)
    t0 = _time.perf_counter()
    res, traj = run_plan(plan, master_seed, replica_index, collect=True)
    (status, extinct_t, peak, up_first, stopped_t, cap_time,
     F, ints, alive, _rng_state, n_rows, snap_off, snap_idx, snap_pos,
     touch_idx, touch_tau, n_touch) = res
    if status == 1:
        _raise_cap(plan, replica_index, cap_time)

    K = _kernels
    particles = tuple(
        Particle(
            id=int(ints[r, K.I_BIRTH]),
            parent_id=None if ints[r, K.I_PARENT] < 0 else int(ints[r, K.I_PARENT]),
            birth_time=float(F[r, K.F_BIRTH_T]),
            birth_position=float(F[r, K.F_BIRTH_X]),
            current_position=float(F[r, K.F_POS]),
            barrier_first_touch=(None if F[r, K.F_TAU] == np.inf
                                 else float(F[r, K.F_TAU])),
            upper_line_touched=bool(F[r, K.F_UP_TAU] < np.inf),
            alive=bool(alive[r]),
            death_time=(None if np.isnan(F[r, K.F_DEATH_T])
                        else float(F[r, K.F_DEATH_T])),
        )
        for r in range(n_rows))

    # without compaction rows sit in birth order, so ids index the table
    birth_times = F[:n_rows, K.F_BIRTH_T]
    snapshots = []
    for ci, t in enumerate(plan.checkpoints):
        lo, hi = int(snap_off[ci]), int(snap_off[ci + 1])
        members = []
        for k in range(lo, hi):
            r = int(snap_idx[k])
            tau = F[r, K.F_TAU]
            up = F[r, K.F_UP_TAU]
            members.append(Particle(
                id=int(ints[r, K.I_BIRTH]),
                parent_id=None if ints[r, K.I_PARENT] < 0 else int(ints[r, K.I_PARENT]),
                birth_time=float(F[r, K.F_BIRTH_T]),
                birth_position=float(F[r, K.F_BIRTH_X]),
                current_position=float(snap_pos[k]),
                barrier_first_touch=None if tau > t else float(tau),
                upper_line_touched=bool(up <= t),
                alive=True,
            ))
        snapshots.append(PopulationSnapshot(
            params=params, frame=params.frame, time=float(t),
            particles=tuple(members),
            n_created=int(np.count_nonzero(birth_times <= t)),
            upper_line_z=upper_line_z))

    crossings = sorted(
        ((int(touch_idx[k]), float(touch_tau[k])) for k in range(n_touch)),
        key=lambda item: item[1])

    return ReplicaRecord(
        params=params, master_seed=int(master_seed),
        replica_index=int(replica_index), barrier_mode=barrier_mode,
        upper_line_z=upper_line_z, segment_dt=float(segment_dt),
        checkpoints=plan.checkpoints, s_cuts=tuple(plan.s_cuts),
        test_function_names=plan.phi_names, trajectory=traj,
        snapshots=tuple(snapshots), particles=particles,
        barrier_crossings=tuple(crossings),
        extinction_time=None if math.isnan(extinct_t) else float(extinct_t),
        peak_alive=int(peak),
        first_upper_touch_time=None if up_first == np.inf else float(up_first),
        stopped_time=None if math.isnan(stopped_t) else float(stopped_t),
        wall_time_s=_time.perf_counter() - t0)


def stopping_line_crossers(record: ReplicaRecord) -> list[tuple[int, float, float]]:
    """Lineage-first barrier touches as (particle id, touch time, barrier
    position at that time), sorted by touch time.

    Only tag-mode records keep crossers around; kill-mode discarded them.
    """
    if record.barrier_mode == KILL and record.params.frame.has_barrier:
        raise StateError("kill-mode record: crossers were discarded, re-run in tag mode")
    if record.params.frame is Frame.STANDARD_MOVING_BARRIER:
        line = lambda t: record.params.rho * t
    else:
        line = lambda t: 0.0
    return [(pid, tau, line(tau)) for pid, tau in record.barrier_crossings]
