"""Batch run container: functional values per (replica, checkpoint) plus
replica-level outcomes, with order-independent merging.

The arrays here are what the estimators consume and what the JSON Lines
stream serializes; one Dataset corresponds to one resolved configuration
and one master seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .engine import trajectory_columns
from .errors import ParameterError, StateError
from .model import ModelParams

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class Dataset:
    """Functional trajectories for a batch of replicas.

    values has shape (n_replicas, n_checkpoints, n_columns) with columns
    named by `column_names`.  Replica-level fields: extinction_times (+inf
    while still alive at the horizon), peak_alive, first_upper_touch (+inf
    if the upper line was never touched or not tracked), stopped_times
    (NaN unless the early-stop rule froze the replica).  Rows are kept
    sorted by replica index so that a merge of the same parts in any order
    is byte-identical.
    """

    params: ModelParams
    master_seed: int
    barrier_mode: str
    upper_line_z: float | None
    segment_dt: float
    checkpoints: np.ndarray
    s_cuts: tuple
    phi_names: tuple
    replica_indices: np.ndarray
    values: np.ndarray
    extinction_times: np.ndarray
    peak_alive: np.ndarray
    first_upper_touch: np.ndarray
    stopped_times: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.replica_indices.shape[0]
        n_cp = self.checkpoints.shape[0]
        if self.values.shape[0] != n or self.values.shape[1] != n_cp:
            raise ParameterError(
                f"values shape {self.values.shape} does not match "
                f"{n} replicas x {n_cp} checkpoints")
        if self.values.shape[2] != len(self.column_names):
            raise ParameterError(
                f"{self.values.shape[2]} value columns, expected "
                f"{len(self.column_names)}")
        for name in ("extinction_times", "peak_alive", "first_upper_touch",
                     "stopped_times"):
            if getattr(self, name).shape[0] != n:
                raise ParameterError(f"{name} length mismatch")
        if n > 1 and not np.all(np.diff(self.replica_indices) > 0):
            raise ParameterError("replica indices must be strictly "
                                 "increasing (sorted, no duplicates)")

    @property
    def n_replicas(self) -> int:
        return int(self.replica_indices.shape[0])

    @property
    def n_checkpoints(self) -> int:
        return int(self.checkpoints.shape[0])

    @property
    def column_names(self) -> list:
        return trajectory_columns(self.s_cuts, self.phi_names)

    def column_index(self, name: str) -> int:
        names = self.column_names
        try:
            return names.index(name)
        except ValueError:
            raise ParameterError(
                f"no column {name!r}; available: {names}") from None

    def column(self, name: str) -> np.ndarray:
        """(n_replicas, n_checkpoints) slice for one named functional."""
        return self.values[:, :, self.column_index(name)]

    def checkpoint_index(self, t: float) -> int:
        idx = np.flatnonzero(np.isclose(self.checkpoints, t, rtol=0.0,
                                        atol=1e-12))
        if idx.size == 0:
            raise ParameterError(
                f"no checkpoint at t={t!r}; grid: {self.checkpoints.tolist()}")
        return int(idx[0])

    def at(self, t: float, name: str) -> np.ndarray:
        """(n_replicas,) values of one functional at one checkpoint."""
        return self.values[:, self.checkpoint_index(t),
                           self.column_index(name)]

    def alive_mask(self, t: float) -> np.ndarray:
        """Replicas with at least one living particle at checkpoint t.

        Early-stopped replicas count as alive (the stop rule froze them in
        a thriving state); their NaN functional rows still carry the count.
        """
        return self.at(t, "alive") > 0

    def signature(self) -> dict:
        p = self.params
        return {
            "beta": p.beta,
            "rho": p.rho,
            "x0": p.x0,
            "frame": p.frame.value,
            "offspring": {int(k): float(v) for k, v in zip(p.law.ks, p.law.ps)},
            "master_seed": self.master_seed,
            "barrier_mode": self.barrier_mode,
            "upper_line_z": self.upper_line_z,
            "segment_dt": self.segment_dt,
            "checkpoints": self.checkpoints.tolist(),
            "s_cuts": list(self.s_cuts),
            "phi_names": list(self.phi_names),
        }

    def merge(self, other: "Dataset") -> "Dataset":
        """Combine two runs of the same configuration over disjoint replica
        ranges; a.merge(b) and b.merge(a) produce identical arrays."""
        if self.signature() != other.signature():
            raise StateError("datasets come from different configurations "
                             "and cannot be merged")
        joint = np.concatenate([self.replica_indices, other.replica_indices])
        if np.unique(joint).size != joint.size:
            raise StateError("replica ranges overlap; merging would "
                             "double-count")
        order = np.argsort(joint, kind="stable")
        return replace(
            self,
            replica_indices=joint[order],
            values=np.concatenate([self.values, other.values])[order],
            extinction_times=np.concatenate(
                [self.extinction_times, other.extinction_times])[order],
            peak_alive=np.concatenate(
                [self.peak_alive, other.peak_alive])[order],
            first_upper_touch=np.concatenate(
                [self.first_upper_touch, other.first_upper_touch])[order],
            stopped_times=np.concatenate(
                [self.stopped_times, other.stopped_times])[order],
        )

    def subset(self, mask: np.ndarray) -> "Dataset":
        """Restrict to the replicas selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[0] != self.n_replicas:
            raise ParameterError("mask length mismatch")
        return replace(
            self,
            replica_indices=self.replica_indices[mask],
            values=self.values[mask],
            extinction_times=self.extinction_times[mask],
            peak_alive=self.peak_alive[mask],
            first_upper_touch=self.first_upper_touch[mask],
            stopped_times=self.stopped_times[mask],
        )
