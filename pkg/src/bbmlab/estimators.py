"""Monte Carlo estimators over batch datasets: survival, front growth,
the Gumbel-mixture law of the centered maximum, Laplace functionals of the
extremal measure, late-touch probabilities, plus samplers for the
decoration law and the limiting decorated Poisson point process.

Every reported number is an Estimate carrying (value, SE, n).  Replicas
are seeded by (master_seed, replica_index) alone, so results do not
depend on how the work is chunked across worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels, engine
from .dataset import Dataset
from .engine import DEFAULT_POPULATION_CAP, DEFAULT_SEGMENT_DT, TAG
from .errors import ParameterError, ResourceLimitError, StateError
from .model import (Frame, ModelParams, OffspringLaw, TestFunction,
                    lambda_star)


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo number: point value, standard error, sample size."""

    value: float
    se: float
    n: int

    def interval(self, k: float = 2.0) -> tuple:
        return (self.value - k * self.se, self.value + k * self.se)

    def __str__(self):
        return f"{self.value:.6g} +- {self.se:.2g} (n={self.n})"


def _mean_estimate(vals) -> Estimate:
    vals = np.asarray(vals, dtype=np.float64)
    n = int(vals.size)
    if n == 0:
        raise StateError("no finite samples to average")
    m = math.fsum(vals) / n
    if n > 1:
        var = math.fsum((v - m) ** 2 for v in vals) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = math.nan
    return Estimate(value=m, se=se, n=n)


def _fraction_estimate(hits: int, n: int) -> Estimate:
    if n == 0:
        raise StateError("no replicas")
    p = hits / n
    return Estimate(value=p, se=math.sqrt(p * (1.0 - p) / n), n=n)


# ---------------------------------------------------------------------------
# batch driver

def _batch_arrays(plan, n):
    n_cp = plan.checkpoints.size
    ncol = _kernels.n_columns(plan.s_cuts.size, len(plan.phi_names))
    return (np.empty((n, n_cp, ncol)), np.empty(n), np.empty(n, dtype=np.int64),
            np.empty(n), np.empty(n), np.empty(n),
            np.empty(n, dtype=np.int64))


def _run_chunk(payload):
    params, checkpoints, options, master_seed, start, count = payload
    plan = engine.make_plan(params, checkpoints, **options)
    values, extinct, peak, up_first, stopped, cap_times, statuses = \
        _batch_arrays(plan, count)
    p = plan.params
    fail = _kernels.run_batch(
        np.uint64(master_seed), count,
        p.x0, p.beta, p.law.cdf_table(), p.law.ks,
        plan.drift, plan.low_on, plan.low_b, plan.low_s, plan.kill,
        plan.up_on, plan.up_z, plan.up_s, plan.exact_tau,
        plan.checkpoints, plan.segment_dt,
        p.lam, plan.vel,
        plan.s_cuts, plan.phi_xs, plan.phi_ys, plan.phi_off,
        plan.cap, plan.stop_count, plan.stop_clear,
        values, extinct, peak, up_first, stopped, cap_times,
        statuses, start)
    if fail >= 0:
        engine._raise_cap(plan, start + fail, float(cap_times[fail]))
    return values, extinct, peak, up_first, stopped


def run_experiment(params: ModelParams, checkpoints, n_replicas: int, *,
                   master_seed: int, replica_start: int = 0,
                   barrier_mode: str = TAG,
                   upper_line_z: float | None = None,
                   segment_dt: float = DEFAULT_SEGMENT_DT,
                   exact_touch_times: bool = True,
                   s_cuts=(), test_functions=(),
                   population_cap: int = DEFAULT_POPULATION_CAP,
                   survival_stop_count: int = 0,
                   survival_stop_clearance: float = 1.0,
                   threads: int = 1, config: dict | None = None) -> Dataset:
    """Simulate independent replicas and collect their functional
    trajectories into a Dataset.

    Replica k draws only from streams keyed by (master_seed,
    replica_start + k), so splitting the range across worker processes, or
    running it as several smaller experiments and merging, produces
    identical arrays.  A population-cap overflow raises
    ResourceLimitError naming the offending replica.
    """
    if n_replicas < 1:
        raise ParameterError("need at least one replica")
    if threads < 1:
        raise ParameterError("threads must be >= 1")
    options = dict(barrier_mode=barrier_mode, upper_line_z=upper_line_z,
                   segment_dt=segment_dt, exact_touch_times=exact_touch_times,
                   s_cuts=s_cuts, test_functions=test_functions,
                   population_cap=population_cap,
                   survival_stop_count=survival_stop_count,
                   survival_stop_clearance=survival_stop_clearance)
    plan = engine.make_plan(params, checkpoints, **options)

    if threads == 1 or n_replicas == 1:
        parts = [_run_chunk((params, checkpoints, options, master_seed,
                             replica_start, n_replicas))]
    else:
        bounds = np.linspace(0, n_replicas, min(threads, n_replicas) + 1,
                             dtype=int)
        payloads = [(params, checkpoints, options, master_seed,
                     replica_start + int(a), int(b - a))
                    for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, payloads))

    # the kernel marks still-alive replicas with NaN; the dataset uses +inf
    extinct = np.concatenate([p[1] for p in parts])
    extinct[np.isnan(extinct)] = np.inf
    return Dataset(
        params=params, master_seed=int(master_seed),
        barrier_mode=barrier_mode, upper_line_z=upper_line_z,
        segment_dt=float(segment_dt), checkpoints=plan.checkpoints.copy(),
        s_cuts=tuple(float(s) for s in plan.s_cuts),
        phi_names=tuple(plan.phi_names),
        replica_indices=replica_start + np.arange(n_replicas, dtype=np.int64),
        values=np.concatenate([p[0] for p in parts]),
        extinction_times=extinct,
        peak_alive=np.concatenate([p[2] for p in parts]),
        first_upper_touch=np.concatenate([p[3] for p in parts]),
        stopped_times=np.concatenate([p[4] for p in parts]),
        config=dict(config) if config else {})


# ---------------------------------------------------------------------------
# per-checkpoint summaries

def functional_mean(dataset: Dataset, t: float, column: str) -> Estimate:
    """Mean of one functional column at checkpoint t over the replicas
    where it is defined (finite)."""
    col = dataset.at(t, column)
    fin = np.isfinite(col)
    if not np.any(fin):
        raise StateError(f"no finite {column} entries at t={t:g}")
    return _mean_estimate(col[fin])


def survival_prob(dataset: Dataset, t: float) -> Estimate:
    """Fraction of replicas with a living particle at checkpoint t."""
    mask = dataset.alive_mask(t)
    return _fraction_estimate(int(mask.sum()), int(mask.size))


def growth_rate(dataset: Dataset, t0: float, t1: float) -> Estimate:
    """Mean per-replica least-squares slope of the untouched-population
    maximum over the checkpoints inside [t0, t1].

    Replicas with a missing value anywhere in the window (extinct, or
    frozen by early stopping) are excluded.  For a surviving population
    the front advances at speed lam - rho asymptotically.
    """
    grid = dataset.checkpoints
    sel = np.flatnonzero((grid >= t0 - 1e-12) & (grid <= t1 + 1e-12))
    if sel.size < 2:
        raise ParameterError(
            f"need at least two checkpoints in [{t0:g}, {t1:g}]; have "
            f"{grid.tolist()}")
    ts = grid[sel]
    ys = dataset.column("max_tilde")[:, sel]
    ok = np.all(np.isfinite(ys), axis=1)
    if not np.any(ok):
        raise StateError("no replica has the full window")
    ys = ys[ok]
    tc = ts - ts.mean()
    slopes = (ys - ys.mean(axis=1, keepdims=True)) @ tc / float(np.dot(tc, tc))
    return _mean_estimate(slopes)


def laplace_functional(dataset: Dataset, t: float, phi_name: str) -> Estimate:
    """Mean of exp(-<extremal measure, phi>) at checkpoint t.

    Extinct replicas carry the empty measure and contribute exp(0) = 1;
    rows frozen by early stopping are excluded.
    """
    col = dataset.at(t, f"phi_{phi_name}")
    fin = np.isfinite(col)
    if not np.any(fin):
        raise StateError(f"no finite phi_{phi_name} entries at t={t:g}")
    return _mean_estimate(np.exp(-col[fin]))


def late_touch_prob(dataset: Dataset, t: float, s: float,
                    window: float) -> Estimate:
    """Fraction of replicas holding a particle that sits above m_t - window
    at time t while its lineage first touched the barrier at a time in
    [s, t].

    Tag mode only: kill mode removes touched lineages, which would make
    the event silently empty.
    """
    if dataset.barrier_mode != TAG:
        raise StateError(
            "late-touch events need barrier_mode='tag'; kill mode removes "
            "the touched lineages")
    level = front_centering(dataset.params, t) - float(window)
    col = dataset.at(t, f"late_max_{s:g}")
    hits = int(np.sum(np.isfinite(col) & (col >= level)))
    return _fraction_estimate(hits, int(col.shape[0]))


def front_centering(params: ModelParams, t: float) -> float:
    """The centering m_t = (lam - rho_eff) t - (3 / (2 lam)) log t."""
    if not t > 0.0:
        raise ParameterError("centering needs t > 0")
    vel = params.lam - params.rho_effective
    return vel * t - 1.5 / params.lam * math.log(t)


def centered_maxima(dataset: Dataset, t: float) -> np.ndarray:
    """max_tilde(t) - m_t over the replicas where the maximum exists."""
    col = dataset.at(t, "max_tilde")
    fin = np.isfinite(col)
    return col[fin] - front_centering(dataset.params, t)


# ---------------------------------------------------------------------------
# Gumbel mixture fit for the centered maximum

@dataclass(frozen=True)
class GumbelMixtureFit:
    """Fit of P(max - m_t <= z) ~ mean_i exp(-c Z_i e^(-lam z)).

    c_hat minimizes the Kolmogorov-Smirnov distance between that mixture
    and the empirical law of the centered maxima; ks is the exact KS
    statistic at c_hat.  n_dropped counts pairs discarded for a missing
    maximum or a nonpositive mixing value.
    """

    c_hat: float
    ks: float
    lam: float
    n: int
    n_dropped: int

    def cdf(self, z, z_values) -> np.ndarray:
        """Mixture CDF at points z for the given mixing sample."""
        w = np.asarray(z_values, dtype=np.float64)
        u = np.exp(-self.lam * np.atleast_1d(np.asarray(z, dtype=np.float64)))
        return _mixture_cdf(self.c_hat, u, w)


def _mixture_cdf(c, u_pts, w):
    # chunk the (points x sample) product to bound memory
    out = np.empty(u_pts.size)
    block = max(1, int(4_000_000 // max(w.size, 1)))
    for a in range(0, u_pts.size, block):
        out[a:a + block] = np.exp(np.outer(u_pts[a:a + block], -c * w)).mean(axis=1)
    return out


def _ks_distance(c, u_sorted, w, idx, n):
    # u_sorted = exp(-lam * sorted maxima); empirical CDF jumps at idx/n
    f = _mixture_cdf(c, u_sorted[idx], w)
    below = idx / n
    above = (idx + 1.0) / n
    return float(np.max(np.maximum(np.abs(f - below), np.abs(f - above))))


def _bin_means(w, n_bins):
    if w.size <= n_bins:
        return w
    ws = np.sort(w)
    edges = np.linspace(0, ws.size, n_bins + 1).astype(int)
    return np.array([ws[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])


def gumbel_mixture_fit(maxima, z_values, lam: float, *,
                       eval_points: int = 2000) -> GumbelMixtureFit:
    """Fit the single constant c in the Gumbel mixture for the centered
    maximum, using the paired mixing values z_values (one per replica).

    The mixing sample is normalized by its geometric mean so the search
    for c is well scaled, and c_hat is reported back in original units.
    The optimization scans a compressed mixing sample; the returned ks is
    recomputed exactly at the optimum.
    """
    m = np.asarray(maxima, dtype=np.float64)
    z = np.asarray(z_values, dtype=np.float64)
    if m.shape != z.shape or m.ndim != 1:
        raise ParameterError("maxima and z_values must be matching 1d arrays")
    keep = np.isfinite(m) & np.isfinite(z) & (z > 0.0)
    n_dropped = int(m.size - keep.sum())
    if int(keep.sum()) < 10:
        raise StateError(
            f"only {int(keep.sum())} usable (max, Z) pairs; need at least 10")
    if not lam > 0.0:
        raise ParameterError("lam must be positive")
    m, z = m[keep], z[keep]
    gmean = math.exp(float(np.mean(np.log(z))))
    w = z / gmean
    order = np.argsort(m, kind="stable")
    u_sorted = np.exp(-lam * m[order])
    n = m.size

    w_small = _bin_means(w, 1024)
    idx_coarse = np.unique(np.linspace(0, n - 1, min(512, n)).astype(int))
    idx_fine = np.unique(np.linspace(0, n - 1, min(eval_points, n)).astype(int))
    # same scaling that makes the normalized c order one
    c0 = math.log(math.log(2.0)) + lam * float(np.median(m))
    grid = np.linspace(c0 - 8.0, c0 + 8.0, 41)
    coarse = [_ks_distance(math.exp(lc), u_sorted, w_small, idx_coarse, n)
              for lc in grid]
    lc_best = grid[int(np.argmin(coarse))]
    res = minimize_scalar(
        lambda lc: _ks_distance(math.exp(lc), u_sorted, w_small, idx_fine, n),
        bounds=(lc_best - 0.5, lc_best + 0.5), method="bounded",
        options={"xatol": 1e-4})
    c_norm = math.exp(res.x)
    ks = _ks_distance(c_norm, u_sorted, w, np.arange(n), n)
    return GumbelMixtureFit(c_hat=c_norm / gmean, ks=ks, lam=lam,
                            n=n, n_dropped=n_dropped)


def synthetic_mixture_maxima(z_values, c: float, lam: float,
                             master_seed: int) -> np.ndarray:
    """Draw one maximum per mixing value from P(M <= z | Z) =
    exp(-c Z e^(-lam z)), via M = log(c Z / E) / lam with E standard
    exponential."""
    z = np.asarray(z_values, dtype=np.float64)
    if np.any(z <= 0.0) or not np.all(np.isfinite(z)):
        raise ParameterError("mixing values must be positive and finite")
    if not (c > 0.0 and lam > 0.0):
        raise ParameterError("c and lam must be positive")
    rng = np.random.Generator(np.random.PCG64(master_seed))
    e = rng.exponential(1.0, z.size)
    return np.log(c * z / e) / lam


# ---------------------------------------------------------------------------
# decoration sampler

@dataclass(frozen=True, eq=False)
class DecorationSample:
    """Point clouds seen from the maximum, conditioned on a front-running
    maximum (M_t >= lam * t) in a free population started at 0.

    Each cloud is sorted descending and its first atom is exactly 0.
    """

    t: float
    lam: float
    atoms: tuple
    n_attempts: int

    @property
    def n(self) -> int:
        return len(self.atoms)

    @property
    def acceptance(self) -> float:
        return self.n / self.n_attempts if self.n_attempts else math.nan


def sample_decoration(t: float, *, master_seed: int, n_samples: int,
                      beta: float = 1.0, law: OffspringLaw | None = None,
                      max_attempts: int | None = None) -> DecorationSample:
    """Rejection-sample decoration clouds at time t.

    Runs free replicas from x0 = 0 and accepts those whose maximum
    reaches lam * t, an atypically high front.  Attempt k uses replica
    index k, so the accepted set is reproducible and independent of the
    batch size.  Raises ResourceLimitError if the attempt budget runs out
    before n_samples acceptances.
    """
    if n_samples < 1:
        raise ParameterError("need at least one sample")
    if not t > 0.0:
        raise ParameterError("decoration time must be positive")
    law = law if law is not None else OffspringLaw.binary()
    params = ModelParams.create(beta=beta, rho=0.0, x0=0.0,
                                frame=Frame.NO_BARRIER, law=law)
    lam = params.lam
    plan = engine.make_plan(params, [t])
    if max_attempts is None:
        max_attempts = 500 * n_samples
    out = []
    attempt = 0
    work = None
    while len(out) < n_samples and attempt < max_attempts:
        res, _ = engine.run_plan(plan, master_seed, attempt, collect=True,
                                 work=work)
        # reuse grown particle tables; fresh ones each attempt thrash the heap
        work = res[6:10]
        attempt += 1
        if res[0] == 1:
            engine._raise_cap(plan, attempt - 1, float(res[5]))
        snap_off, snap_pos = res[11], res[13]
        pos = np.array(snap_pos[snap_off[0]:snap_off[1]], dtype=np.float64)
        if pos.size == 0:
            continue
        mx = pos.max()
        if mx >= lam * t:
            cloud = np.sort(pos - mx)[::-1].copy()
            out.append(cloud)
    if len(out) < n_samples:
        raise ResourceLimitError(
            f"decoration sampler accepted {len(out)} of {n_samples} in "
            f"{max_attempts} attempts (acceptance ~ "
            f"{len(out) / max_attempts:.2e}); raise max_attempts or lower t",
            n_accepted=len(out), n_attempts=max_attempts)
    return DecorationSample(t=float(t), lam=lam, atoms=tuple(out),
                            n_attempts=attempt)


# ---------------------------------------------------------------------------
# decorated Poisson point process

@dataclass(frozen=True, eq=False)
class DPPPSample:
    """Realizations of the limiting point process for one mixing value.

    maxima holds the rightmost atom per realization (-inf when the window
    [z_min, inf) holds no point); atom clouds are kept only when a
    decoration sample is attached at draw time.
    """

    maxima: np.ndarray
    counts: np.ndarray
    z_min: float
    realizations: tuple | None = None


def sample_dppp(z_value: float, c: float, lam: float, *, z_min: float,
                n_realizations: int, master_seed: int,
                decorations: DecorationSample | None = None) -> DPPPSample:
    """Sample the decorated Poisson point process with intensity
    c * Z * lam * e^(-lam z) dz restricted to [z_min, inf).

    Decorating does not move the maximum (every decoration's top atom is
    0), so the maxima follow P(M <= z) = exp(-c Z e^(-lam z)) exactly for
    z >= z_min, with the missing mass collapsed to -inf.  Pass a
    decoration sample to also keep full atom clouds per realization.
    """
    if not z_value >= 0.0:
        raise ParameterError("the mixing value Z must be nonnegative")
    if not (c > 0.0 and lam > 0.0):
        raise ParameterError("c and lam must be positive")
    if n_realizations < 1:
        raise ParameterError("need at least one realization")
    rng = np.random.Generator(np.random.PCG64(master_seed))
    mass = c * z_value * math.exp(-lam * z_min)
    counts = rng.poisson(mass, n_realizations)
    total = int(counts.sum())
    pts = z_min + rng.exponential(1.0 / lam, total)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    maxima = np.full(n_realizations, -np.inf)
    nz = counts > 0
    if total:
        maxima[nz] = np.maximum.reduceat(pts, offsets[:-1][nz])
    realizations = None
    if decorations is not None:
        picks = rng.integers(0, decorations.n, total)
        realizations = tuple(
            np.concatenate([pts[j] + decorations.atoms[picks[j]]
                            for j in range(int(offsets[i]), int(offsets[i + 1]))])
            if counts[i] else np.empty(0)
            for i in range(n_realizations))
    return DPPPSample(maxima=maxima, counts=counts, z_min=float(z_min),
                      realizations=realizations)


def _cloud_intensity_integral(atoms, phi: TestFunction, lam: float) -> float:
    """integral over z of (1 - exp(-S(z))) lam e^(-lam z) dz for one atom
    cloud, with S(z) = sum_a phi(a + z).

    S is piecewise linear in z with breakpoints where some atom meets a
    knot of phi, and its slope jumps there by the knot's slope jump
    regardless of which atom produced the breakpoint.  A single sorted
    sweep therefore reconstructs S everywhere and every segment
    integrates in closed form, exact up to roundoff, in O(kn) space
    (evaluating S from scratch per breakpoint costs O(kn^2) and runs out
    of memory on deep-decoration clouds).
    """
    inner = np.diff(phi.ys) / np.diff(phi.xs)
    jumps = np.diff(inner, prepend=0.0, append=0.0)  # slope jump per knot
    z = np.subtract.outer(phi.xs, atoms).ravel()
    dw = np.repeat(jumps, atoms.size)
    order = np.argsort(z, kind="stable")
    z = z[order]
    slope = np.cumsum(dw[order])
    dz = np.diff(z)
    s = np.concatenate(([0.0], np.cumsum(slope[:-1] * dz)))

    ez = np.exp(-lam * z)
    ezs = np.exp(-lam * z - s)
    rh = lam * dz + (s[1:] - s[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        # both endpoint terms are bounded, so this form never overflows
        steep = lam * dz * (ezs[:-1] - ezs[1:]) / rh
    flat = lam * ezs[:-1] * dz * (1.0 - rh * (0.5 - rh / 6.0))
    total = float(ez[0] - ez[-1]
                  - np.sum(np.where(np.abs(rh) > 1e-4, steep, flat)))
    # beyond the last breakpoint S is constant; below the first it is 0
    s_inf = atoms.size * float(phi.ys[-1])
    total += float(ez[-1]) * -math.expm1(-s_inf)
    return total


def decorated_intensity_constant(c_hat: float, decorations: DecorationSample,
                                 phi: TestFunction, lam: float) -> Estimate:
    """The shape constant C(phi) = c_hat * integral over z of
    (1 - E exp(-sum_a phi(a + z))) lam e^(-lam z) dz, with the decoration
    expectation taken over the sampled clouds.

    The integral is computed exactly per cloud (see
    _cloud_intensity_integral), so the spread across clouds is the whole
    Monte Carlo error.
    """
    if not (c_hat > 0.0 and lam > 0.0):
        raise ParameterError("c_hat and lam must be positive")
    per_cloud = [c_hat * _cloud_intensity_integral(atoms, phi, lam)
                 for atoms in decorations.atoms]
    return _mean_estimate(per_cloud)
