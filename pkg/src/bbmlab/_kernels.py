"""Compiled core of the particle engine.

One replica is simulated by `run_replica`, an event-driven walk over the
merged grid of branch times, position-sampling boundaries, and recording
checkpoints.  Between consecutive samples of one particle the barrier and the
optional upper line are resolved exactly by Brownian-bridge thinning, so the
position-sampling spacing controls only the (tiny) chance of missing a
double crossing of both lines inside one segment, never single-line bias.

Draw order per particle and segment is fixed: position increment, lower-line
thinning uniform (only while the lineage is untouched and the endpoint stays
above the line), conditional touch-time uniform (tag mode with exact touch
times), upper-line thinning uniform (only while unflagged), then at a branch
one offspring uniform from the parent followed by one lifetime exponential
per child drawn from the child's own stream.  Because every particle owns an
independent stream keyed by (master seed, replica, birth index), results are
invariant to iteration order, dead-row compaction, and thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .rng import exponential, normal, stream_init, uniform

INF = np.inf

# float columns
F_POS = 0
F_LAST_T = 1
F_NEXT_BRANCH = 2
F_TAU = 3
F_UP_TAU = 4
F_BIRTH_T = 5
F_BIRTH_X = 6
F_DEATH_T = 7
NF = 8

# int columns
I_PARENT = 0
I_BIRTH = 1
NI = 2

# trajectory columns (fixed block; s-cut and phi blocks follow)
C_ALIVE = 0
C_NTILDE = 1
C_MAX = 2
C_MAXT = 3
C_W = 4
C_WT = 5
C_Z = 6
C_ZT = 7
C_V = 8
C_VT = 9
NFIXED = 10


def n_columns(n_s_cuts: int, n_phi: int) -> int:
    return NFIXED + 2 * n_s_cuts + n_phi


@njit(cache=True, inline="always")
def _log_norm_sf(x):
    """log P(N(0,1) > x), stable for large positive x."""
    if x < 26.0:
        return np.log(0.5 * math.erfc(x / np.sqrt(2.0)))
    inv2 = 1.0 / (x * x)
    series = 1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * 105.0)))
    return -0.5 * x * x - 0.5 * np.log(2.0 * np.pi) - np.log(x) + np.log(series)


@njit(cache=True, inline="always")
def _norm_cdf(x):
    return 0.5 * math.erfc(-x / np.sqrt(2.0))


@njit(cache=True)
def bridge_stay_prob(d1, d2, dt):
    """P(Brownian bridge between clearances d1, d2 over dt stays positive)."""
    if d1 <= 0.0 or d2 <= 0.0:
        return 0.0
    return 1.0 - np.exp(-2.0 * d1 * d2 / dt)


@njit(cache=True)
def bridge_hit_cdf(a, b, length, s):
    """P(first touch of 0 <= s | bridge from a > 0 to b over `length`).

    Normalised over paths that touch at all; for b <= 0 touching is certain.
    """
    if s <= 0.0:
        return 0.0
    if s >= length:
        return 1.0
    v = np.sqrt(s * (length - s) / length)
    m1 = a + (b - a) * s / length
    m2 = -a + (b + a) * s / length
    return _norm_cdf(m2 / v) + np.exp(2.0 * a * b / length + _log_norm_sf(m1 / v))


@njit(cache=True)
def bridge_hit_time(a, b, length, u, iters):
    """Inverse-CDF sample of the conditional first-touch time via bisection."""
    lo = 0.0
    hi = length
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if bridge_hit_cdf(a, b, length, mid) < u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_TAU_ITERS = 22


@njit(cache=True)
def _grow(F, I, A, R, need):
    old = F.shape[0]
    new = old * 2
    while new < need:
        new *= 2
    F2 = np.empty((new, NF), dtype=np.float64)
    I2 = np.empty((new, NI), dtype=np.int64)
    A2 = np.zeros(new, dtype=np.uint8)
    R2 = np.empty((new, 4), dtype=np.uint64)
    F2[:old] = F
    I2[:old] = I
    A2[:old] = A
    R2[:old] = R
    return F2, I2, A2, R2


@njit(cache=True)
def _grow_i8(arr, need):
    new = arr.shape[0] * 2
    while new < need:
        new *= 2
    out = np.empty(new, dtype=np.int64)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True)
def _grow_f8(arr, need):
    new = arr.shape[0] * 2
    while new < need:
        new *= 2
    out = np.empty(new, dtype=np.float64)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True, inline="always")
def _phi_eval(phi_xs, phi_ys, lo, hi, y):
    """Piecewise-linear evaluation of one test function slice."""
    if y <= phi_xs[lo]:
        return 0.0
    if y >= phi_xs[hi - 1]:
        return phi_ys[hi - 1]
    j = lo + 1
    while phi_xs[j] < y:
        j += 1
    x0 = phi_xs[j - 1]
    x1 = phi_xs[j]
    w = (y - x0) / (x1 - x0)
    return phi_ys[j - 1] * (1.0 - w) + phi_ys[j] * w


@njit(cache=True)
def _functional_row(F, A, n_rows, t, lam, vel, up_on, up_z,
                    s_cuts, phi_xs, phi_ys, phi_off, out):
    """Fill one trajectory row from the current particle state.

    Weight convention: w = exp(lam * (X - vel * t)) with vel = lam - rho_eff,
    so the same expression serves the standard and drifted frames.  Sums use
    compensated accumulation; maxima are NaN over empty sets.
    """
    n_s = s_cuts.shape[0]
    n_phi = phi_off.shape[0] - 1
    ncol = NFIXED + 2 * n_s + n_phi
    for c in range(ncol):
        out[c] = 0.0
    comp = np.zeros(ncol)
    max_all = -INF
    max_t = -INF
    late_max = out[NFIXED + n_s: NFIXED + 2 * n_s]
    for j in range(n_s):
        late_max[j] = -INF
    n_alive = 0
    n_tilde = 0
    have_m = lam > 0.0 and t > 0.0
    m_t = vel * t - 1.5 / lam * np.log(t) if have_m else 0.0
    for i in range(n_rows):
        if A[i] == 0:
            continue
        x = F[i, F_POS]
        tau = F[i, F_TAU]
        untouched = tau == INF
        n_alive += 1
        if x > max_all:
            max_all = x
        if untouched:
            n_tilde += 1
            if x > max_t:
                max_t = x
        w = np.exp(lam * (x - vel * t)) if lam > 0.0 else 1.0
        zw = (vel * t - x) * w
        # compensated add helper, inlined per column
        y = w - comp[C_W]
        s0 = out[C_W] + y
        comp[C_W] = (s0 - out[C_W]) - y
        out[C_W] = s0
        y = zw - comp[C_Z]
        s0 = out[C_Z] + y
        comp[C_Z] = (s0 - out[C_Z]) - y
        out[C_Z] = s0
        if untouched:
            y = w - comp[C_WT]
            s0 = out[C_WT] + y
            comp[C_WT] = (s0 - out[C_WT]) - y
            out[C_WT] = s0
            y = zw - comp[C_ZT]
            s0 = out[C_ZT] + y
            comp[C_ZT] = (s0 - out[C_ZT]) - y
            out[C_ZT] = s0
        if up_on and F[i, F_UP_TAU] == INF:
            vw = (up_z + vel * t - x) * w
            y = vw - comp[C_V]
            s0 = out[C_V] + y
            comp[C_V] = (s0 - out[C_V]) - y
            out[C_V] = s0
            if untouched:
                y = vw - comp[C_VT]
                s0 = out[C_VT] + y
                comp[C_VT] = (s0 - out[C_VT]) - y
                out[C_VT] = s0
        for j in range(n_s):
            if tau > s_cuts[j]:
                col = NFIXED + j
                y = zw - comp[col]
                s0 = out[col] + y
                comp[col] = (s0 - out[col]) - y
                out[col] = s0
            if tau < INF and tau >= s_cuts[j] and x > late_max[j]:
                late_max[j] = x
        if untouched and n_phi > 0 and have_m:
            atom = x - m_t
            for k in range(n_phi):
                val = _phi_eval(phi_xs, phi_ys, phi_off[k], phi_off[k + 1], atom)
                col = NFIXED + 2 * n_s + k
                y = val - comp[col]
                s0 = out[col] + y
                comp[col] = (s0 - out[col]) - y
                out[col] = s0
    out[C_ALIVE] = n_alive
    out[C_NTILDE] = n_tilde
    out[C_MAX] = max_all if n_alive > 0 else np.nan
    out[C_MAXT] = max_t if n_tilde > 0 else np.nan
    if not up_on:
        out[C_V] = np.nan
        out[C_VT] = np.nan
    for j in range(n_s):
        if late_max[j] == -INF:
            late_max[j] = np.nan
    if n_phi > 0 and not have_m:
        for k in range(n_phi):
            out[NFIXED + 2 * n_s + k] = np.nan


@njit(cache=True)
def run_replica(master, replica,
                x0, beta, off_cdf, off_ks,
                drift, low_on, low_b, low_s, kill,
                up_on, up_z, up_s, exact_tau,
                checkpoints, segment_dt,
                lam, vel,
                s_cuts, phi_xs, phi_ys, phi_off,
                cap, stop_count, stop_clear,
                collect, out_traj, F, I, A, R):
    """Simulate one replica; fill out_traj rows per checkpoint.

    F, I, A, R are workspace buffers (particle table) of matching row
    counts; they are reset here and grown as needed, and the grown versions
    travel back in the result so a batch driver can reuse them.  Returns
    (status, extinct_time, peak_alive, first_up_touch, stopped_time,
    cap_time, F, I, A, R, n_rows, snap_off, snap_idx, snap_pos, touch_idx,
    touch_tau, n_touch).  status: 0 ok, 1 population cap hit.  Snapshot and
    touch outputs are empty unless `collect`.
    """
    A[:] = 0

    n_check = checkpoints.shape[0]
    snap_off = np.zeros(n_check + 1, dtype=np.int64)
    snap_idx = np.empty(256 if collect else 0, dtype=np.int64)
    snap_pos = np.empty(256 if collect else 0, dtype=np.float64)
    snap_n = 0
    touch_idx = np.empty(64 if collect else 0, dtype=np.int64)
    touch_tau = np.empty(64 if collect else 0, dtype=np.float64)
    n_touch = 0

    # root particle
    F[0, F_POS] = x0
    F[0, F_LAST_T] = 0.0
    F[0, F_TAU] = INF
    F[0, F_UP_TAU] = INF
    F[0, F_BIRTH_T] = 0.0
    F[0, F_BIRTH_X] = x0
    F[0, F_DEATH_T] = np.nan
    I[0, I_PARENT] = -1
    I[0, I_BIRTH] = 0
    stream_init(R, 0, master, replica, 0)
    if beta > 0.0:
        F[0, F_NEXT_BRANCH] = exponential(R, 0, beta)
    else:
        F[0, F_NEXT_BRANCH] = INF
    A[0] = 1
    n_rows = 1
    n_alive = 1
    birth_counter = 1

    status = 0
    extinct_time = np.nan
    stopped_time = np.nan
    cap_time = np.nan
    first_up_touch = INF
    peak_alive = 1
    frozen = False

    t_cur = 0.0
    for ci in range(n_check):
        t_target = checkpoints[ci]
        while t_cur < t_target and not frozen and n_alive > 0 and status == 0:
            t_seg = t_cur + segment_dt
            if t_seg > t_target:
                t_seg = t_target
            i = 0
            while i < n_rows:
                if A[i] == 1:
                    # step particle i up to t_seg, branching along the way
                    while True:
                        tb = F[i, F_NEXT_BRANCH]
                        t1 = tb if tb <= t_seg else t_seg
                        t0 = F[i, F_LAST_T]
                        dt = t1 - t0
                        if dt > 0.0:
                            x_old = F[i, F_POS]
                            x_new = x_old + drift * dt + np.sqrt(dt) * normal(R, i)
                            F[i, F_POS] = x_new
                            F[i, F_LAST_T] = t1
                            if low_on and F[i, F_TAU] == INF:
                                d0 = x_old - (low_b + low_s * t0)
                                d1 = x_new - (low_b + low_s * t1)
                                crossed = False
                                below = d1 <= 0.0
                                if below or d0 <= 0.0:
                                    crossed = True
                                elif uniform(R, i) < np.exp(-2.0 * d0 * d1 / dt):
                                    crossed = True
                                if crossed:
                                    if exact_tau:
                                        F[i, F_TAU] = t0 + bridge_hit_time(
                                            d0, d1, dt, uniform(R, i), _TAU_ITERS)
                                    else:
                                        F[i, F_TAU] = t1
                                    if kill:
                                        F[i, F_DEATH_T] = F[i, F_TAU]
                                        A[i] = 0
                                        n_alive -= 1
                                        if F[i, F_TAU] > last_death:
                                            last_death = F[i, F_TAU]
                                        break
                                    if collect:
                                        if n_touch == touch_idx.shape[0]:
                                            touch_idx = _grow_i8(touch_idx, n_touch + 1)
                                            touch_tau = _grow_f8(touch_tau, n_touch + 1)
                                        touch_idx[n_touch] = I[i, I_BIRTH]
                                        touch_tau[n_touch] = F[i, F_TAU]
                                        n_touch += 1
                            if up_on and F[i, F_UP_TAU] == INF:
                                e0 = (up_z + up_s * t0) - x_old
                                e1 = (up_z + up_s * t1) - x_new
                                hit = False
                                if e1 <= 0.0 or e0 <= 0.0:
                                    hit = True
                                elif uniform(R, i) < np.exp(-2.0 * e0 * e1 / dt):
                                    hit = True
                                if hit:
                                    F[i, F_UP_TAU] = t1
                                    if t1 < first_up_touch:
                                        first_up_touch = t1
                        if tb <= t_seg:
                            # branch (crossing was resolved first; reaching here
                            # means the particle is still alive at tb)
                            u = uniform(R, i)
                            j = 0
                            while off_cdf[j] < u:
                                j += 1
                            n_child = off_ks[j]
                            A[i] = 0
                            F[i, F_DEATH_T] = tb
                            n_alive += n_child - 1
                            if n_rows + n_child > F.shape[0]:
                                F, I, A, R = _grow(F, I, A, R, n_rows + n_child)
                            x_here = F[i, F_POS]
                            tau_here = F[i, F_TAU]
                            up_here = F[i, F_UP_TAU]
                            parent_birth = I[i, I_BIRTH]
                            for _c in range(n_child):
                                r = n_rows
                                n_rows += 1
                                F[r, F_POS] = x_here
                                F[r, F_LAST_T] = tb
                                F[r, F_TAU] = tau_here
                                F[r, F_UP_TAU] = up_here
                                F[r, F_BIRTH_T] = tb
                                F[r, F_BIRTH_X] = x_here
                                F[r, F_DEATH_T] = np.nan
                                I[r, I_PARENT] = parent_birth
                                I[r, I_BIRTH] = birth_counter
                                stream_init(R, r, master, replica, birth_counter)
                                birth_counter += 1
                                F[r, F_NEXT_BRANCH] = tb + exponential(R, r, beta)
                                A[r] = 1
                            break
                        break
                i += 1
            t_cur = t_seg
            if n_alive > peak_alive:
                peak_alive = n_alive
            if n_alive == 0:
                extinct_time = t_cur
            elif n_alive > cap:
                status = 1
                cap_time = t_cur
            elif stop_count > 0:
                n_clear = 0
                for r in range(n_rows):
                    if A[r] == 1:
                        c = F[r, F_POS] - (low_b + low_s * t_cur)
                        if c >= stop_clear:
                            n_clear += 1
                            if n_clear >= stop_count:
                                break
                if n_clear >= stop_count:
                    frozen = True
                    stopped_time = t_cur

        # record checkpoint ci
        row = out_traj[ci]
        if frozen:
            for c in range(row.shape[0]):
                row[c] = np.nan
            row[C_ALIVE] = n_alive
        else:
            _functional_row(F, A, n_rows, t_target, lam, vel, up_on, up_z,
                            s_cuts, phi_xs, phi_ys, phi_off, row)
        if collect:
            for r in range(n_rows):
                if A[r] == 1:
                    if snap_n == snap_idx.shape[0]:
                        snap_idx = _grow_i8(snap_idx, snap_n + 1)
                        snap_pos = _grow_f8(snap_pos, snap_n + 1)
                    snap_idx[snap_n] = I[r, I_BIRTH]
                    snap_pos[snap_n] = F[r, F_POS]
                    snap_n += 1
        snap_off[ci + 1] = snap_n
        if status != 0:
            break
        # drop dead rows once they dominate (batch mode only; order is stable
        # and streams travel with their rows, so results are unchanged)
        if not collect and n_rows - n_alive > 4096 and n_rows - n_alive > n_alive:
            w = 0
            for r in range(n_rows):
                if A[r] == 1:
                    if w != r:
                        for c in range(NF):
                            F[w, c] = F[r, c]
                        I[w, I_PARENT] = I[r, I_PARENT]
                        I[w, I_BIRTH] = I[r, I_BIRTH]
                        for c in range(4):
                            R[w, c] = R[r, c]
                    A[w] = 1
                    w += 1
            for r in range(w, n_rows):
                A[r] = 0
            n_rows = w

    return (status, extinct_time, peak_alive, first_up_touch, stopped_time,
            cap_time, F, I, A, R, n_rows,
            snap_off, snap_idx[:snap_n], snap_pos[:snap_n],
            touch_idx[:n_touch], touch_tau[:n_touch], n_touch)


@njit(cache=True)
def run_batch(master, n_replicas,
              x0, beta, off_cdf, off_ks,
              drift, low_on, low_b, low_s, kill,
              up_on, up_z, up_s, exact_tau,
              checkpoints, segment_dt,
              lam, vel,
              s_cuts, phi_xs, phi_ys, phi_off,
              cap, stop_count, stop_clear,
              values, extinct, peak, up_first, stopped, cap_times,
              statuses, replica0):
    """Sequential batch driver writing one trajectory block per replica.

    The particle-table workspace persists across replicas, so large runs pay
    allocation and page-fault costs once instead of per replica.  Results
    are unaffected: every random draw is tied to a (replica, birth) stream.
    """
    cap0 = 1024
    F = np.empty((cap0, NF), dtype=np.float64)
    I = np.empty((cap0, NI), dtype=np.int64)
    A = np.zeros(cap0, dtype=np.uint8)
    R = np.empty((cap0, 4), dtype=np.uint64)
    for k in range(n_replicas):
        res = run_replica(master, replica0 + k,
                          x0, beta, off_cdf, off_ks,
                          drift, low_on, low_b, low_s, kill,
                          up_on, up_z, up_s, exact_tau,
                          checkpoints, segment_dt,
                          lam, vel,
                          s_cuts, phi_xs, phi_ys, phi_off,
                          cap, stop_count, stop_clear,
                          False, values[k], F, I, A, R)
        statuses[k] = res[0]
        extinct[k] = res[1]
        peak[k] = res[2]
        up_first[k] = res[3]
        stopped[k] = res[4]
        cap_times[k] = res[5]
        F, I, A, R = res[6], res[7], res[8], res[9]
        if res[0] != 0:
            return k
    return -1
