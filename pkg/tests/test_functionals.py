import math

import numpy as np
import pytest

from bbmlab import engine, functionals
from bbmlab.errors import NumericError, ParameterError, StateError
from bbmlab.model import smoothed_step

from conftest import make_params


@pytest.fixture(scope="module")
def record():
    return engine.simulate_replica(
        make_params(rho=0.0, x0=1.0), [1.0, 2.0], master_seed=3100,
        barrier_mode="tag", upper_line_z=3.0, s_cuts=(0.5,))


def test_point_measure_basics():
    m = functionals.PointMeasure([0.5, -1.0, 0.5])
    assert len(m) == 3
    assert m.max == 0.5
    phi = smoothed_step(0.0)
    assert m.integrate(phi) == pytest.approx(phi(0.5) * 2 + phi(-1.0))
    shifted = m.shifted(2.0)
    np.testing.assert_allclose(shifted.atoms, [2.5, 1.0, 2.5])


def test_point_measure_empty():
    m = functionals.PointMeasure([])
    assert len(m) == 0
    assert m.max is None
    assert m.integrate(smoothed_step(0.0)) == 0.0
    assert functionals.laplace(m, smoothed_step(0.0)) == 1.0


def test_point_measure_rejects_nonfinite():
    with pytest.raises(ParameterError):
        functionals.PointMeasure([0.0, np.inf])


def test_laplace_in_unit_interval(record):
    snap = record.snapshots[-1]
    measure = functionals.extremal_measure(snap)
    val = functionals.laplace(measure, smoothed_step(0.0))
    assert 0.0 < val <= 1.0


def test_gap_u_clips_roundoff_and_flags_real_negatives():
    assert functionals.gap_U(2.0, 1.5) == 0.5
    assert functionals.gap_U(1.0, 1.0 + 1e-12) == 0.0
    with pytest.raises(NumericError):
        functionals.gap_U(1.0, 1.5)


def test_restrict_validation(record):
    snap = record.snapshots[0]
    with pytest.raises(ParameterError, match="restrict"):
        functionals.additive_W(snap, "everyone")


def test_truncated_v_needs_matching_line(record):
    snap = record.snapshots[0]
    with pytest.raises(StateError, match="z=3.0"):
        functionals.truncated_V(snap, 2.0)
    plain = engine.simulate_replica(
        make_params(), [1.0], master_seed=1).snapshots[0]
    with pytest.raises(StateError, match="upper_line_z"):
        functionals.truncated_V(plain, 2.0)


def test_truncated_v_identity_with_w_and_z(record):
    """(z + vel*t - x) w = z*w + (vel*t - x) w, summed over one particle
    set: with no upper touches the three sums close algebraically."""
    snap = record.snapshots[-1]
    if not np.all(snap.never_upper_mask):
        pytest.skip("a lineage reached the upper line in this draw")
    z = 3.0
    v = functionals.truncated_V(snap, z)
    w = functionals.additive_W(snap)
    zz = functionals.derivative_Z(snap)
    assert v == pytest.approx(z * w + zz, rel=1e-12, abs=1e-12)


def test_truncated_z_cut_boundary_cases(record):
    snap = record.snapshots[-1]
    # s = 0: every lineage root starts above the barrier, so tau > 0 always
    assert functionals.truncated_Z_s(snap, 0.0) == pytest.approx(
        functionals.derivative_Z(snap), rel=1e-12)
    # s = snapshot time: only still-untouched lineages remain
    assert functionals.truncated_Z_s(snap, snap.time) == pytest.approx(
        functionals.derivative_Z(snap, functionals.SURVIVORS), rel=1e-12)
    with pytest.raises(ParameterError):
        functionals.truncated_Z_s(snap, -1.0)


def test_truncated_z_contributor_sets_nest(record):
    snap = record.snapshots[-1]
    taus = snap.barrier_touch_times
    set_early = taus > 0.5
    set_late = taus > 1.5
    assert np.all(~set_early | ~set_late | set_early)  # late subset of early
    assert np.all(set_late <= set_early)


def test_extremal_measure_masks(record):
    snap = record.snapshots[-1]
    full = functionals.extremal_measure(snap)
    assert len(full) == int(snap.untouched_mask.sum())
    cut = functionals.extremal_measure(snap, s=0.5)
    assert len(cut) == int((snap.barrier_touch_times > 0.5).sum())
    assert len(cut) >= len(full)
    with pytest.raises(ParameterError):
        functionals.extremal_measure(snap, t=snap.time + 1.0)
    with pytest.raises(ParameterError):
        functionals.extremal_measure(snap, s=-2.0)


def test_max_position_restricts(record):
    snap = record.snapshots[-1]
    mx = functionals.max_position(snap)
    mxt = functionals.max_position(snap, functionals.SURVIVORS)
    if mxt is not None:
        assert mxt <= mx


def test_record_trajectory_columns_and_u(record):
    w = functionals.record_trajectory(record, "W_all")
    assert len(w) == 2
    np.testing.assert_array_equal(w.times, record.checkpoints)
    u = functionals.record_trajectory(record, "U")
    assert np.all(u.values >= 0.0)
    v = functionals.record_trajectory(record, "V_all").values
    vt = functionals.record_trajectory(record, "V_tilde").values
    np.testing.assert_allclose(u.values, np.maximum(v - vt, 0.0))
    with pytest.raises(ParameterError, match="available"):
        functionals.record_trajectory(record, "Q_all")


def test_trajectory_validation():
    with pytest.raises(ParameterError):
        functionals.FunctionalTrajectory("x", [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ParameterError):
        functionals.FunctionalTrajectory("x", [1.0, 2.0], [0.0])
    with pytest.raises(NumericError):
        functionals.FunctionalTrajectory("U", [1.0, 2.0], [0.1, -0.5])
