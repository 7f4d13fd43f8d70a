"""Dataset container: column access, merge, subset, signature checks."""

import numpy as np
import pytest

from conftest import make_params

from bbmlab.errors import ParameterError, StateError
from bbmlab.estimators import run_experiment


def test_column_access(tag_ds):
    assert tag_ds.n_replicas == 400
    assert tag_ds.n_checkpoints == 3
    assert tag_ds.column_names[0] == "alive"
    col = tag_ds.column("max_tilde")
    assert col.shape == (400, 3)
    one = tag_ds.at(2.0, "alive")
    assert one.shape == (400,)
    np.testing.assert_array_equal(one, tag_ds.values[:, 1, 0])


def test_unknown_column_lists_available(tag_ds):
    with pytest.raises(ParameterError, match="no column 'bogus'; available"):
        tag_ds.column("bogus")


def test_checkpoint_index_tolerance(tag_ds):
    assert tag_ds.checkpoint_index(2.0) == 1
    # within the matching tolerance
    assert tag_ds.checkpoint_index(2.0 + 5e-13) == 1
    with pytest.raises(ParameterError, match="no checkpoint at t=2.5"):
        tag_ds.checkpoint_index(2.5)


def test_alive_mask_consistency(tag_ds):
    mask = tag_ds.alive_mask(3.0)
    np.testing.assert_array_equal(mask, tag_ds.at(3.0, "alive") > 0)
    # dead replicas carry a recorded extinction time at or before t
    dead = ~mask
    if dead.any():
        assert np.all(tag_ds.extinction_times[dead] <= 3.0)


def test_signature_contents(tag_ds):
    sig = tag_ds.signature()
    assert sig["beta"] == 1.0
    assert sig["frame"] == "standard"
    assert sig["offspring"] == {2: 1.0}
    assert sig["barrier_mode"] == "tag"
    assert sig["checkpoints"] == [1.0, 2.0, 3.0]
    assert sig["s_cuts"] == [1.0, 2.0]
    assert sig["phi_names"] == ["step:0", "tent:1:1", "plateau:-1:0.5"]


def _small(seed, start, n):
    return run_experiment(make_params(), (0.5, 1.0), n, master_seed=seed,
                          replica_start=start, segment_dt=0.5)


def test_merge_is_order_independent():
    a = _small(7, 0, 5)
    b = _small(7, 5, 4)
    ab = a.merge(b)
    ba = b.merge(a)
    assert ab.n_replicas == 9
    np.testing.assert_array_equal(ab.replica_indices, np.arange(9))
    np.testing.assert_array_equal(ab.values, ba.values)
    np.testing.assert_array_equal(ab.extinction_times, ba.extinction_times)


def test_merge_equals_single_run():
    # replica streams key on (master, replica), so a split run merges into
    # exactly the dataset a single call would have produced
    whole = _small(7, 0, 9)
    split = _small(7, 0, 5).merge(_small(7, 5, 4))
    np.testing.assert_array_equal(split.values, whole.values)
    np.testing.assert_array_equal(split.extinction_times,
                                  whole.extinction_times)
    np.testing.assert_array_equal(split.peak_alive, whole.peak_alive)


def test_merge_rejects_mismatched_config():
    a = _small(7, 0, 3)
    b = run_experiment(make_params(rho=0.1), (0.5, 1.0), 3, master_seed=7,
                       replica_start=3, segment_dt=0.5)
    with pytest.raises(StateError, match="different configurations"):
        a.merge(b)


def test_merge_rejects_overlap():
    a = _small(7, 0, 5)
    b = _small(7, 3, 4)
    with pytest.raises(StateError, match="overlap"):
        a.merge(b)


def test_subset(tag_ds):
    mask = tag_ds.at(3.0, "alive") > 0
    sub = tag_ds.subset(mask)
    assert sub.n_replicas == int(mask.sum())
    np.testing.assert_array_equal(sub.replica_indices,
                                  tag_ds.replica_indices[mask])
    np.testing.assert_array_equal(sub.values, tag_ds.values[mask])
    assert sub.signature() == tag_ds.signature()
    with pytest.raises(ParameterError, match="mask length"):
        tag_ds.subset(mask[:-1])


def test_shape_validation(tag_ds):
    from dataclasses import replace

    with pytest.raises(ParameterError, match="does not match"):
        replace(tag_ds, values=tag_ds.values[:10])
    with pytest.raises(ParameterError, match="length mismatch"):
        replace(tag_ds, extinction_times=tag_ds.extinction_times[:10])
    with pytest.raises(ParameterError, match="strictly increasing"):
        replace(tag_ds, replica_indices=tag_ds.replica_indices[::-1].copy())
