"""Config parsing, canonicalization, and the run-identity hash."""

import os

import pytest

from bbmlab import config as cfg
from bbmlab.errors import ParameterError
from bbmlab.model import Frame


MINIMAL = "checkpoints = 1,2\n"


def test_minimal_config_resolves_defaults():
    c = cfg.ExperimentConfig.from_text(MINIMAL)
    assert c.params.beta == 1.0
    assert c.params.rho == 0.0
    assert c.params.x0 == 1.0
    assert c.params.frame is Frame.STANDARD_MOVING_BARRIER
    assert c.barrier_mode == "tag"
    assert c.replicas == 100
    assert c.replica_start == 0
    assert c.master_seed == 1
    assert c.checkpoints == (1.0, 2.0)
    assert c.segment_dt == 0.1
    assert c.upper_line_z is None
    assert c.s_cuts == ()
    assert c.phis == ()
    assert c.population_cap == 10_000_000
    assert c.survival_stop_count == 0
    assert c.survival_stop_clearance == 1.0
    assert c.output == "dataset.jsonl"
    assert c.summary_output is None


def test_comments_and_blank_lines_ignored():
    text = """
# full-line comment
checkpoints = 1,2   # trailing comment
beta = 1.5

"""
    c = cfg.ExperimentConfig.from_text(text)
    assert c.params.beta == 1.5
    assert c.checkpoints == (1.0, 2.0)


def test_equivalent_spellings_hash_identically():
    base = cfg.ExperimentConfig.from_text(MINIMAL)
    spelled = cfg.ExperimentConfig.from_text(
        "beta = 1.0\noffspring = 2:1.0\nrho = 0.0\nx0 = 1\n"
        "frame = standard\ncheckpoints = 1.0, 2.0\nreplicas = 100\n")
    assert spelled.config_hash == base.config_hash
    assert spelled.canonical_text() == base.canonical_text()


def test_output_and_threads_do_not_touch_the_hash():
    base = cfg.ExperimentConfig.from_text(MINIMAL)
    redirected = cfg.ExperimentConfig.from_text(
        MINIMAL, overrides={"output": "elsewhere.jsonl",
                            "summary_output": "s.csv",
                            "threads": "2"})
    assert redirected.config_hash == base.config_hash
    assert "output" not in redirected.data_keys()
    assert "threads" not in redirected.data_keys()


def test_data_change_changes_the_hash():
    base = cfg.ExperimentConfig.from_text(MINIMAL)
    other = cfg.ExperimentConfig.from_text("checkpoints = 1,2\nmaster_seed = 2\n")
    assert other.config_hash != base.config_hash


def test_canonical_text_round_trips():
    c = cfg.ExperimentConfig.from_text(
        "checkpoints = 1, 2, 3\nrho = 0.30\nupper_line_z = 4\n"
        "s_cuts = 0.5,1.5\nphis = canonical\n")
    again = cfg.ExperimentConfig.from_text(c.canonical_text())
    assert again.config_hash == c.config_hash
    assert again.canonical_text() == c.canonical_text()


def test_unknown_key_lists_known_keys_with_line_number():
    with pytest.raises(ParameterError, match="line 2.*betta.*known keys"):
        cfg.ExperimentConfig.from_text("checkpoints = 1\nbetta = 2\n")


def test_duplicate_key_rejected():
    with pytest.raises(ParameterError, match="line 2.*duplicate key 'beta'"):
        cfg.ExperimentConfig.from_text("beta = 1\nbeta = 2\ncheckpoints = 1\n")


def test_line_without_equals_rejected():
    with pytest.raises(ParameterError, match="expected 'key = value'"):
        cfg.ExperimentConfig.from_text("checkpoints 1,2\n")


def test_missing_checkpoints_is_an_error():
    with pytest.raises(ParameterError, match="missing required.*checkpoints"):
        cfg.ExperimentConfig.from_text("beta = 1\n")


def test_bad_number_names_the_key():
    with pytest.raises(ParameterError, match="'beta'.*expected a number.*'soup'"):
        cfg.ExperimentConfig.from_text("checkpoints = 1\nbeta = soup\n")
    with pytest.raises(ParameterError, match="'replicas'.*expected an integer"):
        cfg.ExperimentConfig.from_text("checkpoints = 1\nreplicas = 2.5\n")


def test_bad_offspring_atom():
    with pytest.raises(ParameterError, match="offspring atom.*count:probability"):
        cfg.ExperimentConfig.from_text("checkpoints = 1\noffspring = 2;1\n")
    with pytest.raises(ParameterError, match="listed twice"):
        cfg.ExperimentConfig.from_text(
            "checkpoints = 1\noffspring = 2:0.5,2:0.5\n")
    # model-level validation still fires through the config path
    with pytest.raises(ParameterError, match="mass at 0"):
        cfg.ExperimentConfig.from_text(
            "checkpoints = 1\noffspring = 0:0.5,2:0.5\n")


def test_bad_frame_and_barrier_mode():
    with pytest.raises(ParameterError, match="frame"):
        cfg.ExperimentConfig.from_text("checkpoints = 1\nframe = sideways\n")
    with pytest.raises(ParameterError, match="barrier_mode"):
        cfg.ExperimentConfig.from_text("checkpoints = 1\nbarrier_mode = maim\n")


def test_bad_phi_spec_message():
    with pytest.raises(ParameterError,
                       match="bad test-function spec.*step:a"):
        cfg.ExperimentConfig.from_text("checkpoints = 1\nphis = wedge:1\n")


def test_phis_canonical_and_explicit():
    c = cfg.ExperimentConfig.from_text("checkpoints = 1\nphis = canonical\n")
    assert [f.name for f in c.phis] == ["step:0", "tent:1:1", "plateau:-1:0.5"]
    d = cfg.ExperimentConfig.from_text("checkpoints = 1\nphis = step:2,tent:0:1\n")
    assert [f.name for f in d.phis] == ["step:2", "tent:0:1"]


def test_threads_auto_resolves_to_cpu_count():
    c = cfg.ExperimentConfig.from_text(MINIMAL)
    assert c.threads == (os.cpu_count() or 1)
    d = cfg.ExperimentConfig.from_text("checkpoints = 1\nthreads = 3\n")
    assert d.threads == 3
    with pytest.raises(ParameterError, match="threads"):
        cfg.ExperimentConfig.from_text("checkpoints = 1\nthreads = 0\n")


def test_override_with_unknown_key_rejected():
    with pytest.raises(ParameterError, match="unknown config key"):
        cfg.ExperimentConfig.from_text(MINIMAL, overrides={"bogus": "1"})


def test_from_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(MINIMAL + "master_seed = 99\n")
    c = cfg.ExperimentConfig.from_file(p)
    assert c.master_seed == 99


def test_experiment_kwargs_drive_a_run():
    from bbmlab.estimators import run_experiment

    c = cfg.ExperimentConfig.from_text(
        "checkpoints = 0.5,1\nreplicas = 8\nmaster_seed = 31\n"
        "upper_line_z = 3\ns_cuts = 0.5\nphis = step:0\n")
    ds = run_experiment(c.params, c.checkpoints, c.replicas,
                        **c.experiment_kwargs())
    assert ds.n_replicas == 8
    assert ds.config == c.data_keys()
    # the echoed config hashes back to the same identity
    text = "".join(f"{k} = {v}\n" for k, v in sorted(ds.config.items()))
    assert cfg.hash_text(text) == c.config_hash
