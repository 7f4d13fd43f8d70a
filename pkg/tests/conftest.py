import numpy as np
import pytest

from bbmlab import estimators
from bbmlab.model import Frame, ModelParams, canonical_test_functions


def make_params(beta=1.0, rho=0.0, x0=1.0, frame=Frame.STANDARD_MOVING_BARRIER,
                law=None):
    return ModelParams.create(beta=beta, rho=rho, x0=x0, frame=frame, law=law)


@pytest.fixture(scope="session")
def tag_ds():
    """Small tag-mode dataset with every optional column switched on."""
    return estimators.run_experiment(
        make_params(rho=0.0, x0=1.0), [1.0, 2.0, 3.0], 400,
        master_seed=2024, barrier_mode="tag", upper_line_z=4.0,
        s_cuts=(1.0, 2.0), test_functions=canonical_test_functions())


@pytest.fixture(scope="session")
def kill_ds():
    return estimators.run_experiment(
        make_params(rho=0.0, x0=1.0), [1.0, 2.0, 3.0], 400,
        master_seed=515, barrier_mode="kill")


@pytest.fixture(scope="session")
def nobar_ds():
    return estimators.run_experiment(
        make_params(rho=0.0, x0=0.5, frame=Frame.NO_BARRIER), [1.0, 2.0], 300,
        master_seed=777, upper_line_z=2.0)


@pytest.fixture()
def run_cli(capsys):
    """Invoke the command line in-process; returns (exit code, out, err)."""
    from bbmlab import cli

    def run(*argv):
        code = cli.main([str(a) for a in argv])
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    return run
