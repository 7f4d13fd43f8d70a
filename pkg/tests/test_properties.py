"""Distributional and structural properties that hold across the stack."""

import math

import numpy as np
import pytest
import scipy.stats

from conftest import make_params

from bbmlab import estimators, oracles
from bbmlab.estimators import run_experiment
from bbmlab.model import plateau, smoothed_step


@pytest.fixture(scope="module")
def horizon_ds():
    """Tagged run pushed far enough out that the limit proxies separate."""
    return run_experiment(
        make_params(rho=0.0, x0=1.0), [4.0, 8.0], 500, master_seed=909,
        upper_line_z=2.0, s_cuts=(2.0, 4.0, 6.0),
        test_functions=(smoothed_step(0.0), plateau(0.0, 0.5)),
        segment_dt=0.25)


def test_tilde_below_all(horizon_ds):
    # survivors of the barrier are a subset of the full population, so
    # every tilde functional is dominated by its unrestricted twin
    for t in (4.0, 8.0):
        n_all = horizon_ds.at(t, "alive")
        n_til = horizon_ds.at(t, "n_tilde")
        assert np.all(n_til <= n_all)
        w_all = horizon_ds.at(t, "W_all")
        w_til = horizon_ds.at(t, "W_tilde")
        assert np.all(w_til >= 0.0)
        assert np.all(w_til <= w_all + 1e-12)
        v_all = horizon_ds.at(t, "V_all")
        v_til = horizon_ds.at(t, "V_tilde")
        assert np.all(v_til <= v_all + 1e-12)


def test_cut_population_nests(horizon_ds):
    # the s-cut keeps lineages clean up to s; later cuts keep fewer, and
    # both bracket the never-touched population
    z2 = horizon_ds.at(8.0, "Z_cut_2")
    z6 = horizon_ds.at(8.0, "Z_cut_6")
    zt = horizon_ds.at(8.0, "Z_tilde")
    # the gap collapses monotonically toward the tilde value
    gaps = [np.median(np.abs(horizon_ds.at(8.0, f"Z_cut_{s:g}") - zt))
            for s in (2, 4, 6)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert np.all(np.abs(z6 - zt) <= np.abs(z2 - zt) + 1e-9)


def test_additive_martingale_fades(horizon_ds):
    # the surviving-lineage weight drains away; at this modest horizon the
    # bulk has turned down (the long-horizon version runs with the
    # acceptance datasets)
    w4 = horizon_ds.at(4.0, "W_tilde")
    w8 = horizon_ds.at(8.0, "W_tilde")
    live = horizon_ds.at(8.0, "n_tilde") > 0
    assert np.median(w8[live]) < np.median(w4[live])
    assert np.mean(w8[live] < w4[live]) >= 0.70


def test_truncated_v_limit_nondegenerate(horizon_ds):
    # for subcritical drift the truncated V mass does not collapse to 0
    v8 = horizon_ds.at(8.0, "V_tilde")
    assert np.mean(v8 > 0.05) > 0.30


def test_laplace_monotone_in_phi(horizon_ds):
    # plateau:0:0.5 sits pointwise below step:0, so its Laplace value is
    # larger; both stay inside (0, 1]
    for t in (4.0, 8.0):
        lo = estimators.laplace_functional(horizon_ds, t, "step:0")
        hi = estimators.laplace_functional(horizon_ds, t, "plateau:0:0.5")
        assert 0.0 < lo.value <= 1.0
        assert 0.0 < hi.value <= 1.0
        assert hi.value >= lo.value


@pytest.fixture(scope="module")
def kill_coarse():
    return run_experiment(make_params(rho=0.0, x0=1.0), [3.0], 1500,
                          master_seed=61, barrier_mode="kill",
                          segment_dt=1.0)


def test_se_scales_as_inverse_sqrt_n(kill_coarse):
    # light-tailed statistics only; the W family is too heavy-tailed for
    # its sample SE to stabilize at this size
    half = kill_coarse.subset(np.arange(1500) < 750)
    for column in ("max_tilde", "alive"):
        se_half = estimators.functional_mean(half, 3.0, column).se
        se_full = estimators.functional_mean(kill_coarse, 3.0, column).se
        assert abs(se_half / se_full / math.sqrt(2.0) - 1.0) < 0.25
    sh = estimators.survival_prob(half, 3.0).se
    sf = estimators.survival_prob(kill_coarse, 3.0).se
    assert abs(sh / sf / math.sqrt(2.0) - 1.0) < 0.25


@pytest.mark.parametrize("functional", oracles.MANY_TO_ONE_CATALOG)
def test_many_to_one_holds_later(functional):
    res = oracles.many_to_one_check(
        functional, 5.0, x0=1.0, beta=1.0, rho=0.3,
        n_replicas=1000, n_paths=30_000, master_seed=52_525)
    band = 4.0 * math.hypot(res.mc_se, res.reference_se)
    assert abs(res.mc_mean - res.reference) <= band


def test_segment_dt_does_not_move_the_law(kill_coarse):
    # the between-checkpoint bridge corrections are exact, so coarse and
    # fine stepping sample the same distribution (different streams)
    params = make_params(rho=0.0, x0=1.0)
    coarse = kill_coarse
    fine = run_experiment(params, [3.0], 1500, master_seed=62,
                          barrier_mode="kill", segment_dt=0.05)
    pc = estimators.survival_prob(coarse, 3.0)
    pf = estimators.survival_prob(fine, 3.0)
    assert abs(pc.value - pf.value) <= 4.0 * math.hypot(pc.se, pf.se)
    mc = coarse.at(3.0, "max_tilde")
    mf = fine.at(3.0, "max_tilde")
    ks = scipy.stats.ks_2samp(mc[np.isfinite(mc)], mf[np.isfinite(mf)])
    assert ks.pvalue > 1e-3


def test_fit_objective_has_an_interior_optimum():
    rng = np.random.Generator(np.random.PCG64(31313))
    z = rng.lognormal(0.0, 0.5, 3000)
    lam = math.sqrt(2.0)
    m = estimators.synthetic_mixture_maxima(z, 0.6, lam, master_seed=8)
    fit = estimators.gumbel_mixture_fit(m, z, lam)

    def ks_at(c):
        order = np.argsort(m, kind="stable")
        u = np.exp(-lam * m[order])
        return estimators._ks_distance(c, u, z, np.arange(m.size), m.size)

    at_opt = ks_at(fit.c_hat)
    assert at_opt <= fit.ks + 1e-12
    assert ks_at(fit.c_hat * math.exp(0.4)) > at_opt
    assert ks_at(fit.c_hat * math.exp(-0.4)) > at_opt
