import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import UNIFORM, FrozenCenterController
from streamkmeans.analysis import (
    AnalysisConfig,
    ConcentrationConfig,
    accumulated_rate_bound_check,
    accumulated_rate_checks,
    area_growth_bound,
    concentration_experiment,
    condition_a,
    convergence_verdict,
    first_eligible_n,
    gradient_check,
    harmonic_bounds,
    harmonic_sweep,
    horizon,
    horizon_bounds_check,
    horizon_table,
    lipschitz_probe,
    surrogate_bound_check,
    threshold_value,
    thresholds,
    window_rate_check,
    worst_case_check,
    worst_case_window_rates,
)
from streamkmeans.core import InputError
from streamkmeans.distributions import TruncatedGaussianMixture, uniform
from streamkmeans.engine import RunConfig, run
from streamkmeans.schedules import GENERALIZED, NAIVE, RateController, RateSchedule, t_schedule, window_length


def exact_horizon(r: Fraction, m: int) -> int:
    s, T = Fraction(0), m
    while s + Fraction(1, T) <= r:
        s += Fraction(1, T)
        T += 1
    return T


def test_horizon_examples():
    assert horizon(math.log(2), 10) == 19
    assert horizon(0.01, 50) == 50
    with pytest.raises(InputError):
        horizon(0.5, 1)
    with pytest.raises(InputError):
        horizon(0.0, 5)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 3000), st.fractions(Fraction(1, 1000), Fraction(3)))
def test_horizon_definition(m, r):
    # Rational r keeps the comparison exact; float partial sums agree except at
    # ties closer than rounding, which random rationals do not hit.
    assert horizon(float(r), m) == exact_horizon(r, m)


def test_horizon_table_matches_direct_summation():
    ms = np.arange(2, 3000)
    for r in (0.1, math.log(2), 1.7):
        direct = [horizon(r, int(m)) for m in ms]
        assert horizon_table(r, ms).tolist() == direct


def test_harmonic_examples():
    lo, s, hi = harmonic_bounds(2, 4)
    assert (lo, hi) == (math.log(2), math.log(3))
    assert s == pytest.approx(5 / 6, abs=1e-15)
    lo, s, hi = harmonic_bounds(7, 8)
    assert (lo, s, hi) == (math.log(8 / 7), 1 / 7, math.log(7 / 6))
    with pytest.raises(InputError):
        harmonic_bounds(1, 3)
    with pytest.raises(InputError):
        harmonic_bounds(5, 5)


@given(st.integers(2, 500), st.integers(1, 500))
def test_harmonic_sandwich(m, extra):
    lo, s, hi = harmonic_bounds(m, m + extra)
    assert lo <= s <= hi


def test_harmonic_sweep_small():
    res = harmonic_sweep(200)
    assert res["lower_violations"] == res["upper_violations"] == 0


def test_horizon_bounds_ln2_hold_and_r01_lower_fails():
    assert horizon_bounds_check(math.log(2), 2000)["lower_violations"] == 0
    res = horizon_bounds_check(0.1, 2000)
    # T_0.1(2) = 2 while alpha (m - 1) = e^0.1 - 1 > 0.
    assert res["first_lower_violation_m"] == 2
    assert res["upper_violations"] == 0 and res["weak_lower_violations"] == 0


def test_thresholds():
    # the log term vanishes at s = 1
    assert threshold_value(1.0, 100, 1, 500) == 0.01
    n, alpha, beta = 1000, 0.7, 0.8
    s = window_length(n, alpha)
    t0 = t_schedule(n - s, beta)
    assert thresholds(n, alpha, beta, 2.0) == 2.0 * (1 / t0 + s * math.log(s) / n)
    assert AnalysisConfig(k=2, R=1.0, L=0.001).c == 1.0
    assert AnalysisConfig(k=2, R=1.0, L=1.0).c == 512.0
    with pytest.raises(InputError):
        AnalysisConfig(eps=0.1, eps0=0.05)


def test_condition_a_and_first_eligible():
    assert not condition_a(10**5, 0.7)
    n = first_eligible_n(0.7)
    assert 1e36 < n < 1e39
    n = first_eligible_n(0.9)
    assert n > 1024  # the upper half, n^0.9 <= n/2 - 1, needs n^0.1 > 2
    assert condition_a(int(2 * n), 0.9) and not condition_a(int(n / 2), 0.9)
    assert first_eligible_n(2 / 3) == math.inf


def test_worst_case_fixture_matches_construction():
    n, alpha, beta = 10**5, 0.7, 0.8
    s = window_length(n, alpha)
    t0 = t_schedule(n - s, beta)
    expected = 1 / t0 + math.fsum(s / ((n - s) * j) for j in range(1, s))
    chk = worst_case_check(n, alpha, beta)
    assert chk.observed == pytest.approx(expected, rel=1e-12)
    assert chk.margin >= 0
    assert worst_case_window_rates(n, s, t0).size == s


def test_zero_rate_window_margin_equals_bound():
    chk = window_rate_check(np.zeros(1001), 1000, 0.7, 0.8, 2)
    assert chk.observed == 0.0 and chk.margin == chk.bound


def test_controller_replay_stays_below_construction():
    n, alpha, beta = 20_000, 0.7, 0.8
    s = window_length(n, alpha)
    ctrl = RateController(RateSchedule(GENERALIZED, alpha, beta), 2, n)
    total = 0.0
    for m in range(n):
        i = 1 if m < n - s else 0
        h = ctrl.rate(m, i)
        if m >= n - s:
            total += h
        ctrl.observe(i)
    assert total <= worst_case_check(n, alpha, beta).observed


def test_accumulated_rate_on_run():
    tr = run(RunConfig(UNIFORM, k=2, n_max=20_000, seed=3, oracle="none", stride=20_001))
    checks = accumulated_rate_checks(tr)
    assert any(c.skipped for c in checks) and any(c.margin is not None for c in checks)
    assert all(c.margin >= 0 for c in checks if c.margin is not None)
    assert accumulated_rate_bound_check(tr, 4).skipped
    naive = run(RunConfig(UNIFORM, k=2, n_max=10, schedule=RateSchedule(NAIVE)))
    with pytest.raises(InputError):
        accumulated_rate_bound_check(naive, 8)


def test_concentration_k1_is_exact():
    rep = concentration_experiment(ConcentrationConfig(k=1, checkpoints=(2000,), runs=3, c=1.0))
    cp = rep.checkpoints[0]
    assert cp.max_deviation == 0.0 and cp.failures == 0 and rep.passed
    assert rep.substituted and "first holds" in rep.note


def test_concentration_small():
    rep = concentration_experiment(ConcentrationConfig(checkpoints=(5000,), runs=4, c=1.0))
    cp = rep.checkpoints[0]
    assert cp.a_n == thresholds(5000, 0.7, 0.8, 1.0)
    assert cp.bound == 3 / 8 * cp.a_n
    assert 0 < cp.max_deviation < 0.2


def test_lipschitz_examples():
    assert area_growth_bound(2, 1.0, 0.5) == 10.0
    probe = lipschitz_probe(uniform(), [[0.25], [0.75]], 100, 1e-3)
    assert probe.ratio <= 1.0 and probe.within_bound
    assert lipschitz_probe(uniform(), [[0.25], [0.75]], 10, 0.0).ratio == 0.0
    with pytest.raises(InputError):
        lipschitz_probe(uniform(), [[0.25], [0.75]], 10, 0.2)


def test_lipschitz_disk_probe_within_bound():
    dist = TruncatedGaussianMixture([1.0], [[0.0, 0.0]], [0.4], radius=1.0)
    probe = lipschitz_probe(dist, [[-0.5, 0.0], [0.5, 0.0]], 20, 0.05)
    assert probe.probes > 0 and probe.within_bound


def test_verdict_at_stationary_point():
    tr = run(RunConfig(UNIFORM, k=2, init=[[0.25], [0.75]], n_max=100, stride=10,
                       schedule=RateSchedule("uniform_decay", uniform_c=1e-12)))
    v = convergence_verdict(tr)
    assert v.last_exceedance == [None, None]
    assert v.distance_to_stationary == pytest.approx(0.0, abs=1e-9)
    assert v.passed


def test_verdict_flags_frozen_center():
    cfg = RunConfig(UNIFORM, k=2, init=[[0.9], [0.2]], n_max=20_000, seed=5, stride=200)
    tr = run(cfg, controller=FrozenCenterController(cfg.schedule, 2, cfg.n_max, frozen=0))
    v = convergence_verdict(tr)
    assert v.persistent_gradient == [0]
    assert v.cost_converged and not v.passed


def test_suites_small():
    assert gradient_check(configs=30)["passed"]
    assert surrogate_bound_check(pairs=100)["passed"]
