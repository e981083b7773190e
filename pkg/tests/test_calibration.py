import math

import pytest

from multicusum.calibration import (CalibrationResult, McParams, Method, asymptotic_h, calibrate_h_mc,
                                    f_cusum, false_alarm_curve, solve_nu)
from multicusum.engine import BudgetExceeded
from multicusum.sde import Constant


def test_f_values():
    assert f_cusum(0.0) == 0.0
    assert f_cusum(1.0) == pytest.approx(math.e - 2, rel=1e-14)
    assert f_cusum(-2.0) == pytest.approx(math.exp(-2) + 1, rel=1e-14)
    assert f_cusum(1e-6) == pytest.approx(5e-13, rel=1e-6)
    assert f_cusum(-0.001) == pytest.approx(0.001**2 / 2, rel=0.01)
    with pytest.raises(ValueError):
        f_cusum(math.inf)


def test_solve_nu_examples():
    assert solve_nu(math.e - 2).threshold == pytest.approx(1.0, abs=1e-9)
    nu = solve_nu(1e6).threshold
    ref = 0.0
    for _ in range(60):
        ref = math.log(1e6 + ref + 1)
    assert abs(nu - ref) < 1e-6
    assert solve_nu(1e-8).threshold == pytest.approx(math.sqrt(2e-8), rel=0.01)
    with pytest.raises(ValueError):
        solve_nu(0.0)


def test_solve_nu_tolerance_and_method():
    for g in (1e-3, 0.5, 4.389, 1e3, 1e8):
        r = solve_nu(g)
        assert abs(f_cusum(r.threshold) - g) <= 1e-10 * max(1.0, g)
        assert r.method is Method.EXACT_ONE_SENSOR and r.threshold > 0


def test_asymptotic_examples():
    assert asymptotic_h(math.exp(3), 1) == pytest.approx(3.0)
    assert asymptotic_h(1000, 2) == pytest.approx(7.6009, abs=1e-4)
    assert asymptotic_h(1000, 4) == pytest.approx(8.294, abs=1e-3)
    with pytest.raises(ValueError):
        asymptotic_h(10, 0)


def test_asymptotic_converges_to_exact_for_one_sensor():
    diffs = [abs(asymptotic_h(g, 1) - solve_nu(g).threshold) for g in (1e3, 1e4, 1e5)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 0.01


def test_mc_one_sensor_recovers_exact_threshold():
    gamma = math.exp(2) - 3
    r = calibrate_h_mc(gamma, 1, Constant(1.0), McParams(replications=20_000, dt=0.01, seed=1, n_levels=121))
    assert r.method is Method.MONTE_CARLO
    assert abs(r.threshold - 2.0) < 3 * r.threshold_se
    assert abs(r.gamma_achieved - gamma) < 3 * r.gamma_se + 1e-9


def test_mc_two_sensor_threshold_near_asymptote():
    r = calibrate_h_mc(1000.0, 2, Constant(1.0), McParams(dt=0.25, seed=2))
    assert abs(r.threshold - asymptotic_h(1000, 2)) < 0.15
    assert r.censored == 0 and r.replications >= 10_000


def test_false_alarm_energy_increases_with_threshold():
    run = false_alarm_curve(2, Constant(1.0), [3.0, 3.5], McParams(replications=3000, dt=0.05, seed=3))
    means = run.e_model[~(run.step < 0).any(axis=1)].mean(axis=0)
    assert means[1] > means[0]
    # common random numbers: pathwise monotone
    assert (run.e_model[:, 1] >= run.e_model[:, 0]).all()


def test_budget_exceeded_carries_partial():
    with pytest.raises(BudgetExceeded) as info:
        calibrate_h_mc(50.0, 2, Constant(1.0), McParams(replications=100, dt=0.25, max_replications=150,
                                                         se_rel_target=0.001, n_levels=41))
    assert isinstance(info.value.partial, CalibrationResult)


def test_result_serializes():
    d = solve_nu(10.0).to_dict()
    assert d["method"] == "ExactOneSensor" and d["gamma_target"] == 10.0
