"""Property-based checks of the structural invariants."""
import json
import math

import numpy as np
from hypothesis import assume, given, settings, strategies as st

from multicusum import pde
from multicusum.calibration import f_cusum, solve_nu
from multicusum.detector import CusumState, cusum_step, run_multichart, run_single_cusum, statistic_paths
from multicusum.engine import Scenario, run_replications
from multicusum.io import dumps, fmt
from multicusum.sde import Constant, CoupledAutoregressive, SimConfig, change_index, simulate_paths

seeds = st.integers(0, 2**64 - 1)
models = st.sampled_from([Constant(1.0), Constant(-0.7), CoupledAutoregressive(0.5)])
taus = st.one_of(st.just(math.inf), st.floats(0.0, 3.0))

FAST = settings(max_examples=60, deadline=None)


@FAST
@given(seed=seeds, n=st.integers(1, 3), data=st.data())
def test_paths_deterministic_and_consistent(seed, n, data):
    tau = tuple(data.draw(taus) for _ in range(n))
    cfg = SimConfig(n, 0.02, 3.0, tau, seed=seed)
    model = data.draw(models)
    a, b = simulate_paths(cfg, model), simulate_paths(cfg, model)
    assert a.z.tobytes() == b.z.tobytes()
    assert np.array_equal(a.z[1:], a.z[:-1] + a.dz)
    for i, t in enumerate(tau):
        k = min(change_index(t, 0.02), a.alpha.shape[0])
        assert np.all(a.alpha[:k, i] == 0)


@FAST
@given(seed=seeds, n=st.integers(1, 3), model=models, bridge=st.booleans(), y0=st.floats(0, 2))
def test_statistic_is_reflected_and_nonnegative(seed, n, model, bridge, y0):
    p = simulate_paths(SimConfig(n, 0.01, 2.0, (0.0,) * n, seed=seed), model)
    y, ysup, _ = statistic_paths(p, model, bridge=bridge, y0=y0)
    assert np.all(y >= 0) and np.all(ysup >= y[1:])
    assert np.all(y[0] == y0)


@settings(max_examples=200, deadline=None)
@given(u=st.floats(-5, 5), m=st.floats(-5, 0), dz=st.floats(-3, 3), a=st.floats(-3, 3), dt=st.floats(1e-4, 1))
def test_step_invariants(u, m, dz, a, dt):
    assume(m <= u)
    s = cusum_step(CusumState(u, m, u - m), dz, a, dt)
    assert s.m <= s.u and s.m <= m
    assert s.y >= 0 and s.y == s.u - s.m
    assert (s.y == 0) == (s.u <= m)


@FAST
@given(seed=seeds, n=st.integers(1, 4), h=st.floats(0.1, 4.0), dh=st.floats(0, 3), bridge=st.booleans())
def test_multichart_is_min_and_monotone(seed, n, h, dh, bridge):
    model = Constant(1.0)
    p = simulate_paths(SimConfig(n, 0.01, 5.0, (0.0,) + (math.inf,) * (n - 1), seed=seed), model)
    multi = run_multichart(p, model, h, bridge=bridge)
    singles = [run_single_cusum(p, model, h, sensor=i, bridge=bridge) for i in range(n)]
    times = [s.stop_time for s in singles if s.stopped]
    assert multi.stopped == bool(times)
    if times:
        assert multi.stop_time == min(times)
        assert all(multi.stop_time <= s.stop_time for s in singles if s.stopped)
    later = run_multichart(p, model, h + dh, bridge=bridge)
    if later.stopped:
        assert multi.stopped and multi.stop_time <= later.stop_time


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32), split=st.integers(1, 39), n=st.integers(1, 3))
def test_replication_batching_is_irrelevant(seed, split, n):
    sc = Scenario.worst_case(n, threshold=1.5, dt=0.01, replications=40, seed=seed)
    whole = run_replications(sc, threads=1)
    parts = run_replications(sc, reps=range(split), threads=1).concat(
        run_replications(sc, reps=range(split, 40), threads=1))
    assert whole.step.tobytes() == parts.step.tobytes()
    assert whole.e_model.tobytes() == parts.e_model.tobytes()


@settings(max_examples=300, deadline=None)
@given(x=st.floats(-30, 30), y=st.floats(-30, 30))
def test_f_positive_and_convex(x, y):
    assume(abs(x) > 1e-12)
    assert f_cusum(x) > 0
    mid = f_cusum((x + y) / 2)
    assert f_cusum(x) + f_cusum(y) >= 2 * mid - 1e-9 * (1 + abs(mid))


@settings(max_examples=300, deadline=None)
@given(nu=st.floats(1e-3, 20))
def test_solve_nu_inverts_f(nu):
    assert abs(solve_nu(f_cusum(nu)).threshold - nu) <= 1e-8 * max(1, nu)


@settings(max_examples=8, deadline=None)
@given(eps=st.floats(0.15, 0.6), problem=st.sampled_from(["T", "S"]))
def test_discrete_maximum_principle(eps, problem):
    grid = pde.Grid2D(eps, max(32, math.ceil(8 / eps)))
    sol = (pde.solve_T if problem == "T" else pde.solve_S)(grid)
    f = sol.field
    assert np.all(f[:-1, :-1] > 0)
    assert np.all(f[-1] == 0) and np.all(f[:, -1] == 0)
    if problem == "T":
        assert np.all(np.diff(f, axis=0) <= 1e-12) and np.all(np.diff(f, axis=1) <= 1e-12)


@settings(max_examples=300)
@given(x=st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trips(x):
    assert float(fmt(x)) == x
    assert json.loads(dumps({"v": x}))["v"] == x
