import math

import numpy as np
import pytest

from multicusum import pde
from multicusum.io import read_csv


def test_grid_invariants():
    with pytest.raises(ValueError):
        pde.Grid2D(0.2, 16)
    with pytest.raises(ValueError):
        pde.Grid2D(0.1, 40)  # spacing 0.025 > eps/5
    with pytest.raises(ValueError):
        pde.Grid2D(1.2, 64)
    assert pde.Grid2D.resolved(0.125).n_cells == 256


def test_asymptote_values():
    assert pde.asymptote_T(0.2, 2) == pytest.approx(0.1 * math.exp(5))
    assert pde.asymptote_T(0.2, 2) == pytest.approx(14.841, abs=1e-3)
    assert pde.asymptote_T(0.3, 1) == pytest.approx(2 * pde.asymptote_T(0.3, 2))
    assert pde.asymptote_S(0.1) == pytest.approx(0.9)
    eps = pde.epsilon_for_gamma(1000, 2)
    assert pde.asymptote_T(eps, 2) / eps == pytest.approx(1000)
    assert 1 / eps == pytest.approx(math.log(2000), abs=1e-12)
    assert 1 / eps == pytest.approx(7.601, abs=1e-3)


def test_T_corner_band():
    sol = pde.solve_T(pde.Grid2D(0.2, 256))
    assert 0.8 <= sol.corner_value / (0.5 * 0.2 * math.exp(5)) <= 1.2
    assert sol.residual_norm < 1e-8 * 256**2


def test_T_refinement_converges():
    c = [pde.solve_T(pde.Grid2D(0.25, n)).corner_value for n in (128, 256, 512)]
    d1, d2 = abs(c[1] - c[0]), abs(c[2] - c[1])
    assert d1 / d2 >= 1.8


def test_S_corner_band_and_trend():
    assert 0.85 <= pde.solve_S(pde.Grid2D(0.1, 512)).corner_value <= 0.95
    gaps = [abs(r.corner - r.asymptote) for r in pde.sweep([0.25, 0.2, 0.15, 0.1], pde.Problem.MEAN_EXIT_ONE_CHANGED)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_drift_toward_absorbing_walls_exits_fast():
    g = pde.Grid2D(0.2, 64)
    assert pde.solve_drifts(g, 1.0, 1.0).corner_value < 0.1 * pde.solve_T(g).corner_value


def test_field_properties():
    sol = pde.solve_T(pde.Grid2D(0.25, 64))
    f = sol.field
    assert np.all(f[-1, :] == 0) and np.all(f[:, -1] == 0)
    assert np.all(f[:-1, :-1] > 0)
    assert np.all(np.diff(f, axis=0) <= 1e-12) and np.all(np.diff(f, axis=1) <= 1e-12)
    assert sol.corner_value == f[0, 0]
    s = pde.solve_S(pde.Grid2D(0.25, 64)).field
    assert np.all(s >= 0) and np.all(s[:-1, :-1] > 0)


def test_reflecting_wall_is_symmetric_extension():
    # with the mirrored ghost node the discrete operator at x=0 sees u_{-1} = u_1,
    # so a field built from even functions has zero centered derivative there
    a = pde.operator_1d(0.2, 64, -1.0).toarray()
    d = 1 / 64
    assert a[0, 1] == pytest.approx(2 * 0.2 / d**2)
    assert a[0, 0] == pytest.approx(-2 * 0.2 / d**2)


def test_upwind_option_is_first_order():
    exact = pde.solve_T(pde.Grid2D(0.2, 512)).corner_value
    up = [abs(pde.solve_T(pde.Grid2D(0.2, n), scheme="upwind").corner_value - exact) for n in (64, 128)]
    assert 1.6 < up[0] / up[1] < 2.6
    with pytest.raises(ValueError):
        pde.solve_T(pde.Grid2D(0.2, 64), scheme="spectral")


def test_survival_toward_absorbing_wall_is_step_like():
    eps = 0.1
    r = math.sqrt(eps)
    g = pde.survival_1d(eps, 1, [0.0, 1 - 2 * r, 1.0, 1 + 3 * r])
    assert g[0] == 1.0 and g[1] > 0.95 and g[3] < 0.05
    assert np.all(np.diff(g) <= 0)
    total = pde.product_integral(eps, [1.0], 20.0, pde.Grid2D.resolved(eps).n_cells)
    assert total == pytest.approx(1 - eps, rel=0.05)


def test_survival_input_validation():
    with pytest.raises(ValueError):
        pde.survival_1d(0.2, 0, [0.0, 1.0])
    with pytest.raises(ValueError):
        pde.survival_1d(0.2, 1, [1.0, 2.0])


def test_tail_rate_fit_on_exact_exponential():
    t = np.linspace(0, 100, 501)
    assert pde.fit_tail_rate(t, 3 * np.exp(-0.07 * t)) == pytest.approx(0.07, rel=1e-10)
    with pytest.raises(ValueError):
        pde.fit_tail_rate(t[:2], np.ones(2))


def test_product_check_outside_regime_still_reports():
    rep = pde.product_check(0.45)
    assert not rep.in_regime
    assert math.isfinite(rep.rel_err_T) and math.isfinite(rep.rel_err_S)
    assert pde.product_check(0.2).in_regime


def test_field_dump(tmp_path):
    sol = pde.solve_S(pde.Grid2D(0.25, 32))
    sol.to_csv(tmp_path / "f.csv", comment="eps=0.25")
    rows = read_csv(tmp_path / "f.csv")
    assert len(rows) == 33 * 33 and list(rows[0]) == ["x", "y", "value"]
    assert float(rows[0]["value"]) == sol.corner_value
