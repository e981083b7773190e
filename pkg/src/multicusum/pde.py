"""Finite-difference checks of the exit-energy asymptotics for two CUSUM statistics.

Coordinates are rescaled to the unit square with ``epsilon = 1/h``. Walls at
0 reflect (zero normal derivative, imposed with a mirrored ghost node) and
walls at 1 absorb (value 0). The mean exit energy of the pre-change pair is

    eps*T_xx + eps*T_yy - T_x - T_y = -1,

and with the first sensor post-change the x-advection flips sign (``S``).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .io import write_csv

DIRECT_LIMIT = 512


class Problem(str, enum.Enum):
    MEAN_EXIT_NO_CHANGE = "MeanExitNoChange"
    MEAN_EXIT_ONE_CHANGED = "MeanExitOneChanged"


@dataclass(frozen=True)
class Grid2D:
    """Uniform grid on the unit square; node ``n_cells`` on each axis is the absorbing wall."""

    epsilon: float
    n_cells: int

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.n_cells < 32:
            raise ValueError(f"n_cells must be >= 32, got {self.n_cells}")
        if self.spacing > self.epsilon / 5.0 + 1e-15:
            raise ValueError(
                f"spacing {self.spacing:.4g} does not resolve the boundary layer; need <= epsilon/5 "
                f"= {self.epsilon / 5:.4g} (n_cells >= {math.ceil(5 / self.epsilon)})")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_cells + 1)

    @classmethod
    def resolved(cls, epsilon: float, cells_per_layer: int = 32, minimum: int = 32) -> "Grid2D":
        """Grid with spacing ``<= epsilon / cells_per_layer``."""
        return cls(epsilon, max(minimum, math.ceil(cells_per_layer / epsilon)))


@dataclass
class PdeSolution:
    grid: Grid2D
    field: np.ndarray  # (n+1, n+1), indexed [x, y], absorbing walls included
    corner_value: float
    residual_norm: float
    problem: Problem
    scheme: str

    def to_csv(self, path, comment: str | None = None) -> None:
        x = self.grid.nodes
        rows = ((x[i], x[j], self.field[i, j]) for i in range(x.size) for j in range(x.size))
        write_csv(path, ["x", "y", "value"], rows, comment=comment)


def operator_1d(epsilon: float, n_cells: int, drift: float, scheme: str = "central") -> sp.csr_matrix:
    """``eps*u'' + drift*u'`` on nodes ``0..n-1`` with a mirrored ghost at 0 and ``u_n = 0``."""
    if scheme not in ("central", "upwind"):
        raise ValueError(f"unknown scheme {scheme!r}")
    n = n_cells
    d = 1.0 / n
    diff = epsilon / d ** 2
    if scheme == "central":
        lower = np.full(n, diff - drift / (2 * d))
        upper = np.full(n, diff + drift / (2 * d))
        main = np.full(n, -2.0 * diff)
    else:
        lower = np.full(n, diff + max(-drift, 0.0) / d)
        upper = np.full(n, diff + max(drift, 0.0) / d)
        main = np.full(n, -2.0 * diff - abs(drift) / d)
    # ghost u_{-1} = u_1 folds the lower coefficient of row 0 onto u_1
    upper0 = upper[0] + lower[0]
    rows = np.concatenate([np.arange(n), np.arange(1, n), np.arange(n - 1)])
    cols = np.concatenate([np.arange(n), np.arange(n - 1), np.arange(1, n)])
    up = upper[:-1].copy()
    up[0] = upper0
    vals = np.concatenate([main, lower[1:], up])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _solve(grid: Grid2D, drift_x: float, drift_y: float, problem: Problem, scheme: str) -> PdeSolution:
    n = grid.n_cells
    ax = operator_1d(grid.epsilon, n, drift_x, scheme)
    ay = operator_1d(grid.epsilon, n, drift_y, scheme)
    eye = sp.identity(n, format="csr")
    a = (sp.kron(ax, eye) + sp.kron(eye, ay)).tocsc()
    rhs = -np.ones(n * n)
    if n <= DIRECT_LIMIT:
        sol = spla.spsolve(a, rhs)
    else:
        ilu = spla.spilu(a, drop_tol=1e-6, fill_factor=20)
        pre = spla.LinearOperator(a.shape, ilu.solve)
        sol, info = spla.gmres(a, rhs, M=pre, rtol=1e-13, atol=0.0, restart=200, maxiter=2000)
        if info != 0:
            raise ArithmeticError(f"iterative solve did not converge (info={info}, n_cells={n})")
    residual = float(np.max(np.abs(a @ sol - rhs)))
    if not np.all(np.isfinite(sol)) or residual >= 1e-8 * n * n:
        raise ArithmeticError(
            f"linear solve failed: residual {residual:.3e}, n_cells={n}, epsilon={grid.epsilon}, "
            f"Peclet {grid.spacing / (2 * grid.epsilon):.3g}")
    field = np.zeros((n + 1, n + 1))
    field[:n, :n] = sol.reshape(n, n)
    return PdeSolution(grid, field, float(field[0, 0]), residual, problem, scheme)


def solve_T(grid: Grid2D, scheme: str = "central") -> PdeSolution:
    """Mean exit energy (rescaled) with neither sensor changed."""
    return _solve(grid, -1.0, -1.0, Problem.MEAN_EXIT_NO_CHANGE, scheme)


def solve_S(grid: Grid2D, scheme: str = "central") -> PdeSolution:
    """Mean exit energy (rescaled) with the first sensor changed."""
    return _solve(grid, 1.0, -1.0, Problem.MEAN_EXIT_ONE_CHANGED, scheme)


def solve_drifts(grid: Grid2D, drift_x: float, drift_y: float, scheme: str = "central") -> PdeSolution:
    """Same boundary-value problem with arbitrary advection coefficients."""
    return _solve(grid, drift_x, drift_y, Problem.MEAN_EXIT_NO_CHANGE, scheme)


def asymptote_T(epsilon: float, n_sensors: int = 2) -> float:
    return epsilon * math.exp(1.0 / epsilon) / n_sensors


def asymptote_S(epsilon: float) -> float:
    return 1.0 - epsilon


def epsilon_for_gamma(gamma: float, n_sensors: int = 2) -> float:
    """``epsilon`` with ``asymptote_T(epsilon, N) / epsilon == gamma``, i.e. ``1/log(N*gamma)``."""
    if gamma * n_sensors <= 1.0:
        raise ValueError("need N * gamma > 1")
    return 1.0 / math.log(n_sensors * gamma)


def _survival_rhs(epsilon: float, drifts: Sequence[float], n_cells: int, scheme: str):
    ops = [operator_1d(epsilon, n_cells, s, scheme) for s in drifts]
    k = len(drifts)
    n = n_cells
    # last component accumulates the product of the curves at x = 0
    big = sp.block_diag(ops + [sp.csr_matrix((1, 1))], format="csr")

    def rhs(_t, g):
        out = big @ g
        out[-1] = np.prod(g[0:k * n:n])
        return out

    pattern = big.tolil()
    for c in range(k):
        pattern[k * n, c * n] = 1.0
    return rhs, pattern.tocsr(), k * n + 1


def _integrate(epsilon: float, drifts: Sequence[float], t_grid, n_cells: int, scheme: str):
    rhs, pattern, size = _survival_rhs(epsilon, drifts, n_cells, scheme)
    g0 = np.ones(size)
    g0[-1] = 0.0
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 2 or t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing and start at 0")
    res = solve_ivp(rhs, (0.0, float(t_grid[-1])), g0, method="BDF", t_eval=t_grid,
                    rtol=1e-8, atol=1e-12, jac_sparsity=pattern)
    if not res.success:
        raise ArithmeticError(f"time integration failed: {res.message}")
    return res.y


def survival_1d(epsilon: float, drift_sign: int, t_grid, n_cells: int | None = None,
                scheme: str = "central") -> np.ndarray:
    """Probability that the rescaled 1-D statistic started at 0 has not been absorbed by ``t``.

    Solves ``G_t = eps*G_xx + drift_sign*G_x`` from ``G = 1`` by the method of lines.
    """
    if drift_sign not in (-1, 1):
        raise ValueError("drift_sign must be -1 or +1")
    n = n_cells or Grid2D.resolved(epsilon).n_cells
    y = _integrate(epsilon, [float(drift_sign)], t_grid, n, scheme)
    return y[0]


def fit_tail_rate(t: np.ndarray, g: np.ndarray, start_fraction: float = 0.5,
                  floor: float = 1e-12) -> float:
    """Exponential decay rate from a least-squares line through ``log g`` on the tail window."""
    t = np.asarray(t, dtype=float)
    g = np.asarray(g, dtype=float)
    mask = (t >= start_fraction * t[-1]) & (g > floor)
    if mask.sum() < 3:
        raise ValueError("tail window holds fewer than 3 usable points")
    slope = np.polyfit(t[mask], np.log(g[mask]), 1)[0]
    return float(-slope)


def tail_rate_asymptote(epsilon: float) -> float:
    return math.exp(-1.0 / epsilon) / epsilon


def default_horizon(epsilon: float, multiple: float = 40.0) -> float:
    """Time after which a reflecting-wall survival product is negligible."""
    return multiple * epsilon * math.exp(1.0 / epsilon)


@dataclass
class ProductReport:
    epsilon: float
    n_cells: int
    t_max: float
    product_T: float
    corner_T: float
    product_S: float
    corner_S: float
    in_regime: bool

    @property
    def rel_err_T(self) -> float:
        return abs(self.product_T - self.corner_T) / self.corner_T

    @property
    def rel_err_S(self) -> float:
        return abs(self.product_S - self.corner_S) / self.corner_S

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon, "n_cells": self.n_cells, "t_max": self.t_max,
            "product_T": self.product_T, "corner_T": self.corner_T, "rel_err_T": self.rel_err_T,
            "product_S": self.product_S, "corner_S": self.corner_S, "rel_err_S": self.rel_err_S,
            "in_asymptotic_regime": self.in_regime,
        }


def product_integral(epsilon: float, drifts: Sequence[float], t_max: float, n_cells: int,
                     scheme: str = "central") -> float:
    """``int_0^t_max prod_k G_k(0, t) dt`` for 1-D survival curves with the given drifts."""
    y = _integrate(epsilon, drifts, [0.0, t_max], n_cells, scheme)
    return float(y[-1, -1])


def product_check(epsilon: float, t_max: float | None = None, n_cells: int | None = None,
                  scheme: str = "central") -> ProductReport:
    """Compare time integrals of products of 1-D survival curves with the 2-D corner values.

    Both drifts negative reproduce ``solve_T``; one positive and one negative
    reproduce ``solve_S``. Values of ``epsilon`` above 0.25 are reported but
    flagged as outside the asymptotic regime.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    n = n_cells or max(64, math.ceil(32 / epsilon))
    t_max = t_max or default_horizon(epsilon)
    pt = product_integral(epsilon, [-1.0, -1.0], t_max, n, scheme)
    ps = product_integral(epsilon, [1.0, -1.0], t_max, n, scheme)
    grid = Grid2D(epsilon, n)
    return ProductReport(epsilon, n, t_max, pt, solve_T(grid, scheme).corner_value,
                         ps, solve_S(grid, scheme).corner_value, epsilon <= 0.25)


@dataclass(frozen=True)
class SweepRow:
    problem: Problem
    epsilon: float
    n_cells: int
    corner: float
    asymptote: float

    @property
    def rel_err(self) -> float:
        return abs(self.corner / self.asymptote - 1.0)

    def as_row(self) -> tuple:
        return (self.problem.value, self.epsilon, self.n_cells, self.corner, self.asymptote, self.rel_err)


SWEEP_COLUMNS = ["problem", "epsilon", "n_cells", "corner", "asymptote", "rel_err"]


def sweep(epsilons: Sequence[float], problem: Problem = Problem.MEAN_EXIT_NO_CHANGE,
          cells_per_layer: int = 32, scheme: str = "central", n_sensors: int = 2) -> list[SweepRow]:
    """Corner value against its closed-form asymptote at fixed ``spacing / epsilon``."""
    rows = []
    for eps in epsilons:
        grid = Grid2D.resolved(eps, cells_per_layer)
        if problem is Problem.MEAN_EXIT_NO_CHANGE:
            sol = solve_T(grid, scheme)
            ref = asymptote_T(eps, n_sensors)
        else:
            sol = solve_S(grid, scheme)
            ref = asymptote_S(eps)
        rows.append(SweepRow(problem, eps, grid.n_cells, sol.corner_value, ref))
    return rows
