"""Threshold calibration from a false-alarm energy target ``gamma``."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .engine import CENSOR_LIMIT, BudgetExceeded, RunResult, Scenario, run_replications
from .sde import Constant, DriftModel


class Method(str, enum.Enum):
    EXACT_ONE_SENSOR = "ExactOneSensor"
    ASYMPTOTIC_N = "AsymptoticN"
    MONTE_CARLO = "MonteCarloRootFind"


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    gamma_target: float
    gamma_achieved: float
    method: Method
    gamma_se: float = 0.0
    threshold_se: float = 0.0
    replications: int = 0
    censored: int = 0

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "gamma_target": self.gamma_target,
            "gamma_achieved": self.gamma_achieved,
            "gamma_se": self.gamma_se,
            "threshold_se": self.threshold_se,
            "method": self.method.value,
            "replications": self.replications,
            "censored": self.censored,
        }


def f_cusum(nu: float) -> float:
    """``e^nu - nu - 1``; a short series is used near 0 to avoid cancellation."""
    if not math.isfinite(nu):
        raise ValueError(f"non-finite argument {nu}")
    if abs(nu) < 0.1:
        term = nu * nu / 2.0
        total = term
        for k in range(3, 20):
            term *= nu / k
            total += term
        return total
    if nu > 709.0:
        return math.inf
    return math.expm1(nu) - nu


def solve_nu(gamma: float) -> CalibrationResult:
    """Positive root of ``f_cusum(nu) = gamma`` (one-sensor false-alarm energy)."""
    if not (gamma > 0 and math.isfinite(gamma)):
        raise ValueError(f"gamma must be finite and > 0, got {gamma}")
    # f(x) >= x^2/2 for x > 0, and log(gamma+1)+1 also overshoots; take the tighter
    hi = max(min(math.sqrt(2.0 * gamma), math.log(gamma + 1.0) + 1.0), 1e-300)
    while f_cusum(hi) < gamma:
        hi *= 2.0
    lo = 0.0
    tol = 1e-10 * max(1.0, gamma)
    nu = brentq(lambda x: f_cusum(x) - gamma, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish: f'(nu) = e^nu - 1
    for _ in range(3):
        g = f_cusum(nu) - gamma
        if abs(g) <= tol * 1e-3:
            break
        d = math.expm1(nu)
        if d <= 0:
            break
        nu = nu - g / d
    achieved = f_cusum(nu)
    if abs(achieved - gamma) > tol:
        raise ArithmeticError(f"solve_nu failed to converge for gamma={gamma}")
    return CalibrationResult(nu, gamma, achieved, Method.EXACT_ONE_SENSOR)


def asymptotic_h(gamma: float, n_sensors: int) -> float:
    """Large-``gamma`` multi-chart threshold ``log gamma + log N``."""
    if n_sensors < 1:
        raise ValueError("n_sensors must be >= 1")
    return math.log(gamma) + math.log(n_sensors)


@dataclass(frozen=True)
class McParams:
    """Budget and discretization for Monte Carlo calibration.

    The false-alarm energy curve is recorded on ``n_levels`` thresholds between
    ``center - span_below`` and ``center + span_above`` in one pass, where
    ``center`` solves ``f_cusum(h) = N * gamma``. The upper end grows in steps of
    0.5 up to ``center + max_span`` when the target lies above it.
    """

    replications: int = 10_000
    dt: float = 0.25
    seed: int = 0
    horizon: float | None = None
    max_doublings: int = 20
    span_below: float = 2.0
    span_above: float = 0.3
    max_span: float = 2.0
    n_levels: int = 201
    se_rel_target: float = 0.02
    max_replications: int = 80_000
    threads: int | None = None
    bridge: bool = True


def _level_means(run: RunResult) -> tuple[np.ndarray, np.ndarray]:
    e = run.e_model
    cens = run.step < 0
    counts = (~cens).sum(axis=0)
    means = np.where(counts > 0, np.nansum(np.where(cens, 0.0, e), axis=0) / np.maximum(counts, 1), np.nan)
    return means, cens.mean(axis=0)


def false_alarm_curve(n_sensors: int, model: DriftModel, levels, mc: McParams,
                      reps: range | None = None) -> RunResult:
    """No-change runs recording stopping energies at every level (common random numbers)."""
    sc = Scenario.no_change(n_sensors, model=model, threshold=float(np.max(levels)), dt=mc.dt,
                            horizon=mc.horizon, replications=max(mc.replications, 2), seed=mc.seed,
                            max_doublings=mc.max_doublings, bridge=mc.bridge)
    return run_replications(sc, levels=levels, reps=reps, threads=mc.threads)


def _root_on_curve(levels, means, gamma):
    logm = np.log(means)
    target = math.log(gamma)

    def g(h):
        return float(np.interp(h, levels, logm)) - target

    return brentq(g, levels[0], levels[-1], xtol=1e-12)


def _samples_at(run: RunResult, h: float) -> tuple[np.ndarray, int]:
    lv = run.levels
    j = int(np.clip(np.searchsorted(lv, h) - 1, 0, lv.size - 2))
    w = (h - lv[j]) / (lv[j + 1] - lv[j])
    cens = (run.step[:, j] < 0) | (run.step[:, j + 1] < 0)
    vals = (1 - w) * run.e_model[:, j] + w * run.e_model[:, j + 1]
    return vals[~cens], int(cens.sum())


def calibrate_h_mc(gamma: float, n_sensors: int, model: DriftModel = Constant(1.0),
                   mc: McParams = McParams()) -> CalibrationResult:
    """Threshold ``h`` whose Monte Carlo mean false-alarm energy equals ``gamma``.

    All candidate thresholds share the same replications, so the estimated
    curve is monotone in ``h`` and the root is found deterministically on it.
    Replications are doubled until the relative standard error of the achieved
    ``gamma`` meets ``mc.se_rel_target``; otherwise :class:`BudgetExceeded` is
    raised with the partial result attached.
    """
    if not (gamma > 0 and math.isfinite(gamma)):
        raise ValueError(f"gamma must be finite and > 0, got {gamma}")
    center = solve_nu(gamma * n_sensors).threshold
    lo = max(center - mc.span_below, 1e-3)
    hi = center + mc.span_above
    reps = mc.replications
    run = None
    while True:
        levels = np.linspace(lo, hi, mc.n_levels)
        if run is None or not np.array_equal(run.levels, levels):
            run = false_alarm_curve(n_sensors, model, levels, mc, reps=range(reps))
        means, cens_frac = _level_means(run)
        if means[-1] < gamma and hi < center + mc.max_span - 1e-12:
            hi = min(hi + 0.5, center + mc.max_span)
            run = None
            continue
        if means[0] > gamma and lo > 1e-3:
            lo = max(lo - 1.0, 1e-3)
            run = None
            continue
        if not (means[0] <= gamma <= means[-1]):
            raise BudgetExceeded(f"gamma={gamma} not bracketed by thresholds [{lo:.3f}, {hi:.3f}]")
        h = _root_on_curve(levels, means, gamma)
        vals, n_cens = _samples_at(run, h)
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
        j = int(np.clip(np.searchsorted(levels, h) - 1, 0, levels.size - 2))
        slope = (means[j + 1] - means[j]) / (levels[j + 1] - levels[j])
        result = CalibrationResult(h, gamma, mean, Method.MONTE_CARLO, se,
                                   se / slope if slope > 0 else math.inf, run.replications, n_cens)
        if n_cens / run.replications >= CENSOR_LIMIT:
            raise BudgetExceeded("too many censored replications", partial=result)
        if se <= mc.se_rel_target * mean:
            return result
        if 2 * reps > mc.max_replications:
            raise BudgetExceeded(
                f"relative SE {se / mean:.4f} above target {mc.se_rel_target} with {reps} replications",
                partial=result)
        extra = false_alarm_curve(n_sensors, model, levels, mc, reps=range(reps, 2 * reps))
        run = run.concat(extra)
        reps *= 2
