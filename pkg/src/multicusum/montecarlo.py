"""Monte Carlo estimates of detection delay, false-alarm energy, the equalizer
property and the multi-chart excess delay over the one-sensor CUSUM."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .calibration import CalibrationResult, McParams, calibrate_h_mc, f_cusum, solve_nu
from .engine import Estimate, Scenario, estimate_from_run, run_replications
from .sde import Constant, DriftModel


def estimate_delay(scenario: Scenario, threads: int | None = None) -> Estimate:
    """Mean criterion energy from the change to the multi-chart stop.

    With a single changed sensor this is ``0.5 * int alpha^2`` of that sensor;
    with several it is the sensor-averaged energy counted from each change point.
    """
    if not scenario.finite_changes:
        raise ValueError("delay scenario needs at least one finite change point")
    run = run_replications(scenario, threads=threads)
    return estimate_from_run(run, kind="delay")


def estimate_false_alarm(scenario: Scenario, threads: int | None = None) -> Estimate:
    """Mean ``0.5 * mean_i int alpha_i^2`` to the stop when no sensor ever changes."""
    if scenario.finite_changes:
        raise ValueError("false-alarm scenario must have every change point at inf")
    run = run_replications(scenario, threads=threads)
    return estimate_from_run(run, kind="false_alarm")


@dataclass
class EqualizerReport:
    estimates: list[Estimate]
    max_abs_diff: float
    pairs: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    # (i, j, diff, pooled_se, welch_p)

    @property
    def max_z(self) -> float:
        return max(abs(d) / se for _, _, d, se, _ in self.pairs)

    @property
    def equal(self) -> bool:
        """True when every pairwise difference is below 3 pooled standard errors."""
        return all(abs(d) < 3.0 * se for _, _, d, se, _ in self.pairs)

    def to_dict(self) -> dict:
        return {
            "estimates": [e.to_dict() for e in self.estimates],
            "max_abs_diff": self.max_abs_diff,
            "pairs": [{"i": i, "j": j, "diff": d, "pooled_se": se, "welch_p": p}
                      for i, j, d, se, p in self.pairs],
            "equal": self.equal,
        }


def equalizer_test(base: Scenario, sensors: Sequence[int] | None = None,
                   threads: int | None = None) -> EqualizerReport:
    """Worst-case delay with the change placed in each sensor in turn.

    ``base`` supplies everything except the change points; each placement runs
    on its own random stream. Pairs are compared with Welch's t-test.
    """
    n = base.n_sensors
    sensors = list(range(n)) if sensors is None else list(sensors)
    ests = []
    for i in sensors:
        taus = [math.inf] * n
        taus[i] = 0.0
        sc = replace(base, change_points=tuple(taus), stream=base.stream * 1000 + i + 1)
        ests.append(estimate_delay(sc, threads=threads))
    pairs = []
    for a, b in itertools.combinations(range(len(sensors)), 2):
        ea, eb = ests[a], ests[b]
        diff = ea.mean - eb.mean
        pooled = math.hypot(ea.std_error, eb.std_error)
        p = stats.ttest_ind(ea.samples, eb.samples, equal_var=False).pvalue
        pairs.append((sensors[a], sensors[b], diff, pooled, float(p)))
    return EqualizerReport(ests, max(abs(p[2]) for p in pairs), pairs)


@dataclass(frozen=True)
class GapRow:
    gamma: float
    n_sensors: int
    nu: float
    delay_one_sensor: float
    h: float
    h_se: float
    delay: Estimate
    gap: float
    gap_se: float

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma, "N": self.n_sensors, "nu": self.nu,
            "f_neg_nu": self.delay_one_sensor, "h": self.h, "h_se": self.h_se,
            "delay": self.delay.mean, "delay_se": self.delay.std_error,
            "reps": self.delay.replications_used, "censored": self.delay.censored_count,
            "gap": self.gap, "gap_se": self.gap_se, "log_N": math.log(self.n_sensors),
        }


def delay_at(h: float, n_sensors: int, model: DriftModel, dt: float, replications: int,
             seed: int, threads: int | None = None, dh: float = 0.05) -> tuple[Estimate, float]:
    """Worst-case delay at ``h`` and its slope in ``h`` (common random numbers)."""
    sc = Scenario.worst_case(n_sensors, model=model, threshold=h, dt=dt,
                             replications=replications, seed=seed, stream=7)
    levels = [max(h - dh, 1e-6), h, h + dh]
    run = run_replications(sc, levels=levels, threads=threads)
    lo, mid, hi = (estimate_from_run(run, j, "delay") for j in range(3))
    return mid, (hi.mean - lo.mean) / (levels[2] - levels[0])


def excess_delay_table(gammas: Sequence[float], n_sensors: int, model: DriftModel = Constant(1.0),
                       mc: McParams = McParams(), delay_dt: float = 2e-3, delay_reps: int = 100_000,
                       seed: int = 0, threads: int | None = None,
                       calibrations: dict[float, CalibrationResult] | None = None) -> list[GapRow]:
    """Excess worst-case delay of the multi-chart rule over the one-sensor CUSUM.

    For each ``gamma``: ``nu`` solves ``f(nu) = gamma`` exactly, ``h`` is
    calibrated by Monte Carlo, and ``gap = delay(T_h) - f(-nu)``. The standard
    error combines the delay SE with the calibration SE of ``h`` propagated
    through the delay slope. ``calibrations`` may supply precomputed thresholds.
    """
    rows = []
    for g in gammas:
        nu = solve_nu(g).threshold
        lower = f_cusum(-nu)
        cal = (calibrations or {}).get(g) or calibrate_h_mc(g, n_sensors, model, mc)
        est, slope = delay_at(cal.threshold, n_sensors, model, delay_dt, delay_reps, seed, threads)
        gap = est.mean - lower
        gap_se = math.hypot(est.std_error, slope * cal.threshold_se)
        rows.append(GapRow(g, n_sensors, nu, lower, cal.threshold, cal.threshold_se, est, gap, gap_se))
    return rows


def leading_order_delay(gamma: float, n_sensors: int) -> float:
    """Leading-order worst-case delay ``log gamma + log N - 1``."""
    return math.log(gamma) + math.log(n_sensors) - 1.0
