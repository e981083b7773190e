"""Replication engine shared by calibration and the performance estimators."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernel
from .sde import BLOCK_STEPS, Constant, DriftModel, change_index, draw_block, replication_generator

CENSOR_LIMIT = 1e-3


class BudgetExceeded(RuntimeError):
    """Monte Carlo budget ran out; ``partial`` carries the best result so far."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class Scenario:
    """One Monte Carlo experiment: which sensors change, detector threshold, budget.

    ``change_points`` uses ``inf`` for sensors that never change. The worst-case
    delay convention is a change at time 0 in a single sensor with every
    statistic starting at 0 (see :meth:`worst_case`).
    """

    n_sensors: int
    change_points: tuple[float, ...]
    model: DriftModel = Constant(1.0)
    threshold: float = 4.0
    dt: float = 1e-3
    horizon: float | None = None
    replications: int = 10_000
    seed: int = 0
    stream: int = 0
    max_doublings: int = 20
    sensor_thresholds: tuple[float, ...] | None = None
    y0: float = 0.0
    bridge: bool = True
    # each step sums this many increments of the stream at step dt/coarsen, so
    # runs at dt and dt/coarsen share their Brownian paths
    coarsen: int = 1

    def __post_init__(self):
        object.__setattr__(self, "change_points", tuple(float(t) for t in self.change_points))
        if len(self.change_points) != self.n_sensors:
            raise ValueError("change_points must have one entry per sensor")
        self.model.check_sensors(self.n_sensors)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be finite and > 0")
        if self.replications < 2:
            raise ValueError("need at least 2 replications")
        if self.sensor_thresholds is not None:
            st = tuple(float(x) for x in self.sensor_thresholds)
            if len(st) != self.n_sensors or min(st) <= 0:
                raise ValueError("sensor_thresholds needs one positive value per sensor")
            object.__setattr__(self, "sensor_thresholds", st)
        elif not (self.threshold > 0 and math.isfinite(self.threshold)):
            raise ValueError(f"threshold must be finite and > 0, got {self.threshold}")
        if self.y0 < 0:
            raise ValueError("y0 must be >= 0")
        if self.coarsen < 1 or BLOCK_STEPS % self.coarsen:
            raise ValueError(f"coarsen must divide {BLOCK_STEPS}")

    @classmethod
    def worst_case(cls, n_sensors: int, sensor: int = 0, **kw) -> "Scenario":
        taus = [math.inf] * n_sensors
        taus[sensor] = 0.0
        return cls(n_sensors, tuple(taus), **kw)

    @classmethod
    def no_change(cls, n_sensors: int, **kw) -> "Scenario":
        return cls(n_sensors, (math.inf,) * n_sensors, **kw)

    @property
    def finite_changes(self) -> list[int]:
        return [i for i, t in enumerate(self.change_points) if math.isfinite(t)]

    def initial_horizon(self, top_level: float) -> float:
        if self.horizon is not None:
            return self.horizon
        level = self.model.param if isinstance(self.model, Constant) else 1.0
        rate = max(0.5 * level * level, 1e-12)
        if self.finite_changes:
            energy = 2.0 * (top_level + 1.0)
            start = max(self.change_points[i] for i in self.finite_changes)
            return start + 2.0 * energy / rate + 50 * self.dt
        energy = math.exp(min(top_level, 30.0)) / self.n_sensors
        return 2.0 * energy / rate + 50 * self.dt

    def to_dict(self) -> dict:
        return {
            "n_sensors": self.n_sensors,
            "change_points": list(self.change_points),
            "model": self.model.spec(),
            "threshold": self.threshold,
            "dt": self.dt,
            "horizon": self.horizon,
            "replications": self.replications,
            "seed": self.seed,
            "stream": self.stream,
            "sensor_thresholds": list(self.sensor_thresholds) if self.sensor_thresholds else None,
            "y0": self.y0,
            "bridge": self.bridge,
            "coarsen": self.coarsen,
        }


@dataclass(eq=False)
class RunResult:
    """Per-replication outcomes; level axis follows ``levels``. Censored entries have ``step == -1``."""

    scenario: Scenario
    levels: np.ndarray
    step: np.ndarray
    trigger: np.ndarray
    e_model: np.ndarray
    e_applied: np.ndarray
    doublings: np.ndarray = field(repr=False)

    @property
    def replications(self) -> int:
        return self.step.shape[0]

    def censored(self, j: int = -1) -> np.ndarray:
        return self.step[:, j] < 0

    def stop_times(self, j: int = -1) -> np.ndarray:
        return (self.step[:, j] + 1) * self.scenario.dt

    def concat(self, other: "RunResult") -> "RunResult":
        if not np.array_equal(self.levels, other.levels):
            raise ValueError("level grids differ")
        return RunResult(self.scenario, self.levels,
                         np.concatenate([self.step, other.step]),
                         np.concatenate([self.trigger, other.trigger]),
                         np.concatenate([self.e_model, other.e_model]),
                         np.concatenate([self.e_applied, other.e_applied]),
                         np.concatenate([self.doublings, other.doublings]))


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    replications_used: int
    censored_count: int
    samples: np.ndarray = field(repr=False, compare=False, default=None)

    @classmethod
    def from_samples(cls, values: np.ndarray, censored: int = 0) -> "Estimate":
        values = np.asarray(values, dtype=float)
        n = values.size
        mean = float(np.mean(values)) if n else math.nan
        se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(mean, se, n, int(censored), values)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.std_error, "reps": self.replications_used,
                "censored": self.censored_count}


def _run_one(sc: Scenario, rep: int, levels: np.ndarray, offsets: np.ndarray,
             kchange: np.ndarray, step_limit: int):
    n = sc.n_sensors
    n_levels = levels.size
    z = np.zeros(n)
    u = np.full(n, float(sc.y0))
    m = np.zeros(n)
    e_model = np.zeros(n)
    e_applied = np.zeros(n)
    state = np.zeros(2, dtype=np.int64)
    out_step = np.full(n_levels, -1, dtype=np.int64)
    out_trigger = np.full(n_levels, -1, dtype=np.int64)
    out_em = np.full(n_levels, np.nan)
    out_ea = np.full((n_levels, n), np.nan)
    gen = replication_generator(sc.seed, rep, sc.stream)
    limit = step_limit
    doublings = 0
    kind, param = sc.model.kind, float(sc.model.param)
    c = sc.coarsen
    block = BLOCK_STEPS // c
    done = False
    while not done:
        normals, uniforms = draw_block(gen, n)
        if c > 1:
            normals = normals.reshape(block, c, n).sum(axis=1) / math.sqrt(c)
            uniforms = np.ascontiguousarray(uniforms.reshape(block, c, n, 2)[:, 0])
        offset = 0
        while offset < block:
            k_before = state[0]
            done = _kernel.advance(kind, param, sc.dt, kchange, offsets, levels, sc.bridge,
                                   z, u, m, e_model, e_applied, state,
                                   normals[offset:], uniforms[offset:], limit,
                                   out_step, out_trigger, out_em, out_ea)
            offset += int(state[0] - k_before)
            if done:
                break
            if state[0] >= limit:
                # horizon reached: equivalent to re-running with a doubled horizon
                if doublings >= sc.max_doublings:
                    done = True
                    break
                limit *= 2
                doublings += 1
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("simulation diverged; reduce dt")
    return out_step, out_trigger, out_em, out_ea, doublings


def run_replications(sc: Scenario, levels: Sequence[float] | None = None,
                     reps: range | None = None, threads: int | None = None) -> RunResult:
    """Run replications ``reps`` (default ``range(sc.replications)``).

    Each replication ``r`` uses its own counter-based stream keyed by
    ``(seed, stream, r)``, so results do not depend on ``threads`` or on how
    replications are batched.
    """
    if not sc.model.has_energy():
        raise ValueError("drift model carries no signal energy; the detector can never stop")
    if sc.sensor_thresholds is not None:
        if levels is not None:
            raise ValueError("per-sensor thresholds cannot be combined with a level grid")
        lv = np.array([0.0])
        offsets = np.array(sc.sensor_thresholds)
        top = max(sc.sensor_thresholds)
    else:
        lv = np.sort(np.asarray([sc.threshold] if levels is None else levels, dtype=float))
        if lv.size == 0 or lv[0] <= 0:
            raise ValueError("levels must be > 0")
        offsets = np.zeros(sc.n_sensors)
        top = float(lv[-1])
    reps = range(sc.replications) if reps is None else reps
    kchange = np.array([change_index(t, sc.dt) for t in sc.change_points], dtype=np.int64)
    step_limit = max(1, int(math.ceil(sc.initial_horizon(top) / sc.dt)))

    def work(chunk):
        return [_run_one(sc, r, lv, offsets, kchange, step_limit) for r in chunk]

    threads = threads or os.cpu_count() or 1
    rep_list = list(reps)
    if threads <= 1 or len(rep_list) < 64:
        results = work(rep_list)
    else:
        size = -(-len(rep_list) // (threads * 4))
        chunks = [rep_list[i:i + size] for i in range(0, len(rep_list), size)]
        with ThreadPoolExecutor(threads) as pool:
            results = [r for part in pool.map(work, chunks) for r in part]
    n_kept = sc.n_sensors if sc.finite_changes else 0
    return RunResult(
        sc, lv,
        np.array([r[0] for r in results]).reshape(len(results), lv.size),
        np.array([r[1] for r in results], dtype=np.int16).reshape(len(results), lv.size),
        np.array([r[2] for r in results]).reshape(len(results), lv.size),
        np.array([r[3][:, :n_kept] for r in results]).reshape(len(results), lv.size, n_kept),
        np.array([r[4] for r in results]),
    )


def criterion_samples(run: RunResult, j: int = -1, kind: str = "delay") -> np.ndarray:
    """Per-replication criterion energy at level ``j`` (NaN where censored).

    ``false_alarm``: ``0.5 * mean_i int alpha_i^2`` with the model drift.
    ``delay``: with a single changed sensor, ``0.5 * int alpha^2`` of that sensor
    from its change point; with several, the sensor-averaged applied energy.
    """
    if kind == "false_alarm":
        return run.e_model[:, j]
    finite = run.scenario.finite_changes
    if not finite:
        raise ValueError("delay criterion needs at least one finite change point")
    if len(finite) == 1:
        return run.e_applied[:, j, finite[0]]
    return run.e_applied[:, j, :].mean(axis=1)


def estimate_from_run(run: RunResult, j: int = -1, kind: str = "delay", strict: bool = True) -> Estimate:
    values = criterion_samples(run, j, kind)
    cens = run.censored(j)
    n_cens = int(cens.sum())
    est = Estimate.from_samples(values[~cens], n_cens)
    if strict and n_cens / run.replications >= CENSOR_LIMIT:
        raise BudgetExceeded(
            f"{n_cens} of {run.replications} replications censored after "
            f"{run.scenario.max_doublings} horizon doublings", partial=est)
    return est


def with_(sc: Scenario, **kw) -> Scenario:
    return replace(sc, **kw)
