"""Euler-Maruyama simulation of N coupled observation channels with per-sensor change points.

Sensor ``i`` observes ``dZ_i = dW_i`` before its change point ``tau_i`` and
``dZ_i = alpha_i dt + dW_i`` afterwards, where the drift vector is produced by a
:class:`DriftModel` from the full current observation vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Steps drawn per RNG block. Fixed so that path bundles and the streaming
# Monte Carlo kernel consume identical random streams.
BLOCK_STEPS = 2048

KIND_CONSTANT = 0
KIND_AUTOREGRESSIVE = 1
KIND_ROTATIONAL = 2
KIND_ROTATIONAL_STATE = 3


class DriftModel:
    """Symmetric drift rule shared by all sensors.

    Subclasses implement :meth:`drift`, which maps ``(t, z)`` to the drift vector.
    Evaluation is deterministic and never touches a random stream.
    """

    kind: int = -1

    def drift(self, t: float, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def drift_rows(self, z: np.ndarray) -> np.ndarray:
        """Drift for every row of a ``[n, N]`` observation matrix."""
        return np.stack([self.drift(0.0, row) for row in z])

    def check_sensors(self, n_sensors: int) -> None:
        if n_sensors < 1:
            raise ValueError("n_sensors must be >= 1")

    @property
    def param(self) -> float:
        return 0.0

    def has_energy(self) -> bool:
        """False when the model can never accumulate signal energy."""
        return True

    def spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(DriftModel):
    level: float = 1.0
    kind = KIND_CONSTANT

    def __post_init__(self):
        if not math.isfinite(self.level):
            raise ValueError(f"non-finite drift level {self.level}")

    def drift(self, t, z):
        return np.full(len(z), float(self.level))

    def drift_rows(self, z):
        return np.full(z.shape, float(self.level))

    @property
    def param(self):
        return float(self.level)

    def has_energy(self):
        return self.level != 0.0

    def spec(self):
        return f"constant:{self.level!r}"


@dataclass(frozen=True)
class CoupledAutoregressive(DriftModel):
    """Every sensor receives ``-rate * sum_j Z_j``."""

    rate: float = 0.5
    kind = KIND_AUTOREGRESSIVE

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"rate must be finite and > 0, got {self.rate}")

    def drift(self, t, z):
        total = 0.0
        for v in z:
            total += v
        return np.full(len(z), -self.rate * total)

    def drift_rows(self, z):
        total = np.zeros(z.shape[0])
        for j in range(z.shape[1]):
            total = total + z[:, j]
        return np.repeat((-self.rate * total)[:, None], z.shape[1], axis=1)

    @property
    def param(self):
        return float(self.rate)

    def spec(self):
        return f"ar:{self.rate!r}"


@dataclass(frozen=True)
class RotationalPair(DriftModel):
    """Two-sensor model driven by the skew matrix ``[[0, 1], [-1, 0]]``.

    With ``state_dependent=False`` the matrix multiplies the unit vector, giving
    the constant drift ``(1, -1)``. With ``state_dependent=True`` it multiplies
    the current state, giving ``(z2, -z1)`` (noisy oscillation).
    """

    state_dependent: bool = False

    @property
    def kind(self):
        return KIND_ROTATIONAL_STATE if self.state_dependent else KIND_ROTATIONAL

    def check_sensors(self, n_sensors):
        if n_sensors != 2:
            raise ValueError(f"RotationalPair requires n_sensors == 2, got {n_sensors}")

    def drift(self, t, z):
        if self.state_dependent:
            return np.array([z[1], -z[0]], dtype=float)
        return np.array([1.0, -1.0])

    def drift_rows(self, z):
        if self.state_dependent:
            return np.stack([z[:, 1], -z[:, 0]], axis=1)
        return np.tile([1.0, -1.0], (z.shape[0], 1))

    def spec(self):
        return "rotational:state" if self.state_dependent else "rotational"


def parse_model(text: str) -> DriftModel:
    """Parse ``constant:<level>``, ``ar:<rate>``, ``rotational`` or ``rotational:state``."""
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name == "constant":
        return Constant(float(arg) if arg else 1.0)
    if name in ("ar", "autoregressive", "coupled"):
        return CoupledAutoregressive(float(arg) if arg else 0.5)
    if name == "rotational":
        return RotationalPair(state_dependent=(arg == "state"))
    raise ValueError(f"unknown drift model {text!r}")


def change_index(tau: float, dt: float) -> int:
    """Grid index of a change point (nearest grid time, ties rounded up)."""
    if math.isinf(tau):
        return np.iinfo(np.int64).max
    if tau < 0 or math.isnan(tau):
        raise ValueError(f"change point must be in [0, inf], got {tau}")
    return int(math.floor(tau / dt + 0.5))


@dataclass(frozen=True)
class SimConfig:
    n_sensors: int
    dt: float
    horizon: float
    change_points: tuple[float, ...]
    seed: int = 0
    replication: int = 0
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "change_points", tuple(float(t) for t in self.change_points))
        if self.n_sensors < 1:
            raise ValueError("n_sensors must be >= 1")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be finite and > 0, got {self.dt}")
        if not (math.isfinite(self.horizon) and self.horizon > self.dt):
            raise ValueError("horizon must be finite and larger than dt")
        if len(self.change_points) != self.n_sensors:
            raise ValueError("change_points must have one entry per sensor")
        for tau in self.change_points:
            change_index(tau, self.dt)

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-9))

    @property
    def change_indices(self) -> np.ndarray:
        return np.array([change_index(t, self.dt) for t in self.change_points], dtype=np.int64)

    @property
    def first_change(self) -> float:
        """Earliest change point after grid snapping (inf when none)."""
        finite = [k * self.dt for k, t in zip(self.change_indices, self.change_points) if math.isfinite(t)]
        return min(finite) if finite else math.inf


def replication_generator(seed: int, replication: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one replication; streams are independent across keys."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream), int(replication)))
    return np.random.Generator(np.random.Philox(ss))


def draw_block(gen: np.random.Generator, n_sensors: int) -> tuple[np.ndarray, np.ndarray]:
    """One block of Gaussian increments and bridge uniforms, in canonical order."""
    normals = gen.standard_normal((BLOCK_STEPS, n_sensors))
    uniforms = gen.random((BLOCK_STEPS, n_sensors, 2))
    return normals, uniforms


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Discretized sample paths.

    ``alpha`` is the drift actually applied (zero before each change point);
    ``model_alpha`` is the model drift evaluated on the observed state at the
    left endpoint of each step, whichever regime is active. ``bridge_u`` holds
    two uniforms per step and sensor used to sample the extremes of the
    continuous Euler interpolant between grid points.
    """

    config: SimConfig
    times: np.ndarray
    z: np.ndarray
    dz: np.ndarray
    alpha: np.ndarray
    model_alpha: np.ndarray
    bridge_u: np.ndarray = field(repr=False)
    parent_sensors: int | None = None

    @property
    def n_sensors(self) -> int:
        return self.z.shape[1]

    @property
    def dt(self) -> float:
        return self.config.dt

    def select(self, sensor: int) -> "PathBundle":
        """Single-sensor view of one column; model drift is kept as observed jointly."""
        cfg = SimConfig(1, self.config.dt, self.config.horizon, (self.config.change_points[sensor],),
                        self.config.seed, self.config.replication, self.config.stream)
        sl = slice(sensor, sensor + 1)
        return PathBundle(cfg, self.times, self.z[:, sl], self.dz[:, sl], self.alpha[:, sl],
                          self.model_alpha[:, sl], self.bridge_u[:, sl], parent_sensors=self.n_sensors)

    def to_csv(self, path, model: DriftModel | None = None, header_comment: str | None = None) -> None:
        """Dump ``t,z1..zN,a1..aN`` per grid point; the final drift row needs ``model``."""
        from .io import write_csv

        n = self.n_sensors
        cols = ["t"] + [f"z{i + 1}" for i in range(n)] + [f"a{i + 1}" for i in range(n)]
        last = np.full(n, np.nan)
        if model is not None:
            k = len(self.times) - 1
            last = np.where(k >= self.config.change_indices, model.drift(self.times[-1], self.z[-1]), 0.0)
        alpha_rows = np.vstack([self.alpha, last[None, :]])
        data = np.column_stack([self.times, self.z, alpha_rows])
        write_csv(path, cols, data, comment=header_comment)


def simulate_paths(config: SimConfig, model: DriftModel) -> PathBundle:
    """Simulate the observation channels on the grid ``t_k = k * dt``."""
    n = config.n_sensors
    model.check_sensors(n)
    dt = config.dt
    n_steps = config.n_steps
    gen = replication_generator(config.seed, config.replication, config.stream)
    n_blocks = -(-n_steps // BLOCK_STEPS)
    normals, uniforms = [], []
    for _ in range(n_blocks):
        a, b = draw_block(gen, n)
        normals.append(a)
        uniforms.append(b)
    xi = np.concatenate(normals)[:n_steps]
    bridge_u = np.concatenate(uniforms)[:n_steps]

    kchange = config.change_indices
    steps = np.arange(n_steps)
    active = steps[:, None] >= kchange[None, :]
    sqdt = math.sqrt(dt)
    z = np.zeros((n_steps + 1, n))

    if isinstance(model, Constant) or (isinstance(model, RotationalPair) and not model.state_dependent):
        model_alpha = model.drift_rows(np.zeros((n_steps, n)))
        alpha = np.where(active, model_alpha, 0.0)
        dz = alpha * dt + sqdt * xi
        z[1:] = np.cumsum(dz, axis=0)
    else:
        model_alpha = np.empty((n_steps, n))
        alpha = np.empty((n_steps, n))
        dz = np.empty((n_steps, n))
        for k in range(n_steps):
            a = model.drift(k * dt, z[k])
            model_alpha[k] = a
            alpha[k] = np.where(active[k], a, 0.0)
            dz[k] = alpha[k] * dt + sqdt * xi[k]
            z[k + 1] = z[k] + dz[k]
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("simulation produced non-finite values; reduce dt or horizon")
    times = np.arange(n_steps + 1) * dt
    return PathBundle(config, times, z, dz, alpha, model_alpha, bridge_u)


def energy_integral(
    path: PathBundle,
    from_time: float,
    to_time: float,
    sensors: int | Sequence[int] | str = "all",
    mode: str = "applied",
) -> float:
    """Left-endpoint Riemann sum of ``0.5 * mean_{i in set} alpha_i^2 dt`` over ``[from, to)``.

    ``mode="applied"`` uses the drift actually present (zero before a change);
    ``mode="model"`` uses the model drift regardless of regime, which is the
    quantity entering the false-alarm constraint and the detector.
    """
    if to_time < from_time:
        raise ValueError(f"reversed interval [{from_time}, {to_time}]")
    if from_time < 0 or to_time > path.times[-1] + 1e-12:
        raise ValueError("interval outside simulated horizon")
    if sensors == "all":
        idx = list(range(path.n_sensors))
    elif isinstance(sensors, (int, np.integer)):
        idx = [int(sensors)]
    else:
        idx = [int(i) for i in sensors]
    if mode == "applied":
        a = path.alpha
    elif mode == "model":
        a = path.model_alpha
    else:
        raise ValueError(f"unknown mode {mode!r}")
    dt = path.dt
    k0 = int(math.ceil(from_time / dt - 1e-9))
    k1 = int(math.ceil(to_time / dt - 1e-9))
    if k1 <= k0:
        return 0.0
    block = a[k0:k1][:, idx]
    return float(0.5 * np.sum(block * block) * dt / len(idx))


def energy_growth(model: DriftModel, n_sensors: int, tau: float, horizons: Sequence[float],
                  dt: float = 0.01, seed: int = 0) -> np.ndarray:
    """Applied energy over ``[tau, H]`` for each horizon ``H`` on one simulated path.

    Used to check that post-change signal energy keeps accumulating; a model
    with no energy can never be detected and is rejected by the Monte Carlo layer.
    """
    horizons = sorted(horizons)
    cfg = SimConfig(n_sensors, dt, horizons[-1], (tau,) * n_sensors, seed)
    path = simulate_paths(cfg, model)
    return np.array([energy_integral(path, cfg.first_change, h) for h in horizons])
