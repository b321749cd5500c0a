"""Simulated throttle plate.

Second-order dynamics with a two-stiffness return spring around the limp-home
angle, viscous and smoothed Coulomb friction, an additive disturbance and
hard stops::

    x1' = x2
    x2' = Ts(x1) + c*x2 + Tf(x2) + b*u + d

    Ts(x1) = -k(x1) * (x1 - theta_lh),  k = k_lo below theta_sw, k_hi above
    Tf(x2) = -F_c * tanh(x2 / v_eps)

Angles in degrees, time in seconds, ``u`` is the normalized motor input in
[-1, 1].  The controller is sampled at 1 kHz with zero-order hold; the plant
is integrated with classical RK4 inside each sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

SAMPLE_RATE = 1000.0
DT = 1.0 / SAMPLE_RATE
TRAJECTORY_SCHEMA_VERSION = 1
TRAJECTORY_COLUMNS = ("t", "r", "y", "u", "d", "x1")


class SimulationDiverged(RuntimeError):
    def __init__(self, time: float):
        super().__init__(f"simulation diverged at t = {time:.3f} s")
        self.time = time


@dataclass(frozen=True)
class PlantParams:
    b: float = 2.5e5  # input gain [deg/s^2 per unit input]
    c: float = -25.0  # viscous coefficient [1/s]
    k_lo: float = 400.0  # spring stiffness below the switch angle [1/s^2]
    k_hi: float = 1600.0  # spring stiffness above the switch angle [1/s^2]
    theta_lh: float = 8.0  # limp-home (spring rest) angle [deg]
    theta_sw: float = 12.0  # spring switch angle [deg]
    friction: float = 300.0  # Coulomb level F_c [deg/s^2]
    v_eps: float = 20.0  # friction smoothing velocity [deg/s]
    theta_min: float = 0.0  # hard stops [deg]
    theta_max: float = 90.0

    def __post_init__(self):
        if self.k_lo <= 0 or self.k_hi <= 0:
            raise ValueError("plant: spring stiffnesses must be positive")
        if not self.theta_min < self.theta_lh < self.theta_max:
            raise ValueError("plant: need theta_min < theta_lh < theta_max")
        if self.v_eps <= 0:
            raise ValueError("plant: v_eps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimSpec:
    duration: float  # [s]
    disturbance: tuple[tuple[float, float], ...] = ()  # (onset [s], level [deg/s^2]), piecewise constant
    noise_std: float = 0.05  # sensor noise [deg]
    seed: int = 0
    x0: tuple[float, float] | None = None  # defaults to rest at the limp-home angle
    substeps: int = 1  # RK4 steps per controller sample
    dt: float = field(default=DT)

    def __post_init__(self):
        if abs(self.dt - DT) > 1e-15:
            raise ValueError("plant: the sample period is fixed at 1 ms")
        if self.substeps < 1:
            raise ValueError("plant: substeps must be >= 1")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt))

    def disturbance_signal(self) -> np.ndarray:
        d = np.zeros(self.n_samples)
        t = np.arange(self.n_samples) * self.dt
        for onset, level in sorted(self.disturbance):
            d[t >= onset - 1e-12] = level
        return d


@dataclass
class Trajectory:
    t: np.ndarray
    r: np.ndarray
    y: np.ndarray
    u: np.ndarray
    d: np.ndarray
    x1: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in TRAJECTORY_COLUMNS:
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory column {name!r} has the wrong length")

    def __len__(self):
        return len(self.t)

    def with_output(self, y: np.ndarray) -> "Trajectory":
        return Trajectory(self.t, self.r, np.asarray(y), self.u, self.d, self.x1, dict(self.meta))

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        data = np.column_stack([getattr(self, c) for c in TRAJECTORY_COLUMNS])
        np.savetxt(path, data, delimiter=",", header=",".join(TRAJECTORY_COLUMNS),
                   comments="", fmt="%.10g")
        sidecar = {"schema_version": TRAJECTORY_SCHEMA_VERSION,
                   "columns": list(TRAJECTORY_COLUMNS),
                   "sample_rate_hz": SAMPLE_RATE, **self.meta}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trajectory":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = {}
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
            for key in ("schema_version", "columns", "sample_rate_hz"):
                meta.pop(key, None)
        return cls(*(data[:, i] for i in range(len(TRAJECTORY_COLUMNS))), meta=meta)


def dynamics(x1: float, x2: float, u: float, d: float, p: PlantParams) -> tuple[float, float]:
    k = p.k_lo if x1 < p.theta_sw else p.k_hi
    spring = -k * (x1 - p.theta_lh)
    fric = -p.friction * math.tanh(x2 / p.v_eps)
    return x2, spring + p.c * x2 + fric + p.b * u + d


def simulate(p: PlantParams, controller: Callable[[float, float], float],
             reference, spec: SimSpec) -> Trajectory:
    """Closed-loop run.

    ``controller(y, r)`` is called once per sample with the noisy measurement
    and returns the input, which is clipped to [-1, 1] and held for the
    sample.  Deterministic given ``spec.seed``.
    """
    n = spec.n_samples
    r = np.asarray(reference, dtype=float)
    if r.shape != (n,):
        raise ValueError(f"reference must have {n} samples at 1 kHz, got shape {r.shape}")
    d = spec.disturbance_signal()
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.noise_std, n) if spec.noise_std > 0 else np.zeros(n)

    x1, x2 = spec.x0 if spec.x0 is not None else (p.theta_lh, 0.0)
    lo, hi = p.theta_min, p.theta_max
    h = spec.dt / spec.substeps
    # unpack once; the loop below is the hot path
    b, c, k_lo, k_hi = p.b, p.c, p.k_lo, p.k_hi
    lh, sw, fc, ve = p.theta_lh, p.theta_sw, p.friction, p.v_eps
    tanh = math.tanh

    def accel(a, v, drive):
        return -(k_lo if a < sw else k_hi) * (a - lh) + c * v - fc * tanh(v / ve) + drive

    ys = np.empty(n)
    us = np.empty(n)
    xs = np.empty(n)
    r_list = r.tolist()
    d_list = d.tolist()
    noise_list = noise.tolist()
    for k in range(n):
        y = x1 + noise_list[k]
        u = controller(y, r_list[k])
        if u > 1.0:
            u = 1.0
        elif u < -1.0:
            u = -1.0
        ys[k] = y
        us[k] = u
        xs[k] = x1
        drive = b * u + d_list[k]
        for _ in range(spec.substeps):
            a1 = accel(x1, x2, drive)
            v2 = x2 + 0.5 * h * a1
            a2 = accel(x1 + 0.5 * h * x2, v2, drive)
            v3 = x2 + 0.5 * h * a2
            a3 = accel(x1 + 0.5 * h * v2, v3, drive)
            v4 = x2 + h * a3
            a4 = accel(x1 + h * v3, v4, drive)
            x1 = x1 + h / 6.0 * (x2 + 2.0 * v2 + 2.0 * v3 + v4)
            x2 = x2 + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            if x1 < lo:
                x1, x2 = lo, 0.0
            elif x1 > hi:
                x1, x2 = hi, 0.0
        if not (math.isfinite(x1) and math.isfinite(x2)):
            raise SimulationDiverged((k + 1) * spec.dt)

    t = np.arange(n) * spec.dt
    return Trajectory(t=t, r=r, y=ys, u=us, d=d, x1=xs, meta={"seed": spec.seed})
