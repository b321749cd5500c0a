"""Tuning domain for the ADRC throttle controller.

A tuning point is ``(t_set, t_obs, p1, p2)``: the settling specifiers of the
nominal closed loop and of the observer (in seconds), and the two real poles
of the nominal plant model (in 1/s).  Settling specifiers are converted to
pole locations through the time at which ``exp(p * t)`` has decayed to
``exp(-6)``, i.e. ``p = -6 / t``.

The GP and the acquisition functions work on the unit cube.  Time dimensions
are mapped affinely, pole dimensions through the log of their magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DIM_NAMES = ("t_set", "t_obs", "p1", "p2")
DECAY_EXPONENT = 6.0


class DomainError(ValueError):
    """A parameter vector lies outside the tuning domain."""

    def __init__(self, message: str, dimension: str | None = None):
        super().__init__(message)
        self.dimension = dimension


@dataclass(frozen=True)
class ParamVector:
    t_set: float  # [s]
    t_obs: float  # [s]
    p1: float  # [1/s], slow nominal pole
    p2: float  # [1/s], fast nominal pole

    def as_array(self) -> np.ndarray:
        return np.array([self.t_set, self.t_obs, self.p1, self.p2], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ParamVector":
        values = [float(v) for v in values]
        if len(values) != 4:
            raise ValueError(f"expected 4 values, got {len(values)}")
        return cls(*values)

    def to_dict(self) -> dict:
        return dict(zip(DIM_NAMES, (self.t_set, self.t_obs, self.p1, self.p2)))


@dataclass(frozen=True)
class PoleSpec:
    p_ctr: float  # double controller pole
    p_obs: float  # triple observer pole
    a1: float
    a2: float


@dataclass(frozen=True)
class Bounds:
    """Box in engineering units with a per-dimension encoding.

    ``log_scale[i]`` selects the log-of-magnitude encoding; such dimensions
    must not contain zero.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    log_scale: tuple[bool, ...] = field(default=(False, False, True, True))
    names: tuple[str, ...] = DIM_NAMES

    def __post_init__(self):
        n = len(self.names)
        if not (len(self.lower) == len(self.upper) == len(self.log_scale) == n):
            raise ValueError("bounds: lower, upper, log_scale and names must have equal length")
        for name, lo, hi, log in zip(self.names, self.lower, self.upper, self.log_scale):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise DomainError(f"bounds.{name}: limits must be finite", name)
            if not lo < hi:
                raise DomainError(f"bounds.{name}: lower ({lo}) must be below upper ({hi})", name)
            if log and lo < 0.0 < hi or log and (lo == 0.0 or hi == 0.0):
                raise DomainError(f"bounds.{name}: log-scaled interval must not contain 0", name)

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def midpoint(self) -> ParamVector:
        return decode(np.full(self.dim, 0.5), self)

    def to_dict(self) -> dict:
        return {
            name: {"lower": lo, "upper": hi, "scale": "log" if log else "linear"}
            for name, lo, hi, log in zip(self.names, self.lower, self.upper, self.log_scale)
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Bounds":
        lower, upper, log_scale = [], [], []
        for name in DIM_NAMES:
            if name not in data:
                raise DomainError(f"bounds.{name}: missing", name)
            entry = data[name]
            try:
                lower.append(float(entry["lower"]))
                upper.append(float(entry["upper"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise DomainError(f"bounds.{name}: needs numeric 'lower' and 'upper'", name) from exc
            scale = entry.get("scale", "linear")
            if scale not in ("linear", "log"):
                raise DomainError(f"bounds.{name}.scale: must be 'linear' or 'log'", name)
            log_scale.append(scale == "log")
        return cls(tuple(lower), tuple(upper), tuple(log_scale))


def default_bounds() -> Bounds:
    """Hardware safety box: T_set in [60, 200] ms, T_obs in [10, 40] ms,
    P1 in [-e^2, -e^-1], P2 in [-e^5, -e^2]."""
    return Bounds(
        lower=(0.060, 0.010, -math.exp(2.0), -math.exp(5.0)),
        upper=(0.200, 0.040, -math.exp(-1.0), -math.exp(2.0)),
    )


def check_in_bounds(theta: ParamVector, bounds: Bounds, rtol: float = 1e-12) -> None:
    for name, value, lo, hi in zip(bounds.names, theta.as_array(), bounds.lower, bounds.upper):
        slack = rtol * max(abs(lo), abs(hi))
        if not math.isfinite(value) or value < lo - slack or value > hi + slack:
            raise DomainError(f"{name} = {float(value)!r} outside safety bounds [{lo!r}, {hi!r}]", name)


def to_pole_spec(theta: ParamVector, bounds: Bounds | None = None) -> PoleSpec:
    check_in_bounds(theta, bounds or default_bounds())
    return PoleSpec(
        p_ctr=-DECAY_EXPONENT / theta.t_set,
        p_obs=-DECAY_EXPONENT / theta.t_obs,
        a1=-theta.p1 * theta.p2,
        a2=theta.p1 + theta.p2,
    )


def _warp(values: np.ndarray, log: np.ndarray) -> np.ndarray:
    safe = np.where(log, values, 1.0)
    return np.where(log, np.log(np.abs(safe)), values)


def _limits(bounds: Bounds):
    log = np.array(bounds.log_scale)
    lo = np.array(bounds.lower, dtype=float)
    hi = np.array(bounds.upper, dtype=float)
    return log, lo, hi, _warp(lo, log), _warp(hi, log)


def encode(theta: ParamVector, bounds: Bounds) -> np.ndarray:
    """Map an in-bounds point to the unit cube.

    Engineering lower corner maps to 0 in every dimension, upper corner to 1.
    """
    check_in_bounds(theta, bounds)
    return encode_array(theta.as_array(), bounds)


def encode_array(values, bounds: Bounds) -> np.ndarray:
    log, _, _, lo_w, hi_w = _limits(bounds)
    u = (_warp(np.asarray(values, dtype=float), log) - lo_w) / (hi_w - lo_w)
    return np.clip(u, 0.0, 1.0) + 0.0  # no negative zeros


def decode(u, bounds: Bounds) -> ParamVector:
    return ParamVector.from_array(decode_array(u, bounds))


def decode_array(u, bounds: Bounds) -> np.ndarray:
    """Inverse of :func:`encode_array`; accepts ``(d,)`` or ``(n, d)``."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    log, lo, hi, lo_w, hi_w = _limits(bounds)
    w = lo_w + u * (hi_w - lo_w)
    out = np.where(log, np.sign(lo) * np.exp(np.where(log, w, 0.0)), w)
    # pin the corners exactly so round trips never leave the box
    out = np.where(u == 0.0, lo, np.where(u == 1.0, hi, out))
    return np.clip(out, np.minimum(lo, hi), np.maximum(lo, hi))


def sample_uniform(bounds: Bounds, n: int, seed: int) -> list[ParamVector]:
    """``n`` points uniform in the encoded cube.

    The first ``k`` points for a given seed do not depend on ``n``, so a
    longer random-search run shares its prefix with a shorter initial design.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    rng = np.random.default_rng(seed)
    u = rng.random((int(n), bounds.dim))
    return [decode(row, bounds) for row in u]
