"""Reference signals and cost functionals computed from closed-loop records.

Two functionals are provided:

``j_heur``
    mean over the steps of a step series of (overshoot [deg] + T90 [s]).
``j_norm``
    0.5 * (||S||_inf + ||T||_2) + exp(-f_s / 2), with |S| and |T| estimated
    by FFT from a chirp run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import signal

from .plant import DT, SAMPLE_RATE, Trajectory


class MetricError(ValueError):
    pass


# -- filtering ---------------------------------------------------------------

FILTER_ORDER = 6  # net order after the forward-backward pass


def filter_settle_length(cutoff: float, fs: float = SAMPLE_RATE) -> int:
    """Roughly three periods of the cutoff frequency, in samples."""
    return int(math.ceil(3.0 * fs / cutoff))


def zero_phase_filter(x, cutoff: float = 50.0, fs: float = SAMPLE_RATE) -> np.ndarray:
    """Forward-backward Butterworth low-pass (3rd order each way, net 6th order,
    zero phase) with point-reflected edge padding, which keeps value and slope
    continuous at the ends."""
    x = np.asarray(x, dtype=float)
    if not 0 < cutoff < fs / 2:
        raise MetricError(f"cutoff must lie in (0, {fs / 2}) Hz")
    settle = filter_settle_length(cutoff, fs)
    if len(x) <= 6 * settle:
        raise MetricError(f"signal too short for zero-phase filtering: {len(x)} samples, "
                          f"need more than {6 * settle}")
    sos = signal.butter(FILTER_ORDER // 2, cutoff, btype="low", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, x, padtype="odd", padlen=settle)


# -- reference signals -------------------------------------------------------

@dataclass(frozen=True)
class StepSeriesSpec:
    """Piecewise-constant reference; ``levels[0]`` is the starting hold and
    every following level is one step."""

    levels: tuple[float, ...] = (10.0, 15.0, 10.0, 15.0, 20.0, 15.0, 20.0, 25.0, 20.0, 70.0)
    hold: float = 2.0  # [s]

    def __post_init__(self):
        if self.hold < 2.0:
            raise ValueError("step series: holds must last at least 2 s")
        if len(self.levels) < 2:
            raise ValueError("step series: need at least one step")

    @property
    def hold_samples(self) -> int:
        return int(round(self.hold / DT))

    @property
    def duration(self) -> float:
        return len(self.levels) * self.hold


@dataclass(frozen=True)
class ChirpSpec:
    f_lo: float = 0.1  # [Hz]
    f_hi: float = 30.0  # [Hz]
    amplitude: float = 20.0  # [deg]
    center: float = 25.0  # [deg]
    sweep_time: float = 60.0  # [s]
    sweep: str = "log"  # or "linear"
    lead_in: float = 1.0  # hold at the center before the sweep starts [s]
    band: tuple[float, float] = (0.5, 28.0)  # analysis band [Hz]

    def __post_init__(self):
        if not 0 < self.f_lo < self.f_hi:
            raise ValueError("chirp: need 0 < f_lo < f_hi")
        if self.sweep not in ("log", "linear"):
            raise ValueError("chirp: sweep must be 'log' or 'linear'")

    @property
    def duration(self) -> float:
        return self.lead_in + self.sweep_time

    def phase(self, t) -> np.ndarray:
        """Phase [rad] of the sweep, ``t`` measured from the sweep start."""
        t = np.asarray(t, dtype=float)
        T, f0, f1 = self.sweep_time, self.f_lo, self.f_hi
        if self.sweep == "linear":
            return 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / T * t**2)
        rate = math.log(f1 / f0) / T
        return 2 * np.pi * f0 / rate * np.expm1(rate * t)


def generate_reference(spec: StepSeriesSpec | ChirpSpec) -> np.ndarray:
    if isinstance(spec, StepSeriesSpec):
        return np.repeat(np.asarray(spec.levels, dtype=float), spec.hold_samples)
    lead = int(round(spec.lead_in / DT))
    n = int(round(spec.sweep_time / DT))
    t = np.arange(n) * DT
    sweep = spec.center + spec.amplitude * np.sin(spec.phase(t))
    return np.concatenate([np.full(lead, spec.center), sweep])


# -- heuristic functional ----------------------------------------------------

@dataclass(frozen=True)
class StepMetrics:
    start: float  # edge time [s]
    old: float
    new: float
    t90: float  # [s]
    overshoot: float  # [deg]
    reached: bool


@dataclass(frozen=True)
class HeurResult:
    J: float
    mean_t90: float  # [s]
    mean_overshoot: float  # [deg]
    steps: tuple[StepMetrics, ...] = ()

    def breakdown(self) -> dict:
        return {"J_heur": self.J, "mean_t90_s": self.mean_t90,
                "mean_overshoot_deg": self.mean_overshoot,
                "unreached_steps": sum(not s.reached for s in self.steps),
                "steps": [{"time_s": s.start, "from_deg": s.old, "to_deg": s.new, "t90_s": s.t90,
                           "overshoot_deg": s.overshoot, "reached": s.reached} for s in self.steps]}


def heuristic_cost(t90s, overshoots) -> float:
    """Mean of overshoot [deg] + T90 [s] over the steps, summed unitlessly."""
    t90s = np.asarray(t90s, dtype=float)
    overshoots = np.asarray(overshoots, dtype=float)
    if t90s.shape != overshoots.shape or t90s.size == 0:
        raise MetricError("need one T90 and one overshoot per step")
    return float(np.mean(overshoots + t90s))


def step_metrics(y: np.ndarray, k0: int, k_end: int, old: float, new: float) -> StepMetrics:
    """T90 and overshoot of one step whose edge is at sample ``k0``.

    The edge sample itself cannot reflect the new reference in a sampled
    loop, so the T90 search starts one sample later; perfect tracking thus
    gives one sample period.
    """
    seg = y[k0:k_end]
    hold = (k_end - k0) * DT
    err = np.abs(seg[1:] - new)
    hits = np.flatnonzero(err <= 0.1 * abs(new - old))
    if hits.size:
        t90, reached = (hits[0] + 1) * DT, True
    else:
        t90, reached = hold, False
    direction = math.copysign(1.0, new - old)
    overshoot = max(0.0, float(np.max(direction * (seg - new))))
    return StepMetrics(start=k0 * DT, old=old, new=new, t90=t90, overshoot=overshoot,
                       reached=reached)


def j_heur(traj: Trajectory, spec: StepSeriesSpec) -> HeurResult:
    """Heuristic cost of a step-series run; ``traj.y`` should already be filtered."""
    hs = spec.hold_samples
    if len(traj) < hs * len(spec.levels):
        raise MetricError("trajectory shorter than the step series")
    steps = []
    for i in range(1, len(spec.levels)):
        old, new = spec.levels[i - 1], spec.levels[i]
        if new == old:
            continue
        steps.append(step_metrics(traj.y, i * hs, (i + 1) * hs, old, new))
    if not steps:
        raise MetricError("step series contains no steps")
    t90 = [s.t90 for s in steps]
    h = [s.overshoot for s in steps]
    return HeurResult(J=heuristic_cost(t90, h), mean_t90=float(np.mean(t90)),
                      mean_overshoot=float(np.mean(h)), steps=tuple(steps))


# -- frequency-domain functional --------------------------------------------

@dataclass
class FrequencyResponse:
    freq: np.ndarray  # [Hz]
    S: np.ndarray  # |S|
    T: np.ndarray  # |T|
    band: tuple[float, float] = (0.5, 28.0)
    dropped: np.ndarray = field(default_factory=lambda: np.empty(0))  # bins without excitation

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.freq, self.S, self.T]), delimiter=",",
                   header="f,S,T", comments="", fmt="%.10g")


def estimate_ST(traj: Trajectory, spec: ChirpSpec, min_rel_energy: float = 1e-3) -> FrequencyResponse:
    """|T| = |Y/R| and |S| = |(R - Y)/R| from FFTs of the sweep segment.

    Bins inside the analysis band whose reference magnitude is below
    ``min_rel_energy`` times the band maximum are dropped and reported.
    """
    lead = int(round(spec.lead_in / DT))
    n = int(round(spec.sweep_time / DT))
    r = np.asarray(traj.r[lead:lead + n], dtype=float)
    y = np.asarray(traj.y[lead:lead + n], dtype=float)
    if len(r) < n:
        raise MetricError("trajectory shorter than the chirp")
    r = r - r.mean()
    y = y - y.mean()
    R = np.fft.rfft(r)
    Y = np.fft.rfft(y)
    E = np.fft.rfft(r - y)
    f = np.fft.rfftfreq(n, DT)
    lo, hi = spec.band
    in_band = (f >= lo) & (f <= hi)
    mag = np.abs(R)
    peak = mag[in_band].max() if in_band.any() else 0.0
    keep = in_band & (mag > min_rel_energy * peak)
    return FrequencyResponse(freq=f[keep], S=np.abs(E[keep] / R[keep]), T=np.abs(Y[keep] / R[keep]),
                             band=spec.band, dropped=f[in_band & ~keep])


@dataclass(frozen=True)
class NormResult:
    J: float
    S_inf: float
    T_2: float
    f_s: float  # [Hz]

    def breakdown(self) -> dict:
        return {"J_norm": self.J, "S_inf": self.S_inf, "T_2": self.T_2, "f_s_hz": self.f_s}


def crossing_frequency(freq: np.ndarray, S: np.ndarray, level: float = 0.5,
                       fallback: float = 28.0) -> float:
    """Lowest frequency where |S| first reaches ``level`` (linear interpolation
    between bins); ``fallback`` if it never does."""
    idx = np.flatnonzero(S >= level)
    if idx.size == 0:
        return fallback
    i = idx[0]
    if i == 0:
        return float(freq[0])
    s0, s1 = S[i - 1], S[i]
    return float(freq[i - 1] + (level - s0) / (s1 - s0) * (freq[i] - freq[i - 1]))


def j_norm(fr: FrequencyResponse) -> NormResult:
    if len(fr.freq) == 0:
        raise MetricError("frequency response has no bins in the analysis band")
    s_inf = float(np.max(fr.S))
    # RMS over the band, so that |T| == 1 gives exactly 1
    t_2 = float(np.sqrt(np.mean(fr.T**2)))
    f_s = crossing_frequency(fr.freq, fr.S, 0.5, fallback=fr.band[1])
    J = 0.5 * (s_inf + t_2) + math.exp(-f_s / 2.0)
    return NormResult(J=J, S_inf=s_inf, T_2=t_2, f_s=f_s)


# -- secondary objectives ----------------------------------------------------

@dataclass(frozen=True)
class SetpointSpec:
    levels: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
    hold: float = 2.0  # [s]
    settle: float = 1.0  # discarded start of each hold [s]

    @property
    def duration(self) -> float:
        return len(self.levels) * self.hold


@dataclass(frozen=True)
class DisturbanceSpec:
    setpoint: float = 30.0  # [deg]
    onset: float = 1.0  # [s]
    height: float = 0.7  # step height in input units (multiplied by the plant's b)
    duration: float = 2.0  # [s]
    band: float = 0.02  # relative to the pre-disturbance level
    dwell: float = 0.2  # [s] the output has to stay inside the band this long


@dataclass(frozen=True)
class SecondaryMetrics:
    robustness: float
    noise: float  # [deg]
    t_dist: float  # [s]
    h_dist: float  # [deg]

    def to_dict(self) -> dict:
        return {"robustness": self.robustness, "noise_deg": self.noise,
                "t_dist_s": self.t_dist, "h_dist_deg": self.h_dist}


def setpoint_noise(traj: Trajectory, spec: SetpointSpec) -> float:
    """Mean over the set points of the output standard deviation in each hold."""
    hs = int(round(spec.hold / DT))
    skip = int(round(spec.settle / DT))
    stds = []
    for i in range(len(spec.levels)):
        seg = traj.y[i * hs + skip:(i + 1) * hs]
        if len(seg) < 2:
            raise MetricError("set-point trajectory shorter than its spec")
        stds.append(np.std(seg))
    return float(np.mean(stds))


def disturbance_rejection(y: np.ndarray, spec: DisturbanceSpec) -> tuple[float, float]:
    """(T_dist [s], h_dist [deg]) of a disturbance step applied at ``spec.onset``."""
    k_on = int(round(spec.onset / DT))
    dwell = int(round(spec.dwell / DT))
    pre = float(np.mean(y[max(0, k_on - dwell):k_on]))
    dev = np.abs(np.asarray(y[k_on:]) - pre)
    h_dist = float(dev.max()) if dev.size else 0.0
    outside = dev > spec.band * abs(pre)
    if not outside.any():
        return 0.0, h_dist
    last_out = np.flatnonzero(outside)
    # first sample after which the deviation stays inside for the dwell time
    for k in last_out:
        nxt = outside[k + 1:k + 1 + dwell]
        if len(nxt) == dwell and not nxt.any():
            return (k + 1) * DT, h_dist
    return len(dev) * DT, h_dist


def secondary_metrics(runs: Mapping[str, object], setpoint_spec: SetpointSpec | None = None,
                      disturbance_spec: DisturbanceSpec | None = None) -> SecondaryMetrics:
    """Robustness, noise and disturbance rejection.

    ``runs`` needs ``"chirp"`` (a FrequencyResponse), ``"setpoints"`` (a
    set-point staircase Trajectory) and ``"disturbance"`` (a Trajectory whose
    output has already been filtered).
    """
    for name in ("chirp", "setpoints", "disturbance"):
        if name not in runs or runs[name] is None:
            raise MetricError(f"missing experiment: {name}")
    setpoint_spec = setpoint_spec or SetpointSpec()
    disturbance_spec = disturbance_spec or DisturbanceSpec()
    s_inf = float(np.max(runs["chirp"].S))
    t_dist, h_dist = disturbance_rejection(runs["disturbance"].y, disturbance_spec)
    return SecondaryMetrics(robustness=1.0 / s_inf if s_inf > 0 else math.inf,
                            noise=setpoint_noise(runs["setpoints"], setpoint_spec),
                            t_dist=t_dist, h_dist=h_dist)
