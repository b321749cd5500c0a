"""Closed-loop experiments on the simulated valve for a given tuning point."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import cost
from .adrc import AdrcController, AdrcState, synthesize
from .paramspace import Bounds, ParamVector, default_bounds, to_pole_spec
from .plant import PlantParams, SimSpec, Trajectory, simulate

FUNCTIONALS = ("heur", "norm")


@dataclass(frozen=True)
class ExperimentSetup:
    plant: PlantParams = field(default_factory=PlantParams)
    nominal_b: float | None = None  # controller's b; defaults to the plant's
    noise_std: float = 0.05  # [deg]
    filter_cutoff: float = 50.0  # [Hz]
    steps: cost.StepSeriesSpec = field(default_factory=cost.StepSeriesSpec)
    chirp: cost.ChirpSpec = field(default_factory=cost.ChirpSpec)
    setpoints: cost.SetpointSpec = field(default_factory=cost.SetpointSpec)
    disturbance: cost.DisturbanceSpec = field(default_factory=cost.DisturbanceSpec)

    @property
    def controller_b(self) -> float:
        return self.plant.b if self.nominal_b is None else self.nominal_b


@dataclass
class Evaluation:
    cost: float
    metrics: dict
    trajectory: Trajectory
    frequency_response: cost.FrequencyResponse | None = None


def make_controller(theta: ParamVector, setup: ExperimentSetup, bounds: Bounds | None = None,
                    y0: float | None = None) -> AdrcController:
    design = synthesize(to_pole_spec(theta, bounds or default_bounds()), setup.controller_b)
    start = setup.plant.theta_lh if y0 is None else y0
    return AdrcController(design, AdrcState(x1=start))


def run(theta: ParamVector, reference, duration: float, setup: ExperimentSetup, seed: int,
        bounds: Bounds | None = None, disturbance=()) -> Trajectory:
    ctrl = make_controller(theta, setup, bounds)
    spec = SimSpec(duration=duration, noise_std=setup.noise_std, seed=seed,
                   disturbance=tuple(disturbance))
    traj = simulate(setup.plant, ctrl, reference, spec)
    traj.meta.update({"theta": theta.to_dict(), "design": ctrl.design.to_json()})
    return traj


def filtered(traj: Trajectory, setup: ExperimentSetup) -> Trajectory:
    return traj.with_output(cost.zero_phase_filter(traj.y, setup.filter_cutoff))


def evaluate_heur(theta: ParamVector, setup: ExperimentSetup, seed: int,
                  bounds: Bounds | None = None) -> Evaluation:
    ref = cost.generate_reference(setup.steps)
    traj = run(theta, ref, setup.steps.duration, setup, seed, bounds)
    res = cost.j_heur(filtered(traj, setup), setup.steps)
    traj.meta["experiment"] = "steps"
    return Evaluation(cost=res.J, metrics=res.breakdown(), trajectory=traj)


def chirp_response(theta: ParamVector, setup: ExperimentSetup, seed: int,
                   bounds: Bounds | None = None):
    ref = cost.generate_reference(setup.chirp)
    traj = run(theta, ref, setup.chirp.duration, setup, seed, bounds)
    traj.meta["experiment"] = "chirp"
    return traj, cost.estimate_ST(filtered(traj, setup), setup.chirp)


def evaluate_norm(theta: ParamVector, setup: ExperimentSetup, seed: int,
                  bounds: Bounds | None = None) -> Evaluation:
    traj, fr = chirp_response(theta, setup, seed, bounds)
    res = cost.j_norm(fr)
    metrics = res.breakdown()
    metrics["dropped_bins"] = int(len(fr.dropped))
    return Evaluation(cost=res.J, metrics=metrics, trajectory=traj, frequency_response=fr)


def evaluate(theta: ParamVector, functional: str, setup: ExperimentSetup, seed: int,
             bounds: Bounds | None = None) -> Evaluation:
    if functional == "heur":
        return evaluate_heur(theta, setup, seed, bounds)
    if functional == "norm":
        return evaluate_norm(theta, setup, seed, bounds)
    raise ValueError(f"unknown functional {functional!r}; expected one of {FUNCTIONALS}")


def evaluate_secondary(theta: ParamVector, setup: ExperimentSetup, seed: int,
                       bounds: Bounds | None = None) -> cost.SecondaryMetrics:
    """Runs the chirp, set-point staircase and disturbance experiments."""
    _, fr = chirp_response(theta, setup, seed, bounds)

    sp = setup.setpoints
    ref = cost.generate_reference(cost.StepSeriesSpec(levels=sp.levels, hold=sp.hold))
    stairs = run(theta, ref, sp.duration, setup, seed + 1, bounds)

    ds = setup.disturbance
    n = int(round(ds.duration * 1000))
    ref = [ds.setpoint] * n
    level = ds.height * setup.plant.b
    dist = run(theta, ref, ds.duration, setup, seed + 2, bounds,
               disturbance=((ds.onset, level),))
    return cost.secondary_metrics(
        {"chirp": fr, "setpoints": stairs, "disturbance": filtered(dist, setup)},
        setpoint_spec=sp, disturbance_spec=ds)
