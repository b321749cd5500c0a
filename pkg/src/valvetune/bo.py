"""The tuning loop: initial design, hyperparameter handling, propose, evaluate, update.

The loop works in the encoded unit cube.  The objective receives decoded
engineering values together with a per-iteration seed and returns either a
cost or ``(cost, metrics)``.  All randomness is derived from
``SeedSequence([seed, iteration])`` so a run, a sequence of ``step`` calls
and a resumed run all produce identical records.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import acquisition as acqmod
from .acquisition import AcquisitionConfig, PminGrid
from .gp import (Dataset, GpHyper, GpPosterior, HyperBox, center_hyper, fit_hyperparameters,
                 with_prior_mean)
from .paramspace import Bounds, decode_array

log = logging.getLogger(__name__)

LOG_SCHEMA_VERSION = 1
HYPER_MODES = ("fixed", "fit-once", "refit")

Objective = Callable[[np.ndarray, int], "float | tuple[float, dict]"]


class TuningComplete(RuntimeError):
    pass


@dataclass(frozen=True)
class HyperMode:
    """How GP hyperparameters are obtained.

    ``fixed`` uses ``hyper`` as given; ``fit-once`` fits by maximum
    likelihood on the initial design and keeps the result; ``refit`` fits
    again before every proposal.  ``prior_mean`` is a number or
    ``"empirical"`` (mean of the data used for the fit, or of all data so far
    in fixed mode).
    """

    kind: str = "fit-once"
    hyper: GpHyper | None = None
    family: str = "se"
    box: HyperBox = field(default_factory=HyperBox)
    restarts: int = 5
    prior_mean: float | str = "empirical"

    def __post_init__(self):
        if self.kind not in HYPER_MODES:
            raise ValueError(f"hyper mode must be one of {HYPER_MODES}, got {self.kind!r}")
        if self.kind == "fixed" and self.hyper is None:
            raise ValueError("fixed hyper mode needs hyperparameters")
        if not (self.prior_mean == "empirical" or isinstance(self.prior_mean, (int, float))):
            raise ValueError("prior_mean must be a number or 'empirical'")

    @classmethod
    def default_for(cls, kind: str) -> "HyperMode":
        """ES keeps one fit from the initial design; EI refits with Matern-5/2."""
        if kind == "ES":
            return cls("fit-once", family="se")
        return cls("refit", family="matern52")


@dataclass
class TuningProblem:
    objective: Objective
    bounds: Bounds
    budget: int
    init_design: int
    hyper_mode: HyperMode = field(default_factory=HyperMode)
    record_wall_time: bool = False

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.init_design < 1:
            raise ValueError("init_design must be >= 1")

    @property
    def total(self) -> int:
        return self.init_design + self.budget


@dataclass
class Record:
    iteration: int
    phase: str  # "init" or "bo"
    theta: list  # engineering units
    x: list  # encoded
    cost: float | None  # observed cost, None when the evaluation failed
    target: float  # value entered into the GP (imputed on failure)
    failed: bool
    error: str | None
    acquisition: float | None
    acquisition_error: float | None
    incumbent: list
    incumbent_cost: float
    best_observed: float | None
    metrics: dict
    wall_time: float | None = None

    def to_dict(self) -> dict:
        return {"schema_version": LOG_SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "Record":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != LOG_SCHEMA_VERSION:
            raise ValueError(f"unsupported log schema_version {version!r}")
        return cls(**d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


class TuningState:
    def __init__(self, problem: TuningProblem, acq: AcquisitionConfig, seed: int,
                 records: list[Record] | None = None, design=None):
        self.problem = problem
        # a fixed design (encoded points) replaces the acquisition: baselines
        self.design = None if design is None else np.atleast_2d(np.asarray(design, dtype=float))
        self.acq = acq
        self.seed = int(seed)
        self.records: list[Record] = list(records or [])
        self.snapshots: dict[int, PminGrid] = {}
        self._fit_once: GpHyper | None = None
        self.hyper: GpHyper | None = None  # hyperparameters behind the latest proposal
        dim = problem.bounds.dim
        self._init_X = np.random.default_rng(self.seed).random((problem.init_design, dim))
        if len(self.records) > self.total:
            raise ValueError("log holds more records than the run has evaluations")

    @property
    def total(self) -> int:
        return self.problem.total if self.design is None else len(self.design)

    @property
    def complete(self) -> bool:
        return len(self.records) >= self.total

    def phase(self, i: int) -> str:
        if i < self.problem.init_design:
            return "init"
        return "bo" if self.design is None else "baseline"

    @property
    def model_based(self) -> bool:
        return self.design is None

    @property
    def dataset(self) -> Dataset:
        dim = self.problem.bounds.dim
        if not self.records:
            return Dataset.empty(dim)
        return Dataset(np.array([r.x for r in self.records]), np.array([r.target for r in self.records]))

    def best_observed(self) -> Record | None:
        ok = [r for r in self.records if not r.failed]
        return min(ok, key=lambda r: (r.cost, r.iteration)) if ok else None

    def _seeds(self, i: int) -> list[int]:
        return [int(s) for s in np.random.SeedSequence([self.seed, i]).generate_state(6)]

    def _prior_mean(self, data: Dataset) -> float:
        pm = self.problem.hyper_mode.prior_mean
        if pm == "empirical":
            return float(np.mean(data.y)) if len(data) else 0.0
        return float(pm)

    def _fit(self, data: Dataset, seed: int) -> GpHyper:
        mode = self.problem.hyper_mode
        if len(data) < 2:
            return center_hyper(mode.family, data.X.shape[1], mode.box, self._prior_mean(data))
        pm = mode.prior_mean if mode.prior_mean == "empirical" else float(mode.prior_mean)
        res = fit_hyperparameters(data, mode.family, mode.box, mode.restarts, seed, prior_mean=pm)
        return res.hyper

    def hyper_for(self, i: int) -> GpHyper:
        mode = self.problem.hyper_mode
        data = self.dataset
        if mode.kind == "fixed":
            hyper = mode.hyper
            if mode.prior_mean == "empirical":
                return with_prior_mean(hyper, self._prior_mean(data))
            return with_prior_mean(hyper, float(mode.prior_mean))
        if mode.kind == "fit-once":
            if self._fit_once is None:
                init = Dataset(data.X[: self.problem.init_design], data.y[: self.problem.init_design])
                seed = int(np.random.SeedSequence([self.seed, 0, 1]).generate_state(1)[0])
                self._fit_once = self._fit(init, seed)
            return self._fit_once
        return self._fit(data, self._seeds(i)[5])

    def _impute(self) -> float:
        ok = [r.cost for r in self.records if not r.failed]
        worst = max((r.target for r in self.records), default=0.0) if not ok else max(ok)
        if self.hyper is not None:
            sig = self.hyper.kernel.signal_std
        elif self.problem.hyper_mode.kind == "fixed":
            sig = self.problem.hyper_mode.hyper.kernel.signal_std
        elif len(ok) >= 2:
            sig = float(np.std(ok))
        else:
            sig = 1.0
        return worst + 3.0 * sig

    def propose(self, i: int) -> tuple[np.ndarray, float | None, float | None]:
        if self.design is not None:
            return self.design[i], None, None
        if i < self.problem.init_design:
            return self._init_X[i], None, None
        s = self._seeds(i)
        self.hyper = self.hyper_for(i)
        post = GpPosterior(self.dataset, self.hyper)
        cfg = self.acq
        dim = self.problem.bounds.dim
        if cfg.kind == "EI":
            ei = acqmod.ExpectedImprovement(post)
            x, a = acqmod.maximize_acquisition(ei, dim, cfg.n_starts, s[2], tiebreak=post.mean,
                                               n_local=None, method="L-BFGS-B",
                                               maxiter=cfg.local_maxiter)
            return x, a, None
        grid = acqmod.build_representer_grid(post, cfg.n_representers, s[1])
        es = acqmod.EntropySearch(post, grid, cfg.n_function_samples, cfg.n_fantasies, s[3],
                                  cfg.fantasy)
        self.snapshots[i] = es.pmin
        x, _ = acqmod.maximize_acquisition(es, dim, cfg.n_starts, s[2], extra_points=grid.points,
                                           tiebreak=post.mean, n_local=cfg.n_local,
                                           method="Nelder-Mead", maxiter=cfg.local_maxiter)
        a = float(es(x[None, :])[0])
        return x, a, float(es.last_error[0])

    def incumbent(self, i: int) -> tuple[np.ndarray, float]:
        """ES: posterior-mean minimizer once the BO phase runs; otherwise best observed."""
        if self.model_based and self.acq.kind == "ES" and i >= self.problem.init_design:
            post = GpPosterior(self.dataset, self.hyper or self.hyper_for(i))
            x = acqmod.estimate_incumbent(post, self.acq.n_starts, self._seeds(i)[4])
            return x, float(post.mean(x[None, :])[0])
        best = self.best_observed()
        if best is None:
            r = min(self.records, key=lambda r: (r.target, r.iteration))
            return np.array(r.x), r.target
        return np.array(best.x), best.cost


def step(state: TuningState) -> TuningState:
    """One propose, evaluate, update cycle; appends exactly one record."""
    if state.complete:
        raise TuningComplete("tuning budget exhausted; nothing left to step")
    problem = state.problem
    i = len(state.records)
    t0 = time.perf_counter()
    x, a, a_err = state.propose(i)
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0) + 0.0
    theta = decode_array(x, problem.bounds)
    lo = np.minimum(problem.bounds.lower, problem.bounds.upper)
    hi = np.maximum(problem.bounds.lower, problem.bounds.upper)
    if not np.all((theta >= lo) & (theta <= hi)):  # safety: never evaluate outside the box
        raise AssertionError(f"proposal {theta} outside bounds")

    eval_seed = state._seeds(i)[0]
    failed, error, metrics = False, None, {}
    try:
        out = problem.objective(theta, eval_seed)
        cost, metrics = (out if isinstance(out, tuple) else (out, {}))
        cost = float(cost)
        if not math.isfinite(cost):
            raise ValueError(f"objective returned non-finite cost {cost!r}")
    except Exception as exc:  # a spoiled experiment; impute and move on
        failed, error, cost = True, f"{type(exc).__name__}: {exc}", None
        log.warning("evaluation %d failed: %s", i, error)
    target = state._impute() if failed else cost

    rec = Record(iteration=i, phase=state.phase(i),
                 theta=theta.tolist(), x=x.tolist(), cost=cost, target=float(target),
                 failed=failed, error=error, acquisition=a, acquisition_error=a_err,
                 incumbent=[], incumbent_cost=math.nan, best_observed=None,
                 metrics=_jsonable(metrics))
    state.records.append(rec)
    inc_x, inc_cost = state.incumbent(i)
    rec.incumbent = decode_array(inc_x, problem.bounds).tolist()
    rec.incumbent_cost = float(inc_cost)
    best = state.best_observed()
    rec.best_observed = None if best is None else best.cost
    if problem.record_wall_time:
        rec.wall_time = time.perf_counter() - t0
    return state


@dataclass
class TuningReport:
    records: list[Record]
    incumbent: list
    incumbent_cost: float
    incumbent_source: str
    best_observed_theta: list | None
    best_observed_cost: float | None
    seed: int
    hyper: dict | None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable({
            "schema_version": LOG_SCHEMA_VERSION,
            "seed": self.seed,
            "incumbent": self.incumbent,
            "incumbent_cost": self.incumbent_cost,
            "incumbent_source": self.incumbent_source,
            "best_observed_theta": self.best_observed_theta,
            "best_observed_cost": self.best_observed_cost,
            "n_evaluations": len(self.records),
            "n_failed": sum(r.failed for r in self.records),
            "hyper": self.hyper,
            "config": self.config,
            "history": [r.to_dict() for r in self.records],
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def report(state: TuningState, config: dict | None = None) -> TuningReport:
    if not state.records:
        raise ValueError("no records to report")
    last = state.records[-1]
    best = state.best_observed()
    es_phase = (state.model_based and state.acq.kind == "ES"
                and len(state.records) > state.problem.init_design)
    hyper = state.hyper.to_dict() if state.hyper is not None else None
    return TuningReport(
        records=list(state.records), incumbent=last.incumbent, incumbent_cost=last.incumbent_cost,
        incumbent_source="posterior-mean" if es_phase else "best-observed",
        best_observed_theta=None if best is None else best.theta,
        best_observed_cost=None if best is None else best.cost,
        seed=state.seed, hyper=hyper, config=dict(config or {}))


def start(problem: TuningProblem, acq: AcquisitionConfig, seed: int) -> TuningState:
    return TuningState(problem, acq, seed)


def resume(problem: TuningProblem, acq: AcquisitionConfig, seed: int,
           records: list[dict], design=None) -> TuningState:
    """Rebuild a state from logged records; further steps continue exactly
    where an uninterrupted run would have gone."""
    recs = [Record.from_dict(r) for r in records]
    for k, r in enumerate(recs):
        if r.iteration != k:
            raise ValueError(f"log record {k} has iteration {r.iteration}; log is not contiguous")
    state = TuningState(problem, acq, seed, recs, design)
    if state.model_based and len(recs) > problem.init_design:
        state.hyper = state.hyper_for(len(recs) - 1) if problem.hyper_mode.kind != "refit" else \
            GpHyper.from_dict(_last_hyper(state, len(recs) - 1))
    return state


def _last_hyper(state: TuningState, i: int) -> dict:
    # refit mode: redo the fit that preceded proposal i on the data available then
    data = state.dataset
    sub = Dataset(data.X[:i], data.y[:i])
    return state._fit(sub, state._seeds(i)[5]).to_dict()


def random_design(problem: TuningProblem, seed: int) -> np.ndarray:
    """Uniform points sharing their prefix with the initial design of a tuning run."""
    return np.random.default_rng(seed).random((problem.total, problem.bounds.dim))


def grid_design(dim: int, points_per_dim: int) -> np.ndarray:
    """Axis-aligned grid at cell centres of the encoded cube."""
    if points_per_dim < 1:
        raise ValueError("points_per_dim must be >= 1")
    axis = (np.arange(points_per_dim) + 0.5) / points_per_dim
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def run(problem: TuningProblem, acq: AcquisitionConfig, seed: int,
        callback: Callable[[Record], None] | None = None, config: dict | None = None,
        design=None) -> TuningReport:
    state = TuningState(problem, acq, seed, design=design)
    while not state.complete:
        step(state)
        if callback is not None:
            callback(state.records[-1])
    return report(state, config)
