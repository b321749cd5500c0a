"""Command-line front end.

    valvetune tune CONFIG        run a tuning campaign
    valvetune baseline CONFIG    random or grid search with the same logging
    valvetune evaluate CONFIG    evaluate one parameter vector
    valvetune resume RUN_DIR     continue an interrupted campaign
    valvetune report RUN_DIR     re-render tables and figures from a run log

Exit status: 0 success, 2 configuration or usage error, 3 safety refusal,
1 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import bo, experiment
from .config import CampaignConfig, ConfigError, dump_config, load_config, parse_config
from .paramspace import DIM_NAMES, DomainError, ParamVector, check_in_bounds

log = logging.getLogger("valvetune")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3
LOG_NAME = "run.jsonl"
CAMPAIGN_NAME = "campaign.json"


# -- campaign plumbing ------------------------------------------------------------


class Campaign:
    """A configured run bound to an output directory."""

    def __init__(self, cfg: CampaignConfig, out: Path, method: str = "tune"):
        self.cfg = cfg
        self.out = out
        self.method = method  # "tune", "random" or "grid"
        self.setup = cfg.setup()
        self.last = None  # most recent Evaluation
        hm = cfg.hyper_mode() if method == "tune" else bo.HyperMode()
        self.problem = bo.TuningProblem(self.objective, cfg.bounds, cfg.budget, cfg.init_design, hm,
                                        record_wall_time=cfg.outputs.wall_time)

    def objective(self, theta: np.ndarray, seed: int):
        tv = ParamVector.from_array(theta)
        self.last = experiment.evaluate(tv, self.cfg.functional, self.setup, seed, self.cfg.bounds)
        return self.last.cost, self.last.metrics

    def design(self):
        if self.method == "random":
            return bo.random_design(self.problem, self.cfg.seed)
        if self.method == "grid":
            return bo.grid_design(self.cfg.bounds.dim, self.cfg.points_per_dim)
        return None

    def snapshot(self) -> dict:
        return {"method": self.method, "config": self.cfg.to_dict()}

    def prepare(self):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.yaml").write_text(dump_config(self.cfg))
        (self.out / CAMPAIGN_NAME).write_text(json.dumps({"method": self.method}, sort_keys=True) + "\n")

    def execute(self, state: bo.TuningState, max_evaluations: int | None = None) -> bo.TuningState:
        traj_dir = self.out / "trajectories"
        with open(self.out / LOG_NAME, "a") as fh:
            n = 0
            while not state.complete and (max_evaluations is None or n < max_evaluations):
                bo.step(state)
                rec = state.records[-1]
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
                fh.flush()
                if self.cfg.outputs.trajectories == "all" and self.last is not None and not rec.failed:
                    traj_dir.mkdir(exist_ok=True)
                    self.last.trajectory.to_csv(traj_dir / f"iter_{rec.iteration:03d}.csv")
                if rec.iteration in state.snapshots:
                    _write_pmin(self.out / "pmin", rec.iteration, state.snapshots[rec.iteration], self.cfg)
                self.last = None
                log.info("eval %d/%d  J=%s  best=%s", rec.iteration + 1, state.total,
                         "failed" if rec.failed else f"{rec.cost:.5f}", rec.best_observed)
                n += 1
        if state.complete:
            self.finish(state)
        return state

    def finish(self, state: bo.TuningState):
        rep = bo.report(state, self.snapshot())
        (self.out / "report.json").write_text(rep.to_json())
        best = state.best_observed()
        if best is not None and self.cfg.outputs.trajectories != "none":
            ev = experiment.evaluate(ParamVector.from_array(best.theta), self.cfg.functional, self.setup,
                                     state._seeds(best.iteration)[0], self.cfg.bounds)
            tdir = self.out / "trajectories"
            tdir.mkdir(exist_ok=True)
            ev.trajectory.to_csv(tdir / "best.csv")
            if ev.frequency_response is not None:
                ev.frequency_response.to_csv(self.out / "frequency_response.csv")
        render(self.out, figures=self.cfg.outputs.figures)


def _write_pmin(folder: Path, iteration: int, grid, cfg: CampaignConfig):
    from .paramspace import decode_array

    folder.mkdir(exist_ok=True)
    theta = decode_array(grid.points, cfg.bounds)
    header = [f"u_{n}" for n in DIM_NAMES] + list(DIM_NAMES) + ["mass"]
    data = np.column_stack([grid.points, theta, grid.mass])
    np.savetxt(folder / f"pmin_{iteration:03d}.csv", data, delimiter=",", header=",".join(header),
               comments="", fmt="%.10g")


def read_log(path: Path) -> list[dict]:
    records = []
    with open(path) as fh:
        for k, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{k}: invalid JSON ({exc.msg})") from exc
    return records


def write_costs_csv(records: list[dict], path: Path):
    cols = ["iteration", "phase", "cost", "target", "failed", "best_observed", "incumbent_cost",
            "acquisition", *DIM_NAMES]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            w.writerow([r["iteration"], r["phase"], _fmt(r["cost"]), _fmt(r["target"]), int(r["failed"]),
                        _fmt(r["best_observed"]), _fmt(r["incumbent_cost"]), _fmt(r["acquisition"]),
                        *(_fmt(v) for v in r["theta"])])


def _fmt(v):
    return "" if v is None else repr(float(v))


def render(out: Path, figures: bool = True):
    records = read_log(out / LOG_NAME)
    write_costs_csv(records, out / "costs.csv")
    if not figures:
        return
    from . import plotting

    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    plotting.cost_vs_iteration(records, figs / "cost_vs_iteration.png")
    best = out / "trajectories" / "best.csv"
    if best.exists():
        from .plant import Trajectory

        tr = Trajectory.from_csv(best)
        plotting.trajectory(tr.t, tr.r, tr.y, figs / "best_trajectory.png", u=tr.u)
    fr = out / "frequency_response.csv"
    if fr.exists():
        data = np.loadtxt(fr, delimiter=",", skiprows=1, ndmin=2)
        plotting.frequency_response(data[:, 0], data[:, 1], data[:, 2], figs / "frequency_response.png")
    snaps = sorted((out / "pmin").glob("pmin_*.csv")) if (out / "pmin").exists() else []
    if snaps:
        data = np.loadtxt(snaps[-1], delimiter=",", skiprows=1, ndmin=2)
        plotting.pmin_projection(data[:, :4], data[:, -1], figs / "pmin_last.png")


# -- commands ----------------------------------------------------------------------


def _load(args) -> CampaignConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_tune(args, method: str = "tune") -> int:
    cfg = _load(args)
    if method == "tune" and getattr(args, "budget", None) is not None:
        cfg = replace(cfg, budget=args.budget)
    out = cfg.resolve_output_dir(args.out)
    if (out / LOG_NAME).exists() and not args.force:
        print(f"error: {out / LOG_NAME} exists; use 'resume' or --force", file=sys.stderr)
        return EXIT_CONFIG
    if (out / LOG_NAME).exists():
        (out / LOG_NAME).unlink()
    camp = Campaign(cfg, out, method)
    camp.prepare()
    state = bo.TuningState(camp.problem, cfg.acquisition, cfg.seed, design=camp.design())
    camp.execute(state, args.max_evaluations)
    _summary(state, out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    return cmd_tune(args, method=args.method)


def cmd_resume(args) -> int:
    out = Path(args.run_dir)
    try:
        text = (out / "config.yaml").read_text()
        meta = json.loads((out / CAMPAIGN_NAME).read_text())
    except OSError as exc:
        print(f"error: {out} is not a run directory ({exc.strerror})", file=sys.stderr)
        return EXIT_CONFIG
    cfg = parse_config(yaml.safe_load(text), text)
    camp = Campaign(cfg, out, meta["method"])
    records = read_log(out / LOG_NAME) if (out / LOG_NAME).exists() else []
    state = bo.resume(camp.problem, cfg.acquisition, cfg.seed, records, design=camp.design())
    if state.complete:
        print(f"{out}: campaign already complete ({len(records)} evaluations)")
        camp.finish(state)
        return EXIT_OK
    camp.execute(state, args.max_evaluations)
    _summary(state, out)
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.run_dir)
    if not (out / LOG_NAME).exists():
        print(f"error: no {LOG_NAME} in {out}", file=sys.stderr)
        return EXIT_CONFIG
    render(out, figures=not args.no_figures)
    records = read_log(out / LOG_NAME)
    ok = [r for r in records if not r["failed"]]
    print(f"{len(records)} evaluations ({len(records) - len(ok)} failed)")
    if ok:
        best = min(ok, key=lambda r: (r["cost"], r["iteration"]))
        print(f"best observed J = {best['cost']:.6g} at iteration {best['iteration']}: "
              + ", ".join(f"{n}={v:.6g}" for n, v in zip(DIM_NAMES, best["theta"])))
    last = records[-1] if records else None
    if last is not None:
        print("incumbent: " + ", ".join(f"{n}={v:.6g}" for n, v in zip(DIM_NAMES, last["incumbent"]))
              + f"  (J estimate {last['incumbent_cost']:.6g})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    theta = ParamVector(*args.theta)
    try:
        check_in_bounds(theta, cfg.bounds)
    except DomainError as exc:
        print(f"refused: {exc}. Parameters outside the configured safety bounds are never "
              "applied to the plant.", file=sys.stderr)
        return EXIT_REFUSED
    setup = cfg.setup()
    ev = experiment.evaluate(theta, cfg.functional, setup, cfg.seed, cfg.bounds)
    result = {"theta": theta.to_dict(), "functional": cfg.functional, "seed": cfg.seed,
              "J": ev.cost, "metrics": ev.metrics}
    if args.secondary:
        result["secondary"] = experiment.evaluate_secondary(theta, setup, cfg.seed, cfg.bounds).to_dict()
    if args.json:
        print(json.dumps(bo._jsonable(result), indent=2, sort_keys=True))
    else:
        _print_evaluation(result)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "evaluation.json").write_text(json.dumps(bo._jsonable(result), indent=2, sort_keys=True) + "\n")
        ev.trajectory.to_csv(out / "trajectory.csv")
        if ev.frequency_response is not None:
            ev.frequency_response.to_csv(out / "frequency_response.csv")
    return EXIT_OK


def _print_evaluation(result: dict):
    print("theta: " + ", ".join(f"{k}={v:.6g}" for k, v in result["theta"].items()))
    print(f"J_{result['functional']} = {result['J']:.6f}")
    m = result["metrics"]
    if result["functional"] == "heur":
        print(f"{'step':>4} {'t [s]':>6} {'from':>6} {'to':>6} {'T90 [ms]':>9} {'overshoot [deg]':>16}")
        for k, s in enumerate(m.get("steps", [])):
            print(f"{k:>4} {s['time_s']:>6.1f} {s['from_deg']:>6.1f} {s['to_deg']:>6.1f} "
                  f"{1e3 * s['t90_s']:>9.1f} {s['overshoot_deg']:>16.4f}")
    else:
        for key in ("S_inf", "T_2", "f_s_hz", "dropped_bins"):
            if key in m:
                print(f"{key:>12} = {m[key]:.6g}")
    for key, value in result.get("secondary", {}).items():
        print(f"{key} = {value:.6g}")


def _summary(state: bo.TuningState, out: Path):
    best = state.best_observed()
    done = "complete" if state.complete else "paused"
    msg = f"{len(state.records)}/{state.total} evaluations ({done}); output in {out}"
    if best is not None:
        msg += f"; best observed J = {best.cost:.6g}"
    print(msg)


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="valvetune", description="Bayesian-optimization tuning of ADRC "
                                "throttle-valve controllers on a simulated plant.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def campaign_args(sp):
        sp.add_argument("config", help="YAML campaign config")
        sp.add_argument("--out", help="output directory (default: config, then $VALVETUNE_OUTPUT_DIR)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--force", action="store_true", help="overwrite an existing run log")
        sp.add_argument("--max-evaluations", type=int, help="stop after this many new evaluations")

    t = sub.add_parser("tune", help="run a Bayesian-optimization campaign")
    campaign_args(t)
    t.add_argument("--budget", type=int, help="override the BO budget")
    t.set_defaults(func=cmd_tune)

    b = sub.add_parser("baseline", help="random or grid search with the same logging")
    campaign_args(b)
    b.add_argument("--method", choices=("random", "grid"), default="random")
    b.set_defaults(func=cmd_baseline)

    e = sub.add_parser("evaluate", help="evaluate one parameter vector")
    e.add_argument("config")
    e.add_argument("--theta", type=float, nargs=4, required=True, metavar=("T_SET", "T_OBS", "P1", "P2"),
                   help="t_set [s], t_obs [s], p1 [1/s], p2 [1/s]")
    e.add_argument("--seed", type=int)
    e.add_argument("--secondary", action="store_true", help="also run robustness/noise/disturbance tests")
    e.add_argument("--json", action="store_true")
    e.add_argument("--out", help="write evaluation.json and trajectory CSV here")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("resume", help="continue an interrupted campaign")
    r.add_argument("run_dir")
    r.add_argument("--max-evaluations", type=int)
    r.set_defaults(func=cmd_resume)

    rp = sub.add_parser("report", help="rebuild costs.csv and figures from a run log")
    rp.add_argument("run_dir")
    rp.add_argument("--no-figures", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
