"""Campaign configuration: a single YAML file validated into typed objects.

Every problem is reported as a :class:`ConfigError` naming the offending
field and, when the file is available, its line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .acquisition import AcquisitionConfig
from .bo import HyperMode
from .experiment import FUNCTIONALS, ExperimentSetup
from .gp import FAMILIES, PROFILES, HyperBox, profile_hyper
from .paramspace import Bounds, DomainError, default_bounds
from .plant import PlantParams

OUTPUT_ENV = "VALVETUNE_OUTPUT_DIR"
DEFAULT_OUTPUT = "valvetune-runs"
TRAJECTORY_MODES = ("none", "best", "all")


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str, line: int | None = None):
        where = f"{field_path}" + (f" (line {line})" if line is not None else "")
        super().__init__(f"{where}: {message}")
        self.field = field_path
        self.line = line


@dataclass(frozen=True)
class HyperConfig:
    mode: str = "default"  # default | profile | fit-once | refit
    profile: str | None = None
    family: str | None = None
    prior_mean: float | str = "empirical"
    restarts: int = 5


@dataclass(frozen=True)
class OutputConfig:
    trajectories: str = "best"
    figures: bool = True
    wall_time: bool = False  # off by default so logs are byte-reproducible


@dataclass(frozen=True)
class CampaignConfig:
    functional: str = "heur"
    budget: int = 10
    init_design: int = 10
    seed: int = 0
    output_dir: str | None = None
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    hyper: HyperConfig = field(default_factory=HyperConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    bounds: Bounds = field(default_factory=default_bounds)
    noise_std: float = 0.05
    filter_cutoff: float = 50.0
    nominal_b: float | None = None
    points_per_dim: int = 3  # grid baseline
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def setup(self) -> ExperimentSetup:
        return ExperimentSetup(plant=self.plant, nominal_b=self.nominal_b, noise_std=self.noise_std,
                               filter_cutoff=self.filter_cutoff)

    def hyper_mode(self) -> HyperMode:
        h = self.hyper
        base = HyperMode.default_for(self.acquisition.kind)
        family = h.family or base.family
        if h.mode == "default":
            return replace(base, prior_mean=h.prior_mean, restarts=h.restarts)
        if h.mode == "profile":
            name = h.profile or f"{self.functional}-{'ardSE' if self.functional == 'heur' else 'ardRQ'}"
            pm = 0.0 if h.prior_mean == "empirical" else float(h.prior_mean)
            return HyperMode("fixed", hyper=profile_hyper(name, self.bounds, pm),
                             prior_mean=h.prior_mean)
        return HyperMode(h.mode, family=family, box=HyperBox(), restarts=h.restarts,
                         prior_mean=h.prior_mean)

    def resolve_output_dir(self, override: str | None = None) -> Path:
        if override:
            return Path(override)
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))

    def to_dict(self) -> dict:
        """Nested mapping in the file layout; ``parse_config`` reads it back."""
        a = self.acquisition
        return {
            "functional": self.functional, "budget": self.budget, "init_design": self.init_design,
            "seed": self.seed, "output_dir": self.output_dir,
            "acquisition": {f.name: getattr(a, f.name) for f in fields(a) if f.name != "seed"},
            "hyper": {f.name: getattr(self.hyper, f.name) for f in fields(self.hyper)},
            "plant": self.plant.to_dict(), "bounds": self.bounds.to_dict(),
            "experiment": {"noise_std": self.noise_std, "filter_cutoff": self.filter_cutoff,
                           "nominal_b": self.nominal_b},
            "baseline": {"points_per_dim": self.points_per_dim},
            "outputs": {f.name: getattr(self.outputs, f.name) for f in fields(self.outputs)},
        }


# -- parsing -------------------------------------------------------------------


class _Lines:
    """Maps dotted field paths to source lines using the YAML node tree."""

    def __init__(self, text: str | None):
        self.root = None
        if text:
            try:
                self.root = yaml.compose(text)
            except yaml.YAMLError:
                self.root = None

    def __call__(self, path: str) -> int | None:
        node = self.root
        line = None
        for part in path.split("."):
            if not isinstance(node, yaml.MappingNode):
                break
            for key, value in node.value:
                if key.value == part:
                    line = key.start_mark.line + 1
                    node = value
                    break
            else:
                break
        return line


def _section(data, name: str, allowed, lines) -> dict:
    sub = data.get(name, {}) if name else data
    if sub is None:
        return {}
    if not isinstance(sub, dict):
        raise ConfigError(name, "must be a mapping", lines(name))
    unknown = sorted(set(sub) - set(allowed))
    if unknown:
        path = f"{name}.{unknown[0]}" if name else unknown[0]
        raise ConfigError(path, f"unknown key; expected one of {sorted(allowed)}", lines(path))
    return sub


def _number(sub: dict, key: str, path: str, lines, kind=float, minimum=None):
    value = sub[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"must be a number, got {value!r}", lines(path))
    if kind is int and int(value) != value:
        raise ConfigError(path, f"must be an integer, got {value!r}", lines(path))
    value = kind(value)
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value!r}", lines(path))
    return value


_TOP = {"functional", "budget", "init_design", "seed", "output_dir", "acquisition", "hyper", "plant",
        "bounds", "experiment", "baseline", "outputs"}


def parse_config(data: dict, text: str | None = None) -> CampaignConfig:
    lines = _Lines(text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping", 1)
    top = _section(data, "", _TOP, lines)
    kw: dict = {}

    if "functional" in top:
        if top["functional"] not in FUNCTIONALS:
            raise ConfigError("functional", f"must be one of {list(FUNCTIONALS)}", lines("functional"))
        kw["functional"] = top["functional"]
    for key, minimum in (("budget", 1), ("init_design", 1), ("seed", 0)):
        if key in top:
            kw[key] = _number(top, key, key, lines, int, minimum)
    if "output_dir" in top and top["output_dir"] is not None:
        kw["output_dir"] = str(top["output_dir"])

    acq_fields = {f.name for f in fields(AcquisitionConfig)} - {"seed"}
    acq = _section(top, "acquisition", acq_fields, lines)
    akw = {}
    for key, value in acq.items():
        path = f"acquisition.{key}"
        if key == "kind":
            if value not in ("EI", "ES"):
                raise ConfigError(path, "must be 'EI' or 'ES'", lines(path))
            akw[key] = value
        elif key == "fantasy":
            if value not in ("quadrature", "montecarlo"):
                raise ConfigError(path, "must be 'quadrature' or 'montecarlo'", lines(path))
            akw[key] = value
        else:
            akw[key] = _number(acq, key, path, lines, int, 1)
    kw["acquisition"] = AcquisitionConfig(**akw)

    hyp = _section(top, "hyper", {f.name for f in fields(HyperConfig)}, lines)
    hkw = dict(hyp)
    if "mode" in hkw and hkw["mode"] not in ("default", "profile", "fit-once", "refit"):
        raise ConfigError("hyper.mode", "must be one of default, profile, fit-once, refit",
                          lines("hyper.mode"))
    if hkw.get("profile") is not None and hkw["profile"] not in PROFILES:
        raise ConfigError("hyper.profile", f"unknown profile; known: {sorted(PROFILES)}",
                          lines("hyper.profile"))
    if hkw.get("family") is not None and hkw["family"] not in FAMILIES:
        raise ConfigError("hyper.family", f"must be one of {list(FAMILIES)}", lines("hyper.family"))
    if "prior_mean" in hkw and hkw["prior_mean"] != "empirical":
        hkw["prior_mean"] = _number(hyp, "prior_mean", "hyper.prior_mean", lines)
    if "restarts" in hkw:
        hkw["restarts"] = _number(hyp, "restarts", "hyper.restarts", lines, int, 1)
    kw["hyper"] = HyperConfig(**hkw)

    pl = _section(top, "plant", {f.name for f in fields(PlantParams)}, lines)
    pkw = {k: _number(pl, k, f"plant.{k}", lines) for k in pl}
    try:
        kw["plant"] = PlantParams(**pkw)
    except ValueError as exc:
        raise ConfigError("plant", str(exc), lines("plant")) from exc

    if "bounds" in top:
        b = top["bounds"]
        if not isinstance(b, dict):
            raise ConfigError("bounds", "must be a mapping", lines("bounds"))
        merged = default_bounds().to_dict()
        for name, entry in b.items():
            if name not in merged:
                raise ConfigError(f"bounds.{name}", f"unknown dimension; expected one of {list(merged)}",
                                  lines(f"bounds.{name}"))
            if not isinstance(entry, dict):
                raise ConfigError(f"bounds.{name}", "must be a mapping with lower/upper",
                                  lines(f"bounds.{name}"))
            merged[name] = {**merged[name], **entry}
        try:
            kw["bounds"] = Bounds.from_dict(merged)
        except DomainError as exc:
            path = f"bounds.{exc.dimension}" if exc.dimension else "bounds"
            raise ConfigError(path, str(exc).split(": ", 1)[-1], lines(path)) from exc

    ex = _section(top, "experiment", {"noise_std", "filter_cutoff", "nominal_b"}, lines)
    for key in ("noise_std", "filter_cutoff"):
        if key in ex:
            kw[key] = _number(ex, key, f"experiment.{key}", lines, float, 0.0)
    if ex.get("nominal_b") is not None:
        kw["nominal_b"] = _number(ex, "nominal_b", "experiment.nominal_b", lines)

    base = _section(top, "baseline", {"points_per_dim"}, lines)
    if "points_per_dim" in base:
        kw["points_per_dim"] = _number(base, "points_per_dim", "baseline.points_per_dim", lines, int, 1)

    out = _section(top, "outputs", {f.name for f in fields(OutputConfig)}, lines)
    okw = {}
    if "trajectories" in out:
        if out["trajectories"] not in TRAJECTORY_MODES:
            raise ConfigError("outputs.trajectories", f"must be one of {list(TRAJECTORY_MODES)}",
                              lines("outputs.trajectories"))
        okw["trajectories"] = out["trajectories"]
    for key in ("figures", "wall_time"):
        if key in out:
            if not isinstance(out[key], bool):
                raise ConfigError(f"outputs.{key}", "must be true or false", lines(f"outputs.{key}"))
            okw[key] = out[key]
    kw["outputs"] = OutputConfig(**okw)

    return CampaignConfig(**kw)


def load_config(path: str | Path) -> CampaignConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError("<syntax>", str(getattr(exc, "problem", exc)), line) from exc
    return parse_config(data, text)


def dump_config(cfg: CampaignConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)

