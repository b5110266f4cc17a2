"""INI-style run configuration with dotted, module-named sections.

Every key has a default; a file only lists what it changes::

    [run]
    scenario = course.scn     ; relative to this file
    trials = 20
    seed = 0

    [sgp]
    length_scale = 1.0

    [mapping.traversability]
    sigma_crit = off          ; disables the uncertainty mask

Sections: run, world.lidar, sgp, mapping.grid, mapping.footprint,
mapping.traversability, planner, nav.subgoal, nav.controller, nav.episode.
Per-cycle RNG seeds are derived from the run seed, so the LiDAR and planner
seeds are not configurable here.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, fields, replace

from .mapping import Footprint, GridSpec, TraversabilityParams
from .nav import ControllerParams, EpisodeParams, NavConfig, SubgoalParams
from .planner import PlannerParams
from .sgp import RbfKernel
from .world import LidarSpec


class ConfigError(ValueError):
    """Bad configuration; the message carries file and line when known."""


@dataclass(frozen=True)
class RunSettings:
    scenario: str | None = None
    trials: int = 1
    seed: int = 0


# section -> key -> kind; kinds: int, float, floats, bool, str, sigma
SCHEMA: dict[str, dict[str, str]] = {
    "run": {"scenario": "str", "trials": "int", "seed": "int"},
    "world.lidar": {
        "max_range": "float",
        "azimuth_count": "int",
        "elevation_angles": "floats",
        "noise_std": "float",
        "mount_height": "float",
    },
    "sgp": {
        "signal_variance": "float",
        "length_scale": "float",
        "noise_variance": "float",
        "inducing_count": "int",
        "inducing_strategy": "str",
    },
    "mapping.grid": {"width": "float", "height": "float", "resolution": "float"},
    "mapping.footprint": {"half_extent": "float"},
    "mapping.traversability": {
        "weights": "floats",
        "s_crit": "float",
        "f_crit": "float",
        "zeta_crit": "float",
        "sigma_crit": "sigma",
        "tau_crit": "float",
    },
    "planner": {
        "max_iterations": "int",
        "steer_step": "float",
        "neighbor_radius_gamma": "float",
        "resample_spacing": "float",
        "coll_max": "int",
        "goal_tolerance": "float",
        "goal_bias": "float",
        "refine_fraction": "float",
        "shortcut": "bool",
    },
    "nav.subgoal": {"alpha_goal": "float", "alpha_boundary": "float", "radius": "float"},
    "nav.controller": {f.name: "float" for f in fields(ControllerParams)},
    "nav.episode": {
        "max_steps": "int",
        "no_progress_timeout": "float",
        "no_progress_distance": "float",
        "max_roll": "float",
        "max_pitch": "float",
        "pose_noise_std": "float",
        "attitude_noise_std": "float",
    },
}


def _parse_value(kind: str, raw: str):
    raw = raw.strip()
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "sigma":
        if raw.lower() in ("off", "inf", "none"):
            return math.inf
        return float(raw)
    if kind == "floats":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    v = float(raw)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {raw!r}")
    return v


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "off" if v == math.inf else repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def defaults(config: NavConfig | None = None, run: RunSettings | None = None) -> dict[str, dict]:
    """Resolved values of every key, grouped by section."""
    c = config or NavConfig()
    r = run or RunSettings()
    return {
        "run": {"scenario": r.scenario or "", "trials": r.trials, "seed": r.seed},
        "world.lidar": {
            "max_range": c.lidar.max_range,
            "azimuth_count": c.lidar.azimuth_count,
            "elevation_angles": tuple(float(a) for a in c.lidar.elevation_angles),
            "noise_std": c.lidar.noise_std,
            "mount_height": c.mount_height,
        },
        "sgp": {
            "signal_variance": c.kernel.signal_variance,
            "length_scale": c.kernel.length_scale,
            "noise_variance": c.noise_variance,
            "inducing_count": c.inducing_count,
            "inducing_strategy": c.inducing_strategy,
        },
        "mapping.grid": {"width": c.grid.width, "height": c.grid.height, "resolution": c.grid.resolution},
        "mapping.footprint": {"half_extent": c.footprint.half_extent},
        "mapping.traversability": {
            "weights": c.traversability.weights,
            "s_crit": c.traversability.s_crit,
            "f_crit": c.traversability.f_crit,
            "zeta_crit": c.traversability.zeta_crit,
            "sigma_crit": c.traversability.sigma_crit,
            "tau_crit": c.traversability.tau_crit,
        },
        "planner": {
            "max_iterations": c.planner.max_iterations,
            "steer_step": c.planner.steer_step,
            "neighbor_radius_gamma": c.planner.neighbor_radius_gamma,
            "resample_spacing": c.planner.resample_spacing,
            "coll_max": c.planner.coll_max,
            "goal_tolerance": c.planner.goal_tolerance,
            "goal_bias": c.planner.goal_bias,
            "refine_fraction": c.planner.refine_fraction,
            "shortcut": c.shortcut,
        },
        "nav.subgoal": {
            "alpha_goal": c.subgoal.alpha_goal,
            "alpha_boundary": c.subgoal.alpha_boundary,
            "radius": c.subgoal.radius,
        },
        "nav.controller": {f.name: getattr(c.controller, f.name) for f in fields(ControllerParams)},
        "nav.episode": {f.name: getattr(c.episode, f.name) for f in fields(EpisodeParams)},
    }


def from_sections(sections: dict[str, dict]) -> tuple[NavConfig, RunSettings]:
    """Build typed bundles from already-parsed section values.

    Missing keys keep their defaults. ``sigma_crit`` defaults to
    0.3 times the signal variance.
    """
    v = defaults()
    sigma_given = "sigma_crit" in sections.get("mapping.traversability", {})
    for sec, kv in sections.items():
        v[sec].update(kv)
    lid, gp, tr, pl = v["world.lidar"], v["sgp"], v["mapping.traversability"], v["planner"]
    sigma_crit = tr["sigma_crit"] if sigma_given else 0.3 * gp["signal_variance"]
    cfg = NavConfig(
        lidar=LidarSpec(lid["max_range"], lid["azimuth_count"], tuple(lid["elevation_angles"]), lid["noise_std"]),
        mount_height=lid["mount_height"],
        kernel=RbfKernel(gp["signal_variance"], gp["length_scale"]),
        noise_variance=gp["noise_variance"],
        inducing_count=gp["inducing_count"],
        inducing_strategy=gp["inducing_strategy"],
        grid=GridSpec(**v["mapping.grid"]),
        footprint=Footprint(**v["mapping.footprint"]),
        traversability=TraversabilityParams(
            tuple(tr["weights"]), tr["s_crit"], tr["f_crit"], tr["zeta_crit"], sigma_crit, tr["tau_crit"]
        ),
        planner=PlannerParams(**{k: val for k, val in pl.items() if k != "shortcut"}),
        shortcut=bool(pl["shortcut"]),
        subgoal=SubgoalParams(**v["nav.subgoal"]),
        controller=ControllerParams(**v["nav.controller"]),
        episode=EpisodeParams(**v["nav.episode"]),
    )
    if cfg.inducing_strategy not in ("grid_stride", "uniform_random"):
        raise ValueError(f"unknown inducing_strategy {cfg.inducing_strategy!r}")
    r = v["run"]
    run = RunSettings(r["scenario"] or None, int(r["trials"]), int(r["seed"]))
    if run.trials < 1:
        raise ValueError("trials must be >= 1")
    return cfg, run


def _line(text: str, section: str, key: str | None = None) -> int | None:
    in_sec = False
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("["):
            in_sec = line.strip("[] ") == section
            if in_sec and key is None:
                return n
        elif in_sec and key is not None and line.split("=", 1)[0].strip() == key:
            return n
    return None


def loads(text: str, source: str = "<config>") -> tuple[NavConfig, RunSettings]:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    sections: dict[str, dict] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}:{_line(text, sec)}: unknown section [{sec}]")
        out = {}
        for key, raw in cp[sec].items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{source}:{_line(text, sec, key)}: unknown key {key!r} in [{sec}]")
            try:
                out[key] = _parse_value(SCHEMA[sec][key], raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{_line(text, sec, key)}: [{sec}] {key}: {exc}") from None
        sections[sec] = out
    try:
        return from_sections(sections)
    except (ValueError, TypeError) as exc:
        # the offending key is not always known; point at the file
        raise ConfigError(f"{source}: {exc}") from None


def load(path) -> tuple[NavConfig, RunSettings]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg, run = loads(text, str(path))
    if run.scenario and not os.path.isabs(run.scenario):
        run = replace(run, scenario=os.path.join(os.path.dirname(os.path.abspath(path)), run.scenario))
    return cfg, run


def dumps(config: NavConfig, run: RunSettings | None = None) -> str:
    """Full resolved configuration as INI text (round-trips through loads)."""
    lines = []
    for sec, kv in defaults(config, run).items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_format_value(val)}" for k, val in kv.items())
        lines.append("")
    return "\n".join(lines)


def to_json_dict(config: NavConfig, run: RunSettings | None = None) -> dict:
    """Resolved configuration for embedding in JSON reports (inf as "off")."""
    out = {}
    for sec, kv in defaults(config, run).items():
        out[sec] = {k: ("off" if val == math.inf else list(val) if isinstance(val, tuple) else val) for k, val in kv.items()}
    return out


def from_json_dict(d: dict) -> tuple[NavConfig, RunSettings]:
    sections = {}
    for sec, kv in d.items():
        sections[sec] = {k: (math.inf if val == "off" else tuple(val) if isinstance(val, list) else val) for k, val in kv.items()}
    return from_sections(sections)
