"""Scenario files and the built-in terrain presets.

A scenario file is INI-style text::

    # terranav-scenario v1
    [scenario]
    name = hill-course
    seed = 7
    base_height = 0.0
    start = 0.0, 0.0, 0.0        ; x, y, yaw
    goal = 16.0, 0.0

    [primitive.0]
    type = gaussian_hill
    center = 8.0, 0.0
    amplitude = 2.0
    spread = 1.3

Primitive types and their keys: ``gaussian_hill`` (center, amplitude, spread),
``ridge`` (start, end, height, width), ``step`` (point, normal, rise,
softness), ``plane`` (gradient).
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass

import numpy as np

from .world import GaussianHill, Plane, Ridge, Step, TerrainField, make_field

HEADER = "# terranav-scenario v1"
PRESETS = ("flat", "hill-course", "ridge-valley")


class ScenarioError(ValueError):
    """Malformed scenario file."""


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    field: TerrainField
    start: tuple[float, float, float]
    goal: tuple[float, float]

    def bounds(self, margin: float = 5.0) -> tuple[float, float, float, float]:
        """Box around start and goal used for probing and plotting."""
        xs = (self.start[0], self.goal[0])
        ys = (self.start[1], self.goal[1])
        return min(xs) - margin, max(xs) + margin, min(ys) - margin, max(ys) + margin


def _fmt(v: float) -> str:
    return repr(float(v))


def _vec(vals) -> str:
    return ", ".join(_fmt(v) for v in vals)


def _primitive_items(p) -> list[tuple[str, str]]:
    if isinstance(p, GaussianHill):
        return [("type", p.kind), ("center", _vec(p.center)), ("amplitude", _fmt(p.amplitude)), ("spread", _fmt(p.spread))]
    if isinstance(p, Ridge):
        return [
            ("type", p.kind),
            ("start", _vec(p.start)),
            ("end", _vec(p.end)),
            ("height", _fmt(p.height_)),
            ("width", _fmt(p.width)),
        ]
    if isinstance(p, Step):
        return [
            ("type", p.kind),
            ("point", _vec(p.point)),
            ("normal", _vec(p.normal)),
            ("rise", _fmt(p.rise)),
            ("softness", _fmt(p.softness)),
        ]
    if isinstance(p, Plane):
        return [("type", p.kind), ("gradient", _vec(p.gradient_))]
    raise TypeError(f"unknown primitive {p!r}")


def dumps(sc: Scenario) -> str:
    lines = [
        HEADER,
        "[scenario]",
        f"name = {sc.name}",
        f"seed = {int(sc.seed)}",
        f"base_height = {_fmt(sc.field.base_height)}",
        f"start = {_vec(sc.start)}",
        f"goal = {_vec(sc.goal)}",
    ]
    for i, p in enumerate(sc.field.primitives):
        lines.append("")
        lines.append(f"[primitive.{i}]")
        lines.extend(f"{k} = {v}" for k, v in _primitive_items(p))
    return "\n".join(lines) + "\n"


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    in_sec = False
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("["):
            in_sec = line == f"[{section}]"
            if in_sec and key is None:
                return n
            continue
        if in_sec and key is not None and line.split("=", 1)[0].strip() == key:
            return n
    return None


def _where(source: str, text: str, section: str, key: str | None = None) -> str:
    n = _line_of(text, section, key)
    return f"{source}:{n}" if n else source


def _floats(s: str, n: int, where: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in s.split(","))
    except ValueError:
        raise ScenarioError(f"{where}: expected {n} comma-separated numbers, got {s!r}") from None
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        raise ScenarioError(f"{where}: expected {n} finite numbers, got {s!r}")
    return vals


_PRIM_KEYS = {
    "gaussian_hill": {"center": 2, "amplitude": 1, "spread": 1},
    "ridge": {"start": 2, "end": 2, "height": 1, "width": 1},
    "step": {"point": 2, "normal": 2, "rise": 1, "softness": 1},
    "plane": {"gradient": 2},
}


def _build(kind: str, vals: dict):
    one = {k: v[0] for k, v in vals.items() if len(v) == 1}
    if kind == "gaussian_hill":
        return GaussianHill(vals["center"], one["amplitude"], one["spread"])
    if kind == "ridge":
        return Ridge(vals["start"], vals["end"], one["height"], one["width"])
    if kind == "step":
        return Step(vals["point"], vals["normal"], one["rise"], one.get("softness", 0.0))
    return Plane(vals["gradient"])


def loads(text: str, source: str = "<scenario>") -> Scenario:
    first = text.lstrip().splitlines()[0].strip() if text.strip() else ""
    if first != HEADER:
        raise ScenarioError(f"{source}:1: missing header {HEADER!r}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from None
    if not cp.has_section("scenario"):
        raise ScenarioError(f"{source}: missing [scenario] section")
    sec = cp["scenario"]

    def get(key, default=None):
        if key in sec:
            return sec[key]
        if default is None:
            raise ScenarioError(f"{_where(source, text, 'scenario')}: missing key {key!r}")
        return default

    try:
        seed = int(get("seed", "0"))
    except ValueError:
        raise ScenarioError(f"{_where(source, text, 'scenario', 'seed')}: seed must be an integer") from None
    base = _floats(get("base_height", "0.0"), 1, _where(source, text, "scenario", "base_height"))[0]
    start_s = get("start", "0, 0, 0")
    n_start = len(start_s.split(","))
    start = _floats(start_s, 3 if n_start == 3 else 2, _where(source, text, "scenario", "start"))
    if len(start) == 2:
        start = (start[0], start[1], 0.0)
    goal = _floats(get("goal"), 2, _where(source, text, "scenario", "goal"))

    prims = []
    names = [s for s in cp.sections() if s.startswith("primitive.")]
    for name in names:
        ps = cp[name]
        kind = ps.get("type")
        if kind not in _PRIM_KEYS:
            raise ScenarioError(f"{_where(source, text, name, 'type')}: unknown primitive type {kind!r}")
        vals = {}
        for key, n in _PRIM_KEYS[kind].items():
            if key not in ps:
                if kind == "step" and key == "softness":
                    continue
                raise ScenarioError(f"{_where(source, text, name)}: {kind} needs key {key!r}")
            vals[key] = _floats(ps[key], n, _where(source, text, name, key))
        extra = set(ps) - set(_PRIM_KEYS[kind]) - {"type"}
        if extra:
            raise ScenarioError(f"{_where(source, text, name)}: unknown keys {sorted(extra)}")
        try:
            prims.append(_build(kind, vals))
        except (ValueError, ZeroDivisionError) as exc:
            raise ScenarioError(f"{_where(source, text, name)}: {exc}") from None
    return Scenario(sec.get("name", "unnamed"), seed, make_field(prims, base, seed), start, goal)


def load(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), str(path))


def save(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(sc))


# -- presets --------------------------------------------------------------------


def _round(v: float) -> float:
    # short decimal literals keep scenario files readable
    return round(float(v), 3)


def hill_course(seed: int = 0) -> Scenario:
    """Gentle hills plus one steep peak sitting on the start-goal line."""
    rng = np.random.default_rng(seed)
    goal = (16.0, 0.0)
    prims = [GaussianHill((8.0, _round(rng.uniform(-0.3, 0.3))), _round(rng.uniform(1.8, 2.2)), 1.3)]
    n_small = int(rng.integers(2, 5))
    for _ in range(n_small):
        side = 1.0 if rng.random() < 0.5 else -1.0
        cx = _round(rng.uniform(2.0, 14.0))
        cy = _round(side * rng.uniform(4.5, 7.0))
        prims.append(GaussianHill((cx, cy), _round(rng.uniform(0.2, 0.4)), _round(rng.uniform(1.8, 2.5))))
    return Scenario("hill-course", seed, make_field(prims, 0.0, seed), (0.0, 0.0, 0.0), goal)


def ridge_valley(seed: int = 0) -> Scenario:
    """Two ridges across the route, each broken by one saddle, over rolling ground."""
    rng = np.random.default_rng(seed)
    goal = (18.0, 0.0)
    prims = []
    for x in (6.0, 12.0):
        xr = _round(x + rng.uniform(-0.5, 0.5))
        tilt = _round(rng.uniform(-0.6, 0.6))
        gap_c = _round(rng.uniform(-2.5, 2.5))
        half_gap = 2.5
        height = _round(rng.uniform(0.7, 0.9))
        width = 0.8
        lo, hi = gap_c - half_gap, gap_c + half_gap
        # ridge line x = xr + tilt * y / 9, cut open around the saddle
        def at(y):
            return (_round(xr + tilt * y / 9.0), _round(y))

        prims.append(Ridge(at(-9.0), at(lo), height, width))
        prims.append(Ridge(at(hi), at(9.0), height, width))
    for _ in range(3):
        c = (_round(rng.uniform(1.0, 17.0)), _round(rng.uniform(-6.0, 6.0)))
        prims.append(GaussianHill(c, _round(rng.uniform(0.1, 0.25)), _round(rng.uniform(1.5, 2.5))))
    return Scenario("ridge-valley", seed, make_field(prims, 0.0, seed), (0.0, 0.0, 0.0), goal)


def flat(seed: int = 0) -> Scenario:
    return Scenario("flat", seed, make_field([], 0.0, seed), (0.0, 0.0, 0.0), (10.0, 0.0))


def generate(preset: str, seed: int = 0) -> Scenario:
    makers = {"flat": flat, "hill-course": hill_course, "ridge-valley": ridge_valley}
    if preset not in makers:
        raise ScenarioError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    return makers[preset](seed)


def probe_max_slope(sc: Scenario, n: int = 200, margin: float = 5.0) -> float:
    """Largest true slope (rad) on an n x n grid over the scenario box."""
    x0, x1, y0, y1 = sc.bounds(margin)
    X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
    return float(np.max(sc.field.slope(X, Y)))
