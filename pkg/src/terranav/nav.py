"""Sub-goal selection, waypoint following and the closed-loop episode.

One episode repeats sense -> fit -> map -> plan -> drive until the robot is
within the goal tolerance, runs out of steps, gets stuck or tips past the
safety limits. Everything random is derived from the episode seed, so a
(config, seed) pair always yields the same trace.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import mapping, planner, sgp, world
from .mapping import Footprint, GridSpec, MapStack, TraversabilityParams
from .planner import PlannerParams, PlanNode, PlanResult
from .world import LidarSpec, Pose, TerrainField

TRACE_FIELDS = ("t", "x", "y", "z", "roll", "pitch", "yaw", "v", "omega", "phase")


class NoFrontierError(RuntimeError):
    """The planner produced no frontier to use as a sub-goal."""


# -- sub-goal selection ---------------------------------------------------------


@dataclass(frozen=True)
class SubgoalParams:
    alpha_goal: float = 0.9
    alpha_boundary: float = 0.1
    radius: float = 6.0

    def __post_init__(self):
        if self.alpha_goal < 0 or self.alpha_boundary < 0 or not self.alpha_goal + self.alpha_boundary > 0:
            raise ValueError("subgoal weights must be >= 0 with a positive sum")
        if not self.radius > 0:
            raise ValueError("subgoal radius must be > 0")


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def subgoal_scores(frontiers: Sequence[PlanNode], goal, params: SubgoalParams) -> np.ndarray:
    """Weighted, min-max normalised goal distance plus boundary distance."""
    xy = np.array([n.position[:2] for n in frontiers], dtype=float).reshape(-1, 2)
    g = np.asarray(goal, dtype=float)
    D = np.hypot(xy[:, 0] - g[0], xy[:, 1] - g[1])
    E = params.radius - np.hypot(xy[:, 0], xy[:, 1])
    return params.alpha_goal * _minmax(D) + params.alpha_boundary * _minmax(E)


def select_subgoal(frontiers: Sequence[PlanNode], goal, params: SubgoalParams) -> PlanNode:
    """Frontier with the lowest score; ties go to the lowest index."""
    if len(frontiers) == 0:
        raise NoFrontierError("no frontier nodes to choose a sub-goal from")
    return frontiers[int(np.argmin(subgoal_scores(frontiers, goal, params)))]


# -- robot and controller -------------------------------------------------------


@dataclass(frozen=True)
class RobotState:
    pose: Pose
    linear_velocity: float = 0.0
    angular_velocity: float = 0.0
    clock: float = 0.0


@dataclass(frozen=True)
class ControllerParams:
    cruise_speed: float = 0.5
    max_angular: float = 1.0
    heading_gain: float = 2.0
    waypoint_proximity: float = 0.5
    subgoal_proximity: float = 1.0
    dt: float = 0.1

    def __post_init__(self):
        for name in ("cruise_speed", "max_angular", "heading_gain", "waypoint_proximity", "subgoal_proximity", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.dt > 0.1 + 1e-12:
            raise ValueError("dt must be <= 0.1 s")


def diff_drive_step(
    state: RobotState, v_cmd: float, w_cmd: float, dt: float, field_: TerrainField, footprint: Footprint
) -> RobotState:
    """Unicycle update followed by settling the footprint onto the terrain."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    p = state.pose
    x = p.x + v_cmd * math.cos(p.yaw) * dt
    y = p.y + v_cmd * math.sin(p.yaw) * dt
    yaw = world.wrap_angle(p.yaw + w_cmd * dt)
    z, roll, pitch = world.attitude_on_terrain(field_, x, y, yaw, footprint.half_extent)
    return RobotState(Pose(x, y, z, roll, pitch, yaw), float(v_cmd), float(w_cmd), state.clock + dt)


def _xy(p) -> tuple[float, float]:
    if isinstance(p, PlanNode):
        return p.position[0], p.position[1]
    return float(p[0]), float(p[1])


def follow(state: RobotState, path: Sequence, ctrl: ControllerParams, start_index: int = 0):
    """Heading-proportional command toward the active waypoint.

    Returns ``(v_cmd, w_cmd, active_index)``. Waypoints already within
    ``waypoint_proximity`` are skipped without stopping.
    """
    if len(path) == 0:
        raise ValueError("path is empty")
    p = state.pose
    k = min(max(start_index, 0), len(path) - 1)
    while k < len(path) - 1:
        wx, wy = _xy(path[k])
        if math.hypot(wx - p.x, wy - p.y) > ctrl.waypoint_proximity:
            break
        k += 1
    wx, wy = _xy(path[k])
    e = float(world.wrap_angle(math.atan2(wy - p.y, wx - p.x) - p.yaw))
    w = min(max(ctrl.heading_gain * e, -ctrl.max_angular), ctrl.max_angular)
    v = ctrl.cruise_speed * max(0.0, math.cos(e))
    return v, w, k


# -- episode --------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeParams:
    max_steps: int = 6000
    no_progress_timeout: float = 30.0
    no_progress_distance: float = 0.5
    max_roll: float = 0.524
    max_pitch: float = 0.785
    pose_noise_std: float = 0.0
    attitude_noise_std: float = 0.0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        for name in ("no_progress_timeout", "no_progress_distance", "max_roll", "max_pitch"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.pose_noise_std < 0 or self.attitude_noise_std < 0:
            raise ValueError("noise levels must be >= 0")


def ground_rings(mount_height: float, near: float, far: float, count: int) -> tuple[float, ...]:
    """Elevation angles whose flat-ground hits are evenly spaced in range."""
    d = np.linspace(near, far, count)
    return tuple((-np.arctan2(mount_height, d)).tolist())


def _default_lidar() -> LidarSpec:
    return LidarSpec(max_range=7.5, azimuth_count=180, elevation_angles=ground_rings(0.6, 0.8, 7.3, 22))


@dataclass(frozen=True)
class NavConfig:
    """Every parameter bundle one episode needs."""

    lidar: LidarSpec = field(default_factory=_default_lidar)
    mount_height: float = 0.6
    kernel: sgp.RbfKernel = field(default_factory=lambda: sgp.RbfKernel(1.0, 1.0))
    noise_variance: float = 1e-3
    inducing_count: int = 300
    inducing_strategy: str = "grid_stride"
    shortcut: bool = True
    grid: GridSpec = field(default_factory=lambda: GridSpec(12.0, 12.0, 0.15))
    footprint: Footprint = field(default_factory=Footprint)
    traversability: TraversabilityParams = field(default_factory=TraversabilityParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    subgoal: SubgoalParams = field(default_factory=SubgoalParams)
    controller: ControllerParams = field(default_factory=ControllerParams)
    episode: EpisodeParams = field(default_factory=EpisodeParams)

    def __post_init__(self):
        if not self.mount_height >= 0:
            raise ValueError("mount_height must be >= 0")
        if self.inducing_count < 1:
            raise ValueError("inducing_count must be >= 1")
        if self.planner.resample_spacing > self.footprint.half_extent + 1e-12:
            raise ValueError("resample_spacing must not exceed the footprint half extent")
        self.footprint.radius_cells(self.grid.resolution)


@dataclass
class Cycle:
    """What one sense-plan cycle saw and decided (robot frame quantities)."""

    index: int
    pose: Pose
    estimate: Pose
    cloud: world.PointCloud
    maps: MapStack
    plan: PlanResult
    target: str
    target_world: tuple[float, float]
    waypoints_world: np.ndarray
    timing: dict


@dataclass
class EpisodeMetrics:
    v_avg: float
    path_length: float
    max_roll: float
    max_pitch: float
    success: bool
    wall_time: float
    replan_count: int
    trace: list = field(default_factory=list)
    failure: str = ""
    cycles: int = 0
    duration: float = 0.0
    timing: list = field(default_factory=list)

    def trace_array(self) -> np.ndarray:
        """Numeric trace columns (everything except ``phase``)."""
        return np.array([row[:-1] for row in self.trace], dtype=float).reshape(-1, len(TRACE_FIELDS) - 1)


def cycle_seed(seed: int, cycle: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(cycle), int(stream)]).generate_state(1)[0])


def perceive(field_: TerrainField, pose: Pose, config: NavConfig, seed: int, cycle: int):
    """Sense, level, fit and map around ``pose``; returns the cycle inputs.

    Returns ``(estimate, cloud, maps, timing)`` where ``estimate`` is the pose
    the robot believes it has (ground truth plus optional noise).
    """
    ep = config.episode
    rng = np.random.default_rng(cycle_seed(seed, cycle, 0))
    noise = rng.normal(size=5)
    estimate = Pose(
        pose.x + ep.pose_noise_std * noise[0],
        pose.y + ep.pose_noise_std * noise[1],
        pose.z,
        pose.roll + ep.attitude_noise_std * noise[2],
        pose.pitch + ep.attitude_noise_std * noise[3],
        pose.yaw + ep.attitude_noise_std * noise[4],
    )
    timing = {}
    t0 = time.perf_counter()
    lidar = replace(config.lidar, rng_seed=cycle_seed(seed, cycle, 1))
    cloud = world.sample_lidar(field_, world.sensor_pose(pose, config.mount_height), lidar)
    t1 = time.perf_counter()
    timing["sense"] = t1 - t0

    leveled = world.level_pointcloud(cloud, estimate.roll, estimate.pitch)
    # shift from the sensor origin to the robot base, then to world elevation
    base = world.rot_y(estimate.pitch) @ world.rot_x(estimate.roll) @ np.array([0.0, 0.0, config.mount_height])
    pts = leveled.points + base
    pts[:, 2] += estimate.z
    if len(pts) == 0:
        raise NoFrontierError("scan returned no points")
    data = sgp.TrainingSet.from_points(pts)
    m = min(config.inducing_count, data.count)
    Z = sgp.select_inducing(data, m, config.inducing_strategy, seed=cycle_seed(seed, cycle, 2))
    model = sgp.fit(data, config.kernel, config.noise_variance, Z)
    t2 = time.perf_counter()
    timing["fit"] = t2 - t1

    maps = mapping.build_maps(model, config.grid, config.footprint, config.traversability, estimate.z)
    timing["map"] = time.perf_counter() - t2
    return estimate, world.PointCloud(pts, frame="world"), maps, timing


def _to_robot(est: Pose, xy) -> np.ndarray:
    c, s = math.cos(est.yaw), math.sin(est.yaw)
    dx, dy = xy[0] - est.x, xy[1] - est.y
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def world_to_robot(est: Pose, pts) -> np.ndarray:
    """World (x, y) rows into the yaw-aligned frame centred on ``est``."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    c, s = math.cos(est.yaw), math.sin(est.yaw)
    dx, dy = pts[:, 0] - est.x, pts[:, 1] - est.y
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy])


def _to_world(est: Pose, pts: np.ndarray) -> np.ndarray:
    c, s = math.cos(est.yaw), math.sin(est.yaw)
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return np.column_stack([est.x + c * pts[:, 0] - s * pts[:, 1], est.y + s * pts[:, 0] + c * pts[:, 1]])


def plan_cycle(field_, pose: Pose, goal_world, config: NavConfig, seed: int, cycle: int) -> Cycle:
    """One sense -> map -> plan pass; raises NoFrontierError if stuck."""
    estimate, cloud, maps, timing = perceive(field_, pose, config, seed, cycle)
    goal_r = _to_robot(estimate, goal_world)
    params = replace(config.planner, rng_seed=cycle_seed(seed, cycle, 3))
    tau_crit = config.traversability.tau_crit
    t0 = time.perf_counter()
    result = planner.plan(maps.traversability, maps.elevation, config.grid, goal_r, config.footprint, params, tau_crit)
    if result.path is None and not result.frontiers:
        # one in-place retry with a larger budget
        params = replace(params, max_iterations=2 * params.max_iterations)
        result = planner.plan(maps.traversability, maps.elevation, config.grid, goal_r, config.footprint, params, tau_crit)
    timing["plan"] = time.perf_counter() - t0

    def chain(path):
        if config.shortcut:
            path = planner.shortcut_path(path, maps.traversability, config.footprint, params, tau_crit)
        return path[1:]

    if result.path is not None:
        target = "goal"
        nodes = chain(result.path)
        target_world = (float(goal_world[0]), float(goal_world[1]))
        wps = _to_world(estimate, np.array([n.position[:2] for n in nodes]).reshape(-1, 2))
        wps = np.vstack([wps, np.array(target_world)])
    else:
        if not result.frontiers:
            raise NoFrontierError("no path and no frontier after retry")
        g = select_subgoal(result.frontiers, goal_r, config.subgoal)
        nodes = chain(planner.extract_path(result.tree, g.id))
        target = "subgoal"
        wps = _to_world(estimate, np.array([n.position[:2] for n in nodes]).reshape(-1, 2))
        target_world = (float(wps[-1, 0]), float(wps[-1, 1]))
    return Cycle(cycle, pose, estimate, cloud, maps, result, target, target_world, wps, timing)


def _trace_row(state: RobotState, v: float, w: float, phase: str) -> tuple:
    p = state.pose
    return (state.clock, p.x, p.y, p.z, p.roll, p.pitch, p.yaw, float(v), float(w), phase)


def trace_length(trace: Sequence[tuple]) -> float:
    if len(trace) < 2:
        return 0.0
    P = np.array([row[1:4] for row in trace], dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)))


def run_episode(
    field_: TerrainField,
    start: Pose,
    goal_world,
    config: NavConfig,
    seed: int = 0,
    on_cycle: Callable[[Cycle], None] | None = None,
) -> EpisodeMetrics:
    """Drive from ``start`` toward ``goal_world``; failures come back as metrics."""
    wall0 = time.perf_counter()
    ctrl = config.controller
    ep = config.episode
    goal = np.asarray(goal_world, dtype=float)
    tol = config.planner.goal_tolerance
    z, roll, pitch = world.attitude_on_terrain(field_, start.x, start.y, start.yaw, config.footprint.half_extent)
    state = RobotState(Pose(start.x, start.y, z, roll, pitch, start.yaw))

    trace: list[tuple] = []
    timings: list[dict] = []
    steps = 0
    cycle = 0
    failure = ""
    success = False
    anchor_xy = np.array([state.pose.x, state.pose.y])
    anchor_t = state.clock
    forced = False

    def at_goal(s: RobotState) -> bool:
        return math.hypot(goal[0] - s.pose.x, goal[1] - s.pose.y) <= tol

    while not failure and not success:
        if at_goal(state):
            success = True
            break
        try:
            cyc = plan_cycle(field_, state.pose, goal, config, seed, cycle)
        except NoFrontierError as exc:
            failure = f"no_frontier: {exc}"
            break
        except planner.PlanningFailure as exc:
            failure = f"planning: {exc}"
            break
        except sgp.NumericalFailure as exc:
            failure = f"numerical: {exc}"
            break
        timings.append(cyc.timing)
        if on_cycle is not None:
            on_cycle(cyc)
        phase = f"c{cycle}-{cyc.target}"
        cycle += 1
        wps = cyc.waypoints_world
        tx, ty = cyc.target_world
        k = 0
        while True:
            if at_goal(state):
                success = True
                break
            if cyc.target == "subgoal" and math.hypot(tx - state.pose.x, ty - state.pose.y) <= ctrl.subgoal_proximity:
                break
            if steps >= ep.max_steps:
                failure = "step_budget"
                break
            # no-progress watchdog: one forced replan, then give up
            here = np.array([state.pose.x, state.pose.y])
            if np.hypot(*(here - anchor_xy)) >= ep.no_progress_distance:
                anchor_xy, anchor_t, forced = here, state.clock, False
            elif state.clock - anchor_t >= ep.no_progress_timeout - 1e-9:
                if forced:
                    failure = "no_progress"
                    break
                forced, anchor_t = True, state.clock
                break
            v, w, k = follow(state, wps, ctrl, k)
            trace.append(_trace_row(state, v, w, phase))
            state = diff_drive_step(state, v, w, ctrl.dt, field_, config.footprint)
            steps += 1
            if abs(state.pose.roll) > ep.max_roll or abs(state.pose.pitch) > ep.max_pitch:
                failure = "safety"
                break

    trace.append(_trace_row(state, 0.0, 0.0, "end"))
    length = trace_length(trace)
    duration = trace[-1][0] - trace[0][0]
    arr = np.array([row[4:6] for row in trace], dtype=float)
    return EpisodeMetrics(
        v_avg=length / duration if duration > 0 else 0.0,
        path_length=length,
        max_roll=float(np.max(np.abs(arr[:, 0]))),
        max_pitch=float(np.max(np.abs(arr[:, 1]))),
        success=success,
        wall_time=time.perf_counter() - wall0,
        replan_count=max(cycle - 1, 0),
        trace=trace,
        failure=failure,
        cycles=cycle,
        duration=duration,
        timing=timings,
    )
