"""Footprint-aware RRT* on the local traversability map.

Every tree edge is checked by resampling the segment at ``resample_spacing``
and counting cells above ``tau_crit`` inside the footprint window at each
sample. Extensions come out as traversable leaves, edge nodes (growth halts
there), frontier nodes (footprint leaves the map) or are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .mapping import Footprint, GridMap, GridSpec


class PlanningFailure(RuntimeError):
    pass


class InvariantError(RuntimeError):
    """A tree invariant was found broken (parent chain, cost consistency)."""


class Kind(str, Enum):
    ROOT = "root"
    LEAF = "leaf"
    EDGE = "edge"
    FRONTIER = "frontier"


class Outcome(str, Enum):
    TRAVERSABLE = "traversable"
    EDGE = "edge"
    FRONTIER = "frontier"
    REJECTED = "rejected"


@dataclass(frozen=True)
class PlanNode:
    id: int
    position: tuple[float, float, float]
    parent: int | None
    cost: float
    kind: Kind

    @property
    def xy(self) -> np.ndarray:
        return np.array(self.position[:2])


@dataclass(frozen=True)
class PlannerParams:
    max_iterations: int = 1500
    steer_step: float = 1.0
    neighbor_radius_gamma: float = 12.0
    resample_spacing: float = 0.2
    coll_max: int = 6
    goal_tolerance: float = 0.3
    rng_seed: int = 0
    goal_bias: float = 0.05
    refine_fraction: float = 0.2

    def __post_init__(self):
        for name in ("max_iterations", "steer_step", "neighbor_radius_gamma", "resample_spacing", "goal_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.coll_max < 0:
            raise ValueError("coll_max must be >= 0")
        if not 0 <= self.goal_bias <= 1 or not 0 <= self.refine_fraction:
            raise ValueError("goal_bias must lie in [0, 1] and refine_fraction be >= 0")


# -- map queries --------------------------------------------------------------


def project(p, M_h: GridMap) -> tuple[float, float, float]:
    """Lift a 2D point onto the elevation grid by bilinear interpolation."""
    spec = M_h.spec
    x, y = float(p[0]), float(p[1])
    if abs(x) > spec.half_extent_x + 1e-12 or abs(y) > spec.half_extent_y + 1e-12:
        raise ValueError(f"point ({x:.3f}, {y:.3f}) lies outside the map")
    return x, y, _bilinear(M_h, x, y)


def _bilinear(M_h: GridMap, x: float, y: float) -> float:
    spec = M_h.spec
    # fractional cell-centre coordinates, clamped to the outermost centres
    fj = min(max(x / spec.resolution + (spec.ncols - 1) / 2.0, 0.0), spec.ncols - 1.0)
    fi = min(max(y / spec.resolution + (spec.nrows - 1) / 2.0, 0.0), spec.nrows - 1.0)
    j0 = min(int(fj), spec.ncols - 2)
    i0 = min(int(fi), spec.nrows - 2)
    tx, ty = fj - j0, fi - i0
    v = M_h.values
    return float(
        (1 - ty) * ((1 - tx) * v[i0, j0] + tx * v[i0, j0 + 1])
        + ty * ((1 - tx) * v[i0 + 1, j0] + tx * v[i0 + 1, j0 + 1])
    )


def collision_count(M_tau: GridMap, center, footprint: Footprint, tau_crit: float) -> int:
    """Cells above ``tau_crit`` in the footprint window (clipped at the border)."""
    spec = M_tau.spec
    r = footprint.radius_cells(spec.resolution)
    i, j = spec.cell_of(center[0], center[1])
    i0, i1 = max(int(i) - r, 0), min(int(i) + r + 1, spec.nrows)
    j0, j1 = max(int(j) - r, 0), min(int(j) + r + 1, spec.ncols)
    if i0 >= i1 or j0 >= j1:
        return 0
    return int(np.count_nonzero(M_tau.values[i0:i1, j0:j1] > tau_crit))


class FootprintChecker:
    """Constant-time footprint collision counts via a summed-area table."""

    def __init__(self, M_tau: GridMap, footprint: Footprint, tau_crit: float, spacing: float):
        spec = M_tau.spec
        self.spec = spec
        self.spacing = spacing
        self.r = footprint.radius_cells(spec.resolution)
        occ = (M_tau.values > tau_crit).astype(np.int64)
        r = self.r
        # zero border of width r: any window around an on-map cell stays in range
        padded = np.zeros((spec.nrows + 2 * r, spec.ncols + 2 * r), dtype=np.int64)
        padded[r : r + spec.nrows, r : r + spec.ncols] = occ
        self.sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
        self.sat[1:, 1:] = padded.cumsum(0).cumsum(1)
        self._inv_res = 1.0 / spec.resolution
        self._ci = spec.nrows / 2.0
        self._cj = spec.ncols / 2.0
        self._w = 2 * r + 1
        self.sat_rows = self.sat.tolist()

    def cells(self, pts: np.ndarray):
        j = np.floor(pts[:, 0] * self._inv_res + self._cj).astype(np.int64)
        i = np.floor(pts[:, 1] * self._inv_res + self._ci).astype(np.int64)
        return i, j

    def inside(self, i, j):
        """Whether the footprint window at cell (i, j) lies fully inside the grid."""
        r = self.r
        return (i - r >= 0) & (i + r < self.spec.nrows) & (j - r >= 0) & (j + r < self.spec.ncols)

    def counts(self, i, j):
        """Window counts for on-map cells (indices in [0, nrows) x [0, ncols))."""
        i1 = i + self._w
        j1 = j + self._w
        s = self.sat
        return s[i1, j1] - s[i, j1] - s[i1, j] + s[i, j]


def _walk(a: np.ndarray, b: np.ndarray, spacing: float) -> np.ndarray:
    """Equidistant samples after ``a`` up to and including ``b``."""
    d = math.hypot(b[0] - a[0], b[1] - a[1])
    k = max(1, math.ceil(d / spacing - 1e-9))
    t = np.arange(1, k + 1) / k
    return a[None, :] + t[:, None] * (b - a)[None, :]


def classify_walk(
    checker: FootprintChecker, a, b, coll_max: int
) -> tuple[Outcome, tuple[float, float] | None]:
    """Classify the straight segment ``a -> b``; see :func:`classify_segment`.

    Returns the outcome and the 2D position of the resulting node (``b`` for
    traversable/frontier, the last free sample for an edge node).
    """
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    k = max(1, math.ceil(math.hypot(bx - ax, by - ay) / checker.spacing - 1e-9))
    sat = checker.sat_rows
    inv, ci, cj, r, w = checker._inv_res, checker._ci, checker._cj, checker.r, checker._w
    imax, jmax = checker.spec.nrows - r, checker.spec.ncols - r
    floor = math.floor

    jb = floor(bx * inv + cj)
    ib = floor(by * inv + ci)
    frontier = not (r <= ib < imax and r <= jb < jmax)

    last_free = None
    small_hit = False
    for s in range(1, k + 1):
        t = s / k
        px = ax + t * (bx - ax)
        py = ay + t * (by - ay)
        j = floor(px * inv + cj)
        i = floor(py * inv + ci)
        if frontier and not (r <= i < imax and r <= j < jmax):
            # windows crossing the border cannot be judged
            continue
        lo, hi = sat[i], sat[i + w]
        n = hi[j + w] - lo[j + w] - hi[j] + lo[j]
        if n == 0:
            if not small_hit:
                last_free = (px, py)
            continue
        if n > coll_max:
            if last_free is None:
                return Outcome.REJECTED, None
            return Outcome.EDGE, last_free
        small_hit = True
    if small_hit:
        return Outcome.REJECTED, None
    return (Outcome.FRONTIER if frontier else Outcome.TRAVERSABLE), (bx, by)


def classify_segment(
    M_tau: GridMap,
    M_h: GridMap,
    from_node: PlanNode,
    to_2d,
    footprint: Footprint,
    params: PlannerParams,
    tau_crit: float,
) -> tuple[Outcome, PlanNode | None]:
    """Footprint walk from an existing node toward ``to_2d``.

    * target footprint crosses the map border -> FRONTIER, provided every
      walk sample whose window is wholly on the map is collision free;
    * every sample collision free -> TRAVERSABLE;
    * some sample above ``coll_max`` -> EDGE at the last free sample before
      the first collision (REJECTED if there is none);
    * otherwise (only small counts) -> REJECTED.
    """
    if from_node.kind == Kind.EDGE:
        raise ValueError("edge nodes cannot be extended")
    checker = FootprintChecker(M_tau, footprint, tau_crit, params.resample_spacing)
    outcome, pos = classify_walk(checker, from_node.position, to_2d, params.coll_max)
    if pos is None:
        return outcome, None
    x, y, z = project(pos, M_h)
    seg = math.dist(from_node.position, (x, y, z))
    kind = {Outcome.TRAVERSABLE: Kind.LEAF, Outcome.EDGE: Kind.EDGE, Outcome.FRONTIER: Kind.FRONTIER}[outcome]
    return outcome, PlanNode(-1, (x, y, z), from_node.id, from_node.cost + seg, kind)


# -- tree ---------------------------------------------------------------------


_FAR = 1e150


class PlanTree:
    """Append-only RRT* node store with leaf / edge / frontier bookkeeping."""

    def __init__(self, capacity: int):
        self.xy = np.zeros((capacity, 2))
        self.z = np.zeros(capacity)
        self.cost = np.zeros(capacity)
        self.seg = np.zeros(capacity)
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.kind: list[Kind] = []
        self.children: list[list[int]] = []
        self.extendable = np.zeros(capacity, dtype=bool)
        # coordinate columns for nearest-neighbour scans; far away when not extendable
        self.x = np.zeros(capacity)
        self.y = np.zeros(capacity)
        self.ex = np.full(capacity, _FAR)
        self.ey = np.full(capacity, _FAR)
        self.leaves: set[int] = set()
        self.edges: list[int] = []
        self.frontiers: list[int] = []
        self.n = 0

    def _grow(self):
        cap = 2 * len(self.z)
        for name in ("xy", "z", "cost", "seg", "extendable", "x", "y", "ex", "ey"):
            arr = getattr(self, name)
            fill = _FAR if name in ("ex", "ey") else 0
            new = np.full((cap,) + arr.shape[1:], fill, dtype=arr.dtype)
            new[: len(arr)] = arr
            setattr(self, name, new)
        parent = np.full(cap, -1, dtype=np.int64)
        parent[: len(self.parent)] = self.parent
        self.parent = parent

    def add(self, xy, z: float, parent: int | None, kind: Kind) -> int:
        if self.n == len(self.z):
            self._grow()
        k = self.n
        self.xy[k] = xy
        self.x[k] = xy[0]
        self.y[k] = xy[1]
        self.z[k] = z
        if parent is None:
            self.seg[k] = 0.0
            self.cost[k] = 0.0
            self.parent[k] = -1
        else:
            if self.kind[parent] in (Kind.EDGE, Kind.FRONTIER):
                raise InvariantError(f"node {parent} ({self.kind[parent].value}) cannot take children")
            self.seg[k] = self.length(parent, xy, z)
            self.cost[k] = self.cost[parent] + self.seg[k]
            self.parent[k] = parent
            self.children[parent].append(k)
        self.kind.append(kind)
        self.children.append([])
        self.extendable[k] = kind in (Kind.ROOT, Kind.LEAF)
        if self.extendable[k]:
            self.ex[k] = xy[0]
            self.ey[k] = xy[1]
        if kind == Kind.LEAF:
            self.leaves.add(k)
        elif kind == Kind.EDGE:
            self.edges.append(k)
        elif kind == Kind.FRONTIER:
            self.frontiers.append(k)
        self.n += 1
        return k

    def length(self, a: int, xy, z: float) -> float:
        dx = xy[0] - self.xy[a, 0]
        dy = xy[1] - self.xy[a, 1]
        dz = z - self.z[a]
        return math.sqrt(dx * dx + dy * dy + dz * dz)

    def rewire(self, node: int, new_parent: int) -> None:
        old = int(self.parent[node])
        self.children[old].remove(node)
        self.children[new_parent].append(node)
        self.parent[node] = new_parent
        self.seg[node] = self.length(new_parent, self.xy[node], self.z[node])
        stack = [node]
        while stack:
            k = stack.pop()
            self.cost[k] = self.cost[self.parent[k]] + self.seg[k]
            stack.extend(self.children[k])

    def node(self, k: int) -> PlanNode:
        p = int(self.parent[k])
        return PlanNode(
            int(k),
            (float(self.xy[k, 0]), float(self.xy[k, 1]), float(self.z[k])),
            None if p < 0 else p,
            float(self.cost[k]),
            self.kind[k],
        )

    def nodes(self) -> list[PlanNode]:
        return [self.node(k) for k in range(self.n)]

    def check_costs(self, tol: float = 1e-9) -> None:
        for k in range(self.n):
            p = int(self.parent[k])
            if p < 0:
                continue
            want = self.cost[p] + self.length(p, self.xy[k], self.z[k])
            if abs(self.cost[k] - want) > tol:
                raise InvariantError(f"cost of node {k} is {self.cost[k]}, expected {want}")


def extract_path(tree: PlanTree, terminal: int) -> list[PlanNode]:
    """Nodes from the root to ``terminal`` following parent links."""
    if not 0 <= terminal < tree.n:
        raise InvariantError(f"node {terminal} is not in the tree")
    out = []
    k = terminal
    seen = set()
    while k >= 0:
        if k in seen or k >= tree.n:
            raise InvariantError(f"broken parent chain at node {k}")
        seen.add(k)
        out.append(tree.node(k))
        k = int(tree.parent[k])
    if out[-1].kind != Kind.ROOT:
        raise InvariantError("parent chain does not end at the root")
    return out[::-1]


def path_cost(path: list[PlanNode]) -> float:
    return sum(math.dist(a.position, b.position) for a, b in zip(path, path[1:]))


# -- planning -----------------------------------------------------------------


@dataclass
class PlanResult:
    path: list[PlanNode] | None
    frontiers: list[PlanNode]
    edges: list[PlanNode]
    iterations_used: int
    tree: PlanTree
    root_id: int = 0
    goal_node: int | None = None
    checkpoints: list[tuple[int, float]] = field(default_factory=list)


def _place_root(checker: FootprintChecker, spec: GridSpec) -> np.ndarray:
    origin = np.zeros(2)
    i, j = checker.cells(origin[None, :])
    if checker.counts(i, j)[0] == 0:
        return origin
    C = spec.centers()
    ci, cj = checker.cells(C)
    free = checker.counts(ci, cj) == 0
    if not free.any():
        raise PlanningFailure("no collision-free cell to place the tree root")
    d2 = (C[:, 0] ** 2 + C[:, 1] ** 2)
    d2[~free] = np.inf
    return C[int(np.argmin(d2))]


def plan(
    M_tau: GridMap,
    M_h: GridMap,
    spec: GridSpec,
    goal_2d,
    footprint: Footprint,
    params: PlannerParams,
    tau_crit: float,
) -> PlanResult:
    """RRT* from the map centre toward ``goal_2d`` (robot frame)."""
    if M_tau.spec != spec or M_h.spec != spec:
        raise ValueError("maps do not match the grid spec")
    rng = np.random.default_rng(params.rng_seed)
    checker = FootprintChecker(M_tau, footprint, tau_crit, params.resample_spacing)
    goal = np.asarray(goal_2d, dtype=float)
    hx, hy = spec.half_extent_x, spec.half_extent_y
    goal_inside = abs(goal[0]) <= hx and abs(goal[1]) <= hy
    tol2 = params.goal_tolerance**2

    tree = PlanTree(params.max_iterations + 8)
    root_xy = _place_root(checker, spec)
    root = tree.add(root_xy, _bilinear(M_h, *root_xy), None, Kind.ROOT)

    # one row of uniforms per iteration: goal-bias coin, x, y
    draws = rng.random((params.max_iterations, 3))
    draws[:, 1] = (2.0 * draws[:, 1] - 1.0) * hx
    draws[:, 2] = (2.0 * draws[:, 2] - 1.0) * hy
    use_goal = goal_inside & (draws[:, 0] < params.goal_bias)
    steer = params.steer_step
    gamma = params.neighbor_radius_gamma
    coll_max = params.coll_max
    gx, gy = float(goal[0]), float(goal[1])

    goal_candidates: list[int] = []
    stop_at = params.max_iterations
    checkpoints: list[tuple[int, float]] = []
    it = 0

    def best_cost() -> float:
        return min((tree.cost[k] for k in goal_candidates), default=math.inf)

    while it < stop_at:
        row = draws[it]
        it += 1
        if it % 100 == 0:
            checkpoints.append((it, best_cost()))
        if use_goal[it - 1]:
            sx, sy = gx, gy
        else:
            sx, sy = row[1], row[2]

        n = tree.n
        dx = tree.ex[:n] - sx
        dy = tree.ey[:n] - sy
        d2 = dx * dx + dy * dy
        nearest = int(np.argmin(d2))
        dist = math.sqrt(d2[nearest])
        if dist < 1e-9:
            continue
        qx, qy = tree.x[nearest], tree.y[nearest]
        if dist > steer:
            f = steer / dist
            nx, ny = qx + (sx - qx) * f, qy + (sy - qy) * f
        else:
            nx, ny = sx, sy
        outcome, pos = classify_walk(checker, (qx, qy), (nx, ny), coll_max)

        if outcome == Outcome.EDGE:
            tree.add(pos, _bilinear(M_h, *pos), nearest, Kind.EDGE)
        elif outcome is not Outcome.REJECTED:
            new_z = _bilinear(M_h, nx, ny)
            nn = max(n, 2)
            radius = min(steer, gamma * math.sqrt(math.log(nn) / nn))
            r2 = radius * radius
            ax = tree.x[:n] - nx
            ay = tree.y[:n] - ny
            dn2 = ax * ax + ay * ay
            within = np.flatnonzero(dn2 <= r2)
            # choose parent: cheapest valid connection, checked lazily in cost order
            parent = nearest
            near = within[tree.extendable[within]]
            if near.size > 1:
                dz = tree.z[near] - new_z
                via = tree.cost[near] + np.sqrt(dn2[near] + dz * dz)
                base = tree.cost[nearest] + tree.length(nearest, (nx, ny), new_z)
                for idx in np.argsort(via, kind="stable"):
                    k = int(near[idx])
                    if via[idx] >= base or k == nearest:
                        break
                    o, _ = classify_walk(checker, (tree.x[k], tree.y[k]), (nx, ny), coll_max)
                    if o == outcome:
                        parent = k
                        break
            kind = Kind.LEAF if outcome == Outcome.TRAVERSABLE else Kind.FRONTIER
            new = tree.add((nx, ny), new_z, parent, kind)

            if kind == Kind.LEAF:
                # rewire neighbours that become cheaper through the new node
                cand = within[within != parent]
                if cand.size:
                    dz = tree.z[cand] - new_z
                    c_new = tree.cost[new] + np.sqrt(dn2[cand] + dz * dz)
                    for k in cand[c_new < tree.cost[cand] - 1e-12]:
                        k = int(k)
                        kind_k = tree.kind[k]
                        if kind_k is Kind.LEAF:
                            want = Outcome.TRAVERSABLE
                        elif kind_k is Kind.FRONTIER:
                            want = Outcome.FRONTIER
                        else:
                            continue
                        o, _ = classify_walk(checker, (nx, ny), (tree.x[k], tree.y[k]), coll_max)
                        if o == want and not _is_ancestor(tree, k, new):
                            tree.rewire(k, new)

                if goal_inside and (nx - gx) ** 2 + (ny - gy) ** 2 <= tol2:
                    if not goal_candidates:
                        budget = max(1, math.ceil(params.refine_fraction * params.max_iterations))
                        stop_at = min(stop_at, it + budget)
                    goal_candidates.append(new)

    best_goal = None
    if goal_candidates:
        best_goal = min(goal_candidates, key=lambda k: tree.cost[k])
    path = extract_path(tree, best_goal) if best_goal is not None else None
    return PlanResult(
        path=path,
        frontiers=[tree.node(k) for k in tree.frontiers],
        edges=[tree.node(k) for k in tree.edges],
        iterations_used=it,
        tree=tree,
        root_id=root,
        goal_node=best_goal,
        checkpoints=checkpoints,
    )


def shortcut_path(
    path: list[PlanNode], M_tau: GridMap, footprint: Footprint, params: PlannerParams, tau_crit: float
) -> list[PlanNode]:
    """Greedy line-of-sight pruning of a root-first node chain.

    From each kept node, jump to the farthest later node whose straight
    segment passes the same footprint walk as a tree edge (a frontier
    terminal must classify as frontier). Costs are recomputed in 3D.
    """
    if len(path) < 3:
        return list(path)
    checker = FootprintChecker(M_tau, footprint, tau_crit, params.resample_spacing)
    keep = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1:
            want = Outcome.FRONTIER if path[j].kind == Kind.FRONTIER else Outcome.TRAVERSABLE
            o, _ = classify_walk(checker, path[i].position, path[j].position, params.coll_max)
            if o == want:
                break
            j -= 1
        prev = keep[-1]
        node = path[j]
        keep.append(PlanNode(node.id, node.position, prev.id, prev.cost + math.dist(prev.position, node.position), node.kind))
        i = j
    return keep


def _is_ancestor(tree: PlanTree, a: int, b: int) -> bool:
    k = b
    while k >= 0:
        if k == a:
            return True
        k = int(tree.parent[k])
    return False


def path_is_footprint_valid(
    path: list[PlanNode], M_tau: GridMap, footprint: Footprint, spacing: float, tau_crit: float
) -> bool:
    """Every resampled point along ``path`` has an empty footprint window."""
    for a, b in zip(path, path[1:]):
        for p in _walk(np.asarray(a.position[:2]), np.asarray(b.position[:2]), spacing):
            if collision_count(M_tau, p, footprint, tau_crit) != 0:
                return False
    return True
