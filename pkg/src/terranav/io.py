"""Plain-text artifact formats: PGM/CSV grids, point clouds, trees, traces."""

from __future__ import annotations

import csv
import json
import math
import re

import numpy as np

from .mapping import GridMap
from .planner import PlanNode, PlanTree
from .world import PointCloud

PGM_MAX = 65535
_SCALE_RE = re.compile(r"#\s*scale\s+min=(\S+)\s+max=(\S+)\s+layer=(\S+)")


# -- grids ----------------------------------------------------------------------


def pgm_text(values: np.ndarray, layer: str) -> str:
    """ASCII P2 image of ``values`` scaled linearly onto 0..65535.

    Rows are written in array order (row 0 first, i.e. the most negative y).
    """
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        q = np.rint((v - lo) / (hi - lo) * PGM_MAX).astype(np.int64)
    else:
        q = np.zeros(v.shape, dtype=np.int64)
    rows, cols = v.shape
    out = ["P2", f"# scale min={lo!r} max={hi!r} layer={layer}", f"{cols} {rows}", str(PGM_MAX)]
    out.extend(" ".join(map(str, r)) for r in q.tolist())
    return "\n".join(out) + "\n"


def write_pgm(path, grid: GridMap) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(pgm_text(grid.values, grid.layer))


def read_pgm(path) -> tuple[np.ndarray, str]:
    """Inverse of :func:`write_pgm`: (values rescaled to physical units, layer)."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "P2":
        raise ValueError(f"{path}: not an ASCII PGM (P2) file")
    lo = hi = None
    layer = ""
    tokens: list[str] = []
    for line in lines[1:]:
        if line.startswith("#"):
            m = _SCALE_RE.match(line)
            if m:
                lo, hi, layer = float(m.group(1)), float(m.group(2)), m.group(3)
            continue
        tokens.extend(line.split())
    cols, rows, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
    q = np.array(tokens[3:], dtype=float)
    if q.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} pixels, found {q.size}")
    q = q.reshape(rows, cols)
    if lo is None:
        return q, layer
    return lo + q / maxval * (hi - lo), layer


def write_grid_csv(path, grid: GridMap) -> None:
    """Raw values, one CSV row per grid row (row 0 first)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in np.asarray(grid.values, dtype=float).tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")


def read_grid_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


# -- point clouds ---------------------------------------------------------------


def write_cloud_csv(path, cloud: PointCloud) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# frame={cloud.frame}\n")
        for x, y, z in cloud.points.tolist():
            fh.write(f"{x!r},{y!r},{z!r}\n")


def read_cloud_csv(path) -> PointCloud:
    with open(path, encoding="ascii") as fh:
        head = fh.readline().strip()
        if not head.startswith("# frame="):
            raise ValueError(f"{path}: missing '# frame=' header")
        frame = head.split("=", 1)[1].strip()
        rows = [tuple(float(v) for v in line.split(",")) for line in fh if line.strip()]
    return PointCloud(np.array(rows, dtype=float).reshape(-1, 3), frame=frame)


# -- planner output -------------------------------------------------------------


def write_tree_csv(path, tree: PlanTree) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "parent", "x", "y", "z", "cost", "kind"])
        for n in tree.nodes():
            w.writerow([n.id, -1 if n.parent is None else n.parent, *map(repr, n.position), repr(n.cost), n.kind.value])


def write_path_csv(path, points) -> None:
    """Waypoints as ``x,y`` (or ``x,y,z`` for plan nodes)."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        pts = [p.position if isinstance(p, PlanNode) else tuple(p) for p in points]
        w.writerow(["x", "y", "z"][: len(pts[0]) if pts else 2])
        for p in pts:
            w.writerow([repr(float(v)) for v in p])


# -- episode trace and metrics --------------------------------------------------


def write_trace_csv(path, trace) -> None:
    from .nav import TRACE_FIELDS

    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for row in trace:
            w.writerow([repr(float(v)) for v in row[:-1]] + [row[-1]])


def read_trace_csv(path) -> list[tuple]:
    with open(path, encoding="ascii", newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [tuple(float(v) for v in row[:-1]) + (row[-1],) for row in r if row]


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "off" if obj > 0 else str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, data: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


CLOCK_FIELDS = ("wall_time", "timing")


def without_clock(d: dict) -> dict:
    """Copy of a metrics record minus wall-clock fields (for determinism checks)."""
    return {k: v for k, v in d.items() if k not in CLOCK_FIELDS}
