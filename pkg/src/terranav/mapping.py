"""Robot-centred grid layers and the traversability stack.

Grids are indexed ``[i, j]`` with row ``i`` along y and column ``j`` along x;
cell centres are symmetric about the robot, which sits at the grid centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .sgp import SgpElevationModel

LAYERS = ("elevation", "variance", "slope", "flatness", "step", "traversability")


def _cells(extent: float, resolution: float) -> int:
    # tolerate float noise such as 1.1 / 0.1 = 11.000000000000002
    return int(math.ceil(extent / resolution - 1e-9))


@dataclass(frozen=True)
class GridSpec:
    width: float = 15.0
    height: float = 15.0
    resolution: float = 0.2

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.resolution > 0):
            raise ValueError("grid width, height and resolution must be > 0")
        if self.ncols < 3 or self.nrows < 3:
            raise ValueError("grid needs at least 3 cells per side")

    @cached_property
    def ncols(self) -> int:
        return _cells(self.width, self.resolution)

    @cached_property
    def nrows(self) -> int:
        return _cells(self.height, self.resolution)

    @cached_property
    def shape(self) -> tuple[int, int]:
        return self.nrows, self.ncols

    @cached_property
    def xs(self) -> np.ndarray:
        return (np.arange(self.ncols) - (self.ncols - 1) / 2.0) * self.resolution

    @cached_property
    def ys(self) -> np.ndarray:
        return (np.arange(self.nrows) - (self.nrows - 1) / 2.0) * self.resolution

    @cached_property
    def half_extent_x(self) -> float:
        return self.ncols * self.resolution / 2.0

    @cached_property
    def half_extent_y(self) -> float:
        return self.nrows * self.resolution / 2.0

    def centers(self) -> np.ndarray:
        """All cell centres as an (nrows*ncols, 2) array of (x, y), row-major."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def cell_of(self, x, y):
        """Index (i, j) of the cell containing (x, y); may fall outside the grid."""
        j = np.floor(np.asarray(x) / self.resolution + self.ncols / 2.0).astype(int)
        i = np.floor(np.asarray(y) / self.resolution + self.nrows / 2.0).astype(int)
        return i, j


@dataclass(frozen=True)
class Footprint:
    half_extent: float = 0.4

    def __post_init__(self):
        if not self.half_extent > 0:
            raise ValueError("footprint half_extent must be > 0")

    def radius_cells(self, resolution: float) -> int:
        if self.half_extent < resolution - 1e-12:
            raise ValueError("footprint must cover at least 3x3 cells (half_extent >= resolution)")
        return _cells(self.half_extent, resolution)


@dataclass
class GridMap:
    spec: GridSpec
    values: np.ndarray
    layer: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.spec.shape}")


@dataclass(frozen=True)
class TraversabilityParams:
    weights: tuple[float, float, float] = (0.4, 0.3, 0.3)
    s_crit: float = 0.45
    f_crit: float = 0.45
    zeta_crit: float = 0.15
    sigma_crit: float = 0.3
    tau_crit: float = 0.6

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != 3 or any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("weights must be three non-negative numbers summing to 1")
        object.__setattr__(self, "weights", w)
        for name in ("s_crit", "f_crit", "zeta_crit", "sigma_crit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.tau_crit < 1:
            raise ValueError("tau_crit must lie in (0, 1)")


def _same_spec(*maps: GridMap) -> None:
    spec = maps[0].spec
    for m in maps[1:]:
        if m.spec != spec:
            raise ValueError("grid maps do not share one GridSpec")


def rasterize(model: SgpElevationModel, spec: GridSpec, chunk: int = 4096) -> tuple[GridMap, GridMap]:
    """Elevation and variance layers from the GP at every cell centre.

    The model must already live in the robot-centred leveled frame.
    """
    P = spec.centers()
    mean = np.empty(len(P))
    var = np.empty(len(P))
    for s in range(0, len(P), chunk):
        mean[s : s + chunk], var[s : s + chunk] = model.predict(P[s : s + chunk])
    return (
        GridMap(spec, mean.reshape(spec.shape), "elevation"),
        GridMap(spec, var.reshape(spec.shape), "variance"),
    )


def slope_map(model: SgpElevationModel, spec: GridSpec) -> GridMap:
    g = model.predict_gradient(spec.centers())
    return GridMap(spec, np.arctan(np.hypot(g[:, 0], g[:, 1])).reshape(spec.shape), "slope")


def _plane_fit_stats(M_h: GridMap, footprint: Footprint):
    """Per-cell least-squares plane over the clipped footprint window.

    Returns slopes (b, c) of ``z = a + b*x + c*y`` and the residual RMS.
    Window offsets are taken relative to each cell, so no large coordinates
    enter the moment sums.
    """
    spec = M_h.spec
    r = footprint.radius_cells(spec.resolution)
    off = np.arange(-r, r + 1) * spec.resolution
    U, V = np.meshgrid(off, off)  # U varies along columns (x), V along rows (y)
    K1 = np.ones_like(U)

    def corr(a, k):
        return ndimage.correlate(a, k, mode="constant", cval=0.0)

    Z = M_h.values - np.mean(M_h.values)
    ones = np.ones_like(Z)
    n = corr(ones, K1)
    mu, mv, mz = corr(ones, U) / n, corr(ones, V) / n, corr(Z, K1) / n
    cuu = corr(ones, U * U) / n - mu * mu
    cuv = corr(ones, U * V) / n - mu * mv
    cvv = corr(ones, V * V) / n - mv * mv
    cuz = corr(Z, U) / n - mu * mz
    cvz = corr(Z, V) / n - mv * mz
    czz = corr(Z * Z, K1) / n - mz * mz
    det = cuu * cvv - cuv * cuv
    b = (cuz * cvv - cvz * cuv) / det
    c = (cvz * cuu - cuz * cuv) / det
    resid = np.maximum(czz - b * cuz - c * cvz, 0.0)
    return b, c, np.sqrt(resid)


def flatness_map(M_h: GridMap, footprint: Footprint) -> GridMap:
    """Tilt angle (rad) of the plane fitted to each footprint window of ``M_h``."""
    b, c, _ = _plane_fit_stats(M_h, footprint)
    # arccos(|n_z|) of the unit normal, in a form that stays exact near zero tilt
    return GridMap(M_h.spec, np.arctan(np.hypot(b, c)), "flatness")


def roughness_map(M_h: GridMap, footprint: Footprint) -> GridMap:
    """Residual RMS (m) of the per-window plane fit; diagnostic only."""
    _, _, rms = _plane_fit_stats(M_h, footprint)
    return GridMap(M_h.spec, rms, "roughness")


def step_height_map(M_h: GridMap, footprint: Footprint, robot_z: float) -> GridMap:
    r = footprint.radius_cells(M_h.spec.resolution)
    wmax = ndimage.maximum_filter(M_h.values, size=2 * r + 1, mode="constant", cval=-np.inf)
    return GridMap(M_h.spec, np.maximum(wmax - robot_z, 0.0), "step")


def combine(M_slope: GridMap, M_flat: GridMap, M_step: GridMap, params: TraversabilityParams) -> GridMap:
    _same_spec(M_slope, M_flat, M_step)
    w1, w2, w3 = params.weights
    tau = (
        w1 * np.clip(M_slope.values / params.s_crit, 0.0, 1.0)
        + w2 * np.clip(M_flat.values / params.f_crit, 0.0, 1.0)
        + w3 * np.clip(M_step.values / params.zeta_crit, 0.0, 1.0)
    )
    return GridMap(M_slope.spec, np.clip(tau, 0.0, 1.0), "traversability")


def apply_mask(M_tau: GridMap, M_sigma: GridMap, sigma_crit: float) -> GridMap:
    _same_spec(M_tau, M_sigma)
    return GridMap(M_tau.spec, np.where(M_sigma.values > sigma_crit, 1.0, M_tau.values), M_tau.layer)


@dataclass
class MapStack:
    elevation: GridMap
    variance: GridMap
    slope: GridMap
    flatness: GridMap
    step: GridMap
    traversability: GridMap

    def layers(self) -> dict[str, GridMap]:
        return {name: getattr(self, name) for name in LAYERS}


def build_maps(
    model: SgpElevationModel,
    spec: GridSpec,
    footprint: Footprint,
    params: TraversabilityParams,
    robot_z: float,
) -> MapStack:
    M_h, M_sigma = rasterize(model, spec)
    M_slope = slope_map(model, spec)
    M_flat = flatness_map(M_h, footprint)
    M_step = step_height_map(M_h, footprint, robot_z)
    M_tau = apply_mask(combine(M_slope, M_flat, M_step, params), M_sigma, params.sigma_crit)
    return MapStack(M_h, M_sigma, M_slope, M_flat, M_step, M_tau)
