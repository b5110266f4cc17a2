"""Sparse GP elevation model (subset-of-data over inducing inputs).

The model is an exact GP posterior restricted to ``m`` inducing training
points with a constant prior mean equal to the sample mean of all targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class NumericalFailure(ArithmeticError):
    """Kernel system stayed non positive-definite after jitter escalation."""

    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class RbfKernel:
    signal_variance: float = 1.0
    length_scale: float = 0.5

    def __post_init__(self):
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be > 0")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be > 0")

    def __call__(self, A, B) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        d2 = cdist(A, B, "sqeuclidean")
        return self.signal_variance * np.exp(-d2 / (2.0 * self.length_scale**2))


def kernel_eval(k: RbfKernel, p, q) -> float:
    d2 = float(np.sum((np.asarray(p, dtype=float) - np.asarray(q, dtype=float)) ** 2))
    return k.signal_variance * math.exp(-d2 / (2.0 * k.length_scale**2))


@dataclass
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 2)
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")
        if len(self.inputs) < 1:
            raise ValueError("training set is empty")

    @property
    def count(self) -> int:
        return len(self.targets)

    @classmethod
    def from_points(cls, points) -> "TrainingSet":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return cls(pts[:, :2], pts[:, 2])


def select_inducing_indices(inputs, m: int, strategy: str = "grid_stride", seed: int = 0) -> np.ndarray:
    """Indices of ``m`` inducing points among ``inputs`` (see :func:`select_inducing`)."""
    X = np.asarray(inputs, dtype=float).reshape(-1, 2)
    n = len(X)
    if not 1 <= m <= n:
        raise ValueError(f"inducing count m={m} must satisfy 1 <= m <= {n}")
    if m == n:
        return np.arange(n)
    if strategy == "uniform_random":
        rng = np.random.default_rng(seed)
        return np.sort(rng.choice(n, size=m, replace=False))
    if strategy != "grid_stride":
        raise ValueError(f"unknown inducing strategy {strategy!r}")

    b = math.ceil(math.sqrt(m))
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    cell = np.where(span > 0, span / b, 1.0)
    ij = np.clip(np.floor((X - lo) / cell).astype(int), 0, b - 1)
    bucket = ij[:, 1] * b + ij[:, 0]
    centers = lo + (ij + 0.5) * cell
    d2 = ((X - centers) ** 2).sum(axis=1)
    # lexsort: bucket, then distance, then index (stable -> lowest index wins ties)
    order = np.lexsort((np.arange(n), d2, bucket))
    first = np.ones(n, dtype=bool)
    first[1:] = bucket[order][1:] != bucket[order][:-1]
    reps = order[first]  # one per nonempty bucket, bucket-ascending
    if len(reps) >= m:
        # more nonempty buckets than m: thin evenly along the bucket order
        chosen = reps[np.round(np.linspace(0, len(reps) - 1, m)).astype(int)]
    else:
        rest = np.setdiff1d(np.arange(n), reps)
        rng = np.random.default_rng(seed)
        extra = rng.choice(rest, size=m - len(reps), replace=False)
        chosen = np.concatenate([reps, extra])
    return np.sort(chosen)


def select_inducing(data: TrainingSet, m: int, strategy: str = "grid_stride", seed: int = 0) -> np.ndarray:
    """Pick ``m`` training inputs to act as inducing points.

    ``grid_stride`` buckets the inputs on a ceil(sqrt(m))^2 grid over their
    bounding box and keeps the input nearest each bucket centre; shortfalls
    are filled by seeded sampling. ``uniform_random`` samples without
    replacement. Returned rows keep the training-set order.
    """
    return data.inputs[select_inducing_indices(data.inputs, m, strategy, seed)]


def _match_inducing(data: TrainingSet, inducing: np.ndarray) -> np.ndarray:
    pool: dict[tuple[float, float], list[int]] = {}
    for i, p in enumerate(map(tuple, data.inputs)):
        pool.setdefault(p, []).append(i)
    out = []
    for p in map(tuple, inducing):
        bucket = pool.get(p)
        if not bucket:
            raise ValueError(f"inducing point {p} is not an unused training input")
        out.append(bucket.pop(0))
    return np.asarray(out, dtype=int)


def jittered_cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, adding diagonal jitter on failure."""
    jitter = 0.0
    eye = np.eye(len(K))
    while True:
        try:
            return cholesky(K + jitter * eye, lower=True, check_finite=False), jitter
        except LinAlgError:
            pass
        if jitter >= JITTER_MAX:
            raise NumericalFailure(f"kernel matrix not positive definite (jitter {jitter:g})", jitter)
        jitter = JITTER_START if jitter == 0.0 else min(jitter * 10.0, JITTER_MAX)


@dataclass(frozen=True, eq=False)
class SgpElevationModel:
    kernel: RbfKernel
    noise_variance: float
    inducing_inputs: np.ndarray
    cached_weights: np.ndarray
    cached_cov_factor: np.ndarray
    prior_mean: float
    jitter: float = 0.0

    def predict(self, P) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance (noise included) at rows of ``P``."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        Ks = self.kernel(P, self.inducing_inputs)
        mean = self.prior_mean + Ks @ self.cached_weights
        v = solve_triangular(self.cached_cov_factor, Ks.T, lower=True, check_finite=False)
        latent = self.kernel.signal_variance - np.einsum("ij,ij->j", v, v)
        var = np.maximum(latent, 0.0) + self.noise_variance
        return mean, var

    def predict_gradient(self, P) -> np.ndarray:
        """Gradient of the predictive mean, shape (n, 2)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        Kw = self.kernel(P, self.inducing_inputs) * self.cached_weights
        # sum_j k(p, z_j) w_j (z_j - p) / l^2
        g = Kw @ self.inducing_inputs - P * Kw.sum(axis=1)[:, None]
        return g / self.kernel.length_scale**2


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float


def fit(data: TrainingSet, kernel: RbfKernel, noise_variance: float, inducing) -> SgpElevationModel:
    if not noise_variance > 0:
        raise ValueError("noise_variance must be > 0")
    Z = np.asarray(inducing, dtype=float).reshape(-1, 2)
    if len(Z) < 1:
        raise ValueError("need at least one inducing input")
    if len(Z) > data.count:
        raise ValueError("more inducing inputs than training points")
    idx = _match_inducing(data, Z)
    prior_mean = float(np.mean(data.targets))
    zc = data.targets[idx] - prior_mean
    K = kernel(Z, Z) + noise_variance * np.eye(len(Z))
    L, jitter = jittered_cholesky(K)
    w = cho_solve((L, True), zc, check_finite=False)
    return SgpElevationModel(kernel, float(noise_variance), Z, w, L, prior_mean, jitter)


def predict(model: SgpElevationModel, p) -> Prediction:
    mean, var = model.predict(np.asarray(p, dtype=float).reshape(1, 2))
    return Prediction(float(mean[0]), float(var[0]))


def predict_gradient(model: SgpElevationModel, p) -> np.ndarray:
    return model.predict_gradient(np.asarray(p, dtype=float).reshape(1, 2))[0]
