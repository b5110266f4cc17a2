import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_gp
from terranav.sgp import (
    JITTER_MAX,
    NumericalFailure,
    RbfKernel,
    TrainingSet,
    fit,
    jittered_cholesky,
    kernel_eval,
    predict,
    predict_gradient,
    select_inducing,
    select_inducing_indices,
)


def random_set(rng, n, scale=3.0):
    X = rng.uniform(-scale, scale, size=(n, 2))
    z = np.sin(X[:, 0]) + 0.3 * X[:, 1] + rng.normal(0, 0.05, n)
    return TrainingSet(X, z)


# -- kernel -------------------------------------------------------------------


def test_kernel_zero_distance():
    k = RbfKernel(2.5, 0.7)
    assert kernel_eval(k, (1.0, -3.0), (1.0, -3.0)) == 2.5


def test_kernel_at_sqrt2_lengths():
    k = RbfKernel(1.3, 0.4)
    d = 0.4 * math.sqrt(2)
    assert kernel_eval(k, (0, 0), (d, 0)) == pytest.approx(1.3 * math.exp(-1), rel=1e-14)


def test_kernel_worked_value():
    k = RbfKernel(2.0, 0.5)
    assert kernel_eval(k, (0, 0), (0.3, 0.4)) == pytest.approx(2 * math.exp(-0.5), rel=1e-15)


def test_kernel_rejects_bad_hyperparameters():
    with pytest.raises(ValueError):
        RbfKernel(0.0, 1.0)
    with pytest.raises(ValueError):
        RbfKernel(1.0, -1.0)


@given(
    st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
    st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
    st.floats(0.1, 3),
    st.floats(0.1, 3),
)
def test_kernel_symmetric_and_bounded(p, q, sf2, ell):
    k = RbfKernel(sf2, ell)
    a = kernel_eval(k, p, q)
    assert a == kernel_eval(k, q, p)
    assert 0 <= a <= sf2
    if math.dist(p, q) < 5 * ell:
        assert a > 0


def test_matrix_kernel_agrees_with_scalar(rng):
    k = RbfKernel(1.7, 0.6)
    A = rng.normal(size=(5, 2))
    B = rng.normal(size=(4, 2))
    K = k(A, B)
    for i in range(5):
        for j in range(4):
            assert K[i, j] == pytest.approx(kernel_eval(k, A[i], B[j]), rel=1e-13)


# -- inducing selection -------------------------------------------------------


def bucket_oracle(X, m):
    """Nearest-to-centre point of every nonempty bucket, by explicit loops."""
    b = math.ceil(math.sqrt(m))
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    cell = np.where(span > 0, span / b, 1.0)
    best = {}
    for idx, p in enumerate(X):
        ij = tuple(min(int((p[a] - lo[a]) // cell[a]), b - 1) for a in range(2))
        c = lo + (np.array(ij) + 0.5) * cell
        d = float(((p - c) ** 2).sum())
        if ij not in best or d < best[ij][0]:
            best[ij] = (d, idx)
    return {v[1] for v in best.values()}


def test_select_all_points_keeps_order(rng):
    data = random_set(rng, 17)
    np.testing.assert_array_equal(select_inducing(data, 17), data.inputs)


def test_select_one_point_is_nearest_bbox_centre(rng):
    data = random_set(rng, 40)
    lo, hi = data.inputs.min(0), data.inputs.max(0)
    c = (lo + hi) / 2
    want = data.inputs[np.argmin(((data.inputs - c) ** 2).sum(1))]
    np.testing.assert_array_equal(select_inducing(data, 1)[0], want)


def test_grid_stride_matches_bucket_oracle(rng):
    for _ in range(10):
        data = random_set(rng, 100)
        idx = select_inducing_indices(data.inputs, 25)
        assert len(idx) == 25 == len(set(idx.tolist()))
        reps = bucket_oracle(data.inputs, 25)
        if len(reps) == 25:
            assert set(idx.tolist()) == reps
        else:
            # fewer nonempty buckets than m: all representatives kept, rest filled
            assert reps <= set(idx.tolist())


def test_grid_stride_ties_go_to_lowest_index():
    X = np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 0.5], [1.0, 1.5], [0.0, 2.0], [2.0, 0.0]])
    # m=1: centre (1,1); points 2 and 3 are equally near
    assert select_inducing_indices(X, 1).tolist() == [2]


def test_uniform_random_is_seeded(rng):
    data = random_set(rng, 60)
    a = select_inducing(data, 10, "uniform_random", seed=5)
    b = select_inducing(data, 10, "uniform_random", seed=5)
    np.testing.assert_array_equal(a, b)
    assert len({tuple(p) for p in a}) == 10


@pytest.mark.parametrize("m", [0, 11])
def test_select_rejects_bad_m(m, rng):
    with pytest.raises(ValueError):
        select_inducing(random_set(rng, 10), m)


def test_select_rejects_unknown_strategy(rng):
    with pytest.raises(ValueError):
        select_inducing(random_set(rng, 10), 3, "kmeans")


# -- fit / predict ------------------------------------------------------------


def test_single_point_fit():
    data = TrainingSet([[0.0, 0.0]], [5.0])
    model = fit(data, RbfKernel(), 1e-3, data.inputs)
    assert model.prior_mean == 5.0
    np.testing.assert_array_equal(model.cached_weights, [0.0])


def test_duplicate_inputs_are_regularised():
    data = TrainingSet([[1.0, 1.0], [1.0, 1.0]], [0.0, 1.0])
    model = fit(data, RbfKernel(), 1e-2, data.inputs)
    assert np.all(np.diag(model.cached_cov_factor) > 0)
    assert predict(model, (1.0, 1.0)).mean == pytest.approx(0.5, abs=1e-2)


def test_full_set_matches_dense_oracle(rng):
    data = random_set(rng, 30)
    k = RbfKernel(1.2, 0.8)
    model = fit(data, k, 1e-3, data.inputs)
    mean, var = model.predict(data.inputs)
    m0, v0 = dense_gp(data.inputs, data.targets, data.inputs, 1.2, 0.8, 1e-3)
    np.testing.assert_allclose(mean, m0, atol=1e-8)
    np.testing.assert_allclose(var, v0, atol=1e-8)


def test_interpolates_single_datum():
    data = TrainingSet([[0.3, -0.2], [5.0, 5.0]], [1.7, 0.0])
    model = fit(data, RbfKernel(1.0, 0.5), 1e-12, data.inputs[:1])
    assert predict(model, (0.3, -0.2)).mean == pytest.approx(1.7, abs=1e-6)


def test_reverts_to_prior_far_away(rng):
    data = random_set(rng, 20, scale=1.0)
    k = RbfKernel(0.8, 0.3)
    model = fit(data, k, 1e-3, data.inputs)
    p = predict(model, (10.0, 10.0))
    assert p.mean == pytest.approx(np.mean(data.targets), abs=1e-6 * math.sqrt(0.8))
    assert p.variance == pytest.approx(0.8 + 1e-3, abs=1e-6 * 0.8)


def test_random_queries_match_dense_oracle(rng):
    data = random_set(rng, 20)
    model = fit(data, RbfKernel(), 1e-3, data.inputs)
    Q = rng.uniform(-4, 4, size=(50, 2))
    mean, var = model.predict(Q)
    m0, v0 = dense_gp(data.inputs, data.targets, Q, 1.0, 0.5, 1e-3)
    np.testing.assert_allclose(mean, m0, atol=1e-8)
    np.testing.assert_allclose(var, v0, atol=1e-8)


def test_subset_uses_only_inducing_targets(rng):
    data = random_set(rng, 40)
    Z = select_inducing(data, 12)
    idx = [int(np.flatnonzero((data.inputs == z).all(1))[0]) for z in Z]
    model = fit(data, RbfKernel(), 1e-3, Z)
    Q = rng.uniform(-3, 3, size=(10, 2))
    # dense GP on the inducing subset, centred on the full-data mean
    mu = np.mean(data.targets)
    m0, v0 = dense_gp(Z, data.targets[idx] - mu, Q, 1.0, 0.5, 1e-3, prior_mean=0.0)
    mean, var = model.predict(Q)
    np.testing.assert_allclose(mean, m0 + mu, atol=1e-9)
    np.testing.assert_allclose(var, v0, atol=1e-9)


def test_variance_floor(rng):
    data = random_set(rng, 30, scale=0.3)
    model = fit(data, RbfKernel(1.0, 2.0), 1e-6, data.inputs)
    _, var = model.predict(rng.uniform(-0.3, 0.3, size=(200, 2)))
    assert np.all(var >= 1e-6)


@settings(max_examples=30)
@given(st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_single_point_variance_monotone(r1, r2):
    data = TrainingSet([[0.0, 0.0]], [1.0])
    model = fit(data, RbfKernel(1.0, 0.7), 1e-3, data.inputs)
    a, b = sorted((r1, r2))
    assert predict(model, (a, 0.0)).variance <= predict(model, (b, 0.0)).variance


def test_fit_predict_bit_identical(rng):
    data = random_set(rng, 50)
    Z = select_inducing(data, 20)
    Q = rng.uniform(-3, 3, size=(30, 2))
    a = fit(data, RbfKernel(), 1e-3, Z).predict(Q)
    b = fit(data, RbfKernel(), 1e-3, Z).predict(Q)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_fit_rejects_bad_input(rng):
    data = random_set(rng, 5)
    with pytest.raises(ValueError):
        fit(data, RbfKernel(), 0.0, data.inputs)
    with pytest.raises(ValueError):
        fit(data, RbfKernel(), 1e-3, np.empty((0, 2)))
    with pytest.raises(ValueError):
        fit(data, RbfKernel(), 1e-3, [[9.0, 9.0]])


def test_jitter_escalation_and_failure():
    # rank-one matrix: fails without jitter, succeeds once jitter is added
    v = np.array([1.0, 2.0, 3.0])
    L, jitter = jittered_cholesky(np.outer(v, v))
    assert 0 < jitter <= JITTER_MAX
    assert np.all(np.diag(L) > 0)
    with pytest.raises(NumericalFailure) as exc:
        jittered_cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))
    assert exc.value.jitter == JITTER_MAX


# -- gradient -----------------------------------------------------------------


def test_gradient_zero_at_symmetric_apex():
    d = 0.6
    X = [[d, 0], [-d, 0], [0, d], [0, -d]]
    data = TrainingSet(X, [1.0, 1.0, 1.0, 1.0])
    data2 = TrainingSet(X + [[3.0, 3.0]], [1.0] * 4 + [0.0])
    model = fit(data2, RbfKernel(), 1e-3, data2.inputs[:4])
    np.testing.assert_allclose(predict_gradient(model, (0.0, 0.0)), [0.0, 0.0], atol=1e-10)
    assert data.count == 4


def test_gradient_zero_on_coincident_point():
    data = TrainingSet([[0.4, 0.1], [2.0, 0.0]], [1.0, 0.0])
    model = fit(data, RbfKernel(), 1e-3, data.inputs[:1])
    np.testing.assert_allclose(predict_gradient(model, (0.4, 0.1)), [0.0, 0.0], atol=1e-15)


def test_gradient_matches_finite_differences(rng):
    data = random_set(rng, 40)
    model = fit(data, RbfKernel(1.0, 0.8), 1e-3, select_inducing(data, 25))
    h = 1e-5
    for q in rng.uniform(-3, 3, size=(20, 2)):
        g = predict_gradient(model, q)
        fd = np.array(
            [
                (predict(model, q + [h, 0]).mean - predict(model, q - [h, 0]).mean) / (2 * h),
                (predict(model, q + [0, h]).mean - predict(model, q - [0, h]).mean) / (2 * h),
            ]
        )
        assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-3)
