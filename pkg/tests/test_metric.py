import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from land.metric import (
    ConstantMetric,
    LearnedMetric,
    MetricParams,
    default_rho,
    learn_metric,
    measure_density,
    median_pairwise_sq,
    metric_derivative,
    metric_tensor,
)


def test_single_anchor_at_anchor():
    # all squared deviations vanish at the anchor, leaving only rho
    m = learn_metric(np.zeros((1, 2)), sigma=1.0, rho=0.1)
    np.testing.assert_allclose(m.tensor(np.zeros(2)), [10.0, 10.0], rtol=1e-14)


def test_two_anchor_kernel_sum():
    # direct evaluation of the kernel sum: w_n = exp(-1/2) at distance 1
    m = learn_metric(np.array([[-1.0, 0.0], [1.0, 0.0]]), sigma=1.0, rho=0.1)
    got = m.tensor(np.zeros(2))
    s1 = 2.0 * np.exp(-0.5) * 1.0 + 0.1
    np.testing.assert_allclose(got[0], 1.0 / s1, rtol=1e-13)
    np.testing.assert_allclose(got[0], 0.7616, atol=5e-5)
    np.testing.assert_allclose(got[1], 10.0, rtol=1e-13)


def test_far_from_anchors_hits_ceiling():
    g = np.random.default_rng(0)
    anchors = g.standard_normal((20, 3))
    m = learn_metric(anchors, sigma=0.7, rho=0.05)
    far = np.full(3, 1e3)
    np.testing.assert_allclose(m.tensor(far), 1.0 / 0.05, rtol=1e-12)
    np.testing.assert_allclose(measure_density(m, far), 0.05 ** (-1.5), rtol=1e-12)


def test_dense_cluster_stays_below_ceiling():
    g = np.random.default_rng(1)
    anchors = 0.3 * g.standard_normal((200, 2))
    m = learn_metric(anchors, sigma=0.5, rho=0.01)
    here = m.tensor(anchors[0])
    assert np.all(here > 0)
    assert np.all(here < 1.0 / 0.01)


def test_derivative_matches_finite_differences():
    m = learn_metric(np.array([[-1.0, 0.0], [1.0, 0.0]]), sigma=1.0, rho=0.1)
    x = np.zeros(2)
    _, dm = m.tensor_and_derivative(x)
    h = 1e-5
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (m.tensor(x + e) - m.tensor(x - e)) / (2 * h)
        np.testing.assert_allclose(dm[:, k], fd, rtol=1e-6, atol=1e-10)


def test_derivative_fd_random_configs():
    g = np.random.default_rng(7)
    anchors = g.standard_normal((40, 3))
    m = learn_metric(anchors, sigma=0.8, rho=0.02)
    pts = g.standard_normal((10, 3)) * 1.5
    _, dm = m.tensor_and_derivative(pts)
    h = 1e-5
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (m.tensor(pts + e) - m.tensor(pts - e)) / (2 * h)
        np.testing.assert_allclose(dm[:, :, k], fd, rtol=2e-5, atol=1e-8)


def test_tensor_matches_tensor_and_derivative():
    g = np.random.default_rng(3)
    m = learn_metric(g.standard_normal((30, 2)), sigma=0.6, rho=0.05)
    pts = g.standard_normal((17, 2))
    t0 = m.tensor(pts)
    t1, _ = m.tensor_and_derivative(pts)
    np.testing.assert_array_equal(t0, t1)


def test_single_point_and_batch_agree():
    g = np.random.default_rng(4)
    m = learn_metric(g.standard_normal((25, 2)), sigma=0.9, rho=0.03)
    pts = g.standard_normal((5, 2))
    batch = m.tensor(pts)
    for i in range(5):
        # BLAS may sum the kernel products in a different order per batch shape
        np.testing.assert_allclose(m.tensor(pts[i]), batch[i], rtol=1e-12)


def test_measure_is_sqrt_det():
    g = np.random.default_rng(5)
    m = learn_metric(g.standard_normal((25, 3)), sigma=0.9, rho=0.03)
    pts = g.standard_normal((6, 3))
    t = m.tensor(pts)
    np.testing.assert_allclose(m.measure(pts), np.sqrt(np.prod(t, axis=1)), rtol=1e-12)
    np.testing.assert_allclose(np.exp(m.log_measure(pts)), m.measure(pts), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    sigma=st.floats(0.1, 3.0),
    rho=st.floats(1e-4, 1.0),
)
def test_tensor_bounded_by_rho_ceiling(seed, sigma, rho):
    g = np.random.default_rng(seed)
    anchors = g.standard_normal((15, 2)) * g.uniform(0.1, 5.0)
    m = learn_metric(anchors, sigma=sigma, rho=rho)
    pts = g.standard_normal((8, 2)) * g.uniform(0.1, 20.0)
    t = m.tensor(pts)
    assert np.all(np.isfinite(t))
    assert np.all(t > 0)
    assert np.all(t <= 1.0 / rho + 1e-12)


def test_anchors_are_copied():
    data = np.array([[0.0, 0.0], [1.0, 1.0]])
    m = learn_metric(data, sigma=1.0, rho=0.1)
    before = m.tensor(np.zeros(2)).copy()
    data[0] = 50.0
    np.testing.assert_array_equal(m.tensor(np.zeros(2)), before)


def test_validation_errors():
    with pytest.raises(ValueError):
        learn_metric(np.zeros((0, 2)), sigma=1.0)
    with pytest.raises(ValueError):
        learn_metric(np.array([[np.nan, 0.0]]), sigma=1.0)
    with pytest.raises(ValueError):
        learn_metric(np.zeros((3, 2)), sigma=0.0)
    with pytest.raises(ValueError):
        learn_metric(np.zeros((3, 2)), sigma=1.0, rho=-0.1)
    with pytest.raises(ValueError):
        MetricParams(sigma=1.0, rho=0.0)
    m = learn_metric(np.array([[0.0, 0.0], [1.0, 2.0]]), sigma=1.0)
    with pytest.raises(ValueError):
        m.tensor(np.zeros(3))  # dim mismatch


def test_median_pairwise_sq_brute_force():
    g = np.random.default_rng(11)
    x = g.standard_normal((12, 2))
    dists = [np.linalg.norm(x[i] - x[j]) for i in range(12) for j in range(i + 1, 12)]
    med2 = np.median(dists) ** 2
    np.testing.assert_allclose(median_pairwise_sq(x), med2, rtol=1e-12)
    np.testing.assert_allclose(default_rho(x), 1e-2 * med2, rtol=1e-12)


def test_constant_metric():
    m = ConstantMetric(np.array([2.0, 0.5]))
    pts = np.random.default_rng(0).standard_normal((4, 2))
    np.testing.assert_array_equal(m.tensor(pts), np.tile([2.0, 0.5], (4, 1)))
    t, dm = m.tensor_and_derivative(pts)
    np.testing.assert_array_equal(dm, np.zeros((4, 2, 2)))
    np.testing.assert_allclose(m.measure(pts), np.ones(4))
    np.testing.assert_array_equal(m.geodesic_acceleration(pts, pts), np.zeros((4, 2)))
    ident = ConstantMetric.identity(3)
    np.testing.assert_array_equal(ident.tensor(np.zeros(3)), np.ones(3))
    with pytest.raises(ValueError):
        ConstantMetric(np.array([1.0, -1.0]))


def test_module_level_wrappers(arc_metric, arc_points):
    x = arc_points[:3]
    np.testing.assert_array_equal(metric_tensor(arc_metric, x), arc_metric.tensor(x))
    _, dm = arc_metric.tensor_and_derivative(x)
    np.testing.assert_array_equal(metric_derivative(arc_metric, x), dm)
