import math

import numpy as np
import pytest

from land.baselines import mvn_logpdf
from land.geodesic import GeodesicSolverConfig
from land.metric import ConstantMetric
from land.model import (
    FitConfig,
    FitError,
    LandParams,
    McSamples,
    fit_mle,
    log_density,
    log_density_batch,
    model_from_dict,
    model_to_dict,
    nll_objective,
    normalization_constant,
    sample,
)
from land.rng import McStream

FIXED8 = GeodesicSolverConfig(integrator="fixed", fixed_steps=8, bvp_tol=1e-8)


def gauss_z(cov):
    d = cov.shape[0]
    return (2 * math.pi) ** (d / 2) * math.sqrt(np.linalg.det(cov))


def test_norm_const_identity_is_gaussian_z(identity2):
    cov = np.array([[0.8, 0.2], [0.2, 1.1]])
    c, mc = normalization_constant(identity2, np.zeros(2), cov, 200, McStream(0, 0), FIXED8)
    # measure == 1 everywhere, so the estimator has zero variance
    np.testing.assert_allclose(c, gauss_z(cov), rtol=1e-12)
    assert mc.n_used == 200
    np.testing.assert_allclose(mc.weights.sum(), 1.0, rtol=1e-12)


def test_norm_const_constant_metric_scaling():
    diag = np.array([4.0, 0.25, 2.0])
    m = ConstantMetric(diag)
    cov = np.diag([0.5, 1.5, 0.9])
    c, _ = normalization_constant(m, np.zeros(3), cov, 100, McStream(1, 0), FIXED8)
    np.testing.assert_allclose(c, gauss_z(cov) * math.sqrt(np.prod(diag)), rtol=1e-12)


def test_mc_samples_algebra():
    tang = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0], [3.0, 3.0]])
    lv = np.log(np.array([1.0, 2.0, 3.0, np.e]))
    ok = np.array([True, True, True, False])
    mc = McSamples(tangents=tang, log_values=lv, ok=ok, log_z=0.7)
    assert mc.n_used == 3
    np.testing.assert_allclose(mc.log_c_hat, 0.7 + math.log((1 + 2 + 3) / 3), rtol=1e-12)
    w = mc.weights
    np.testing.assert_allclose(w, [1 / 6, 2 / 6, 3 / 6, 0.0], rtol=1e-12)
    np.testing.assert_allclose(mc.mean_v(), w @ tang, rtol=1e-12)
    np.testing.assert_allclose(mc.mean_vv(), tang.T @ (w[:, None] * tang), rtol=1e-12)
    vals = mc.values
    assert np.isnan(vals[3]) and np.allclose(vals[:3], [1, 2, 3])


def test_log_density_identity_matches_gaussian(identity2):
    mu = np.array([0.4, -0.2])
    cov = np.array([[0.6, 0.1], [0.1, 0.9]])
    params = LandParams.from_moments(mu, cov, norm_const=gauss_z(cov))
    g = np.random.default_rng(5)
    pts = mu + g.standard_normal((12, 2))
    vals, okm = log_density_batch(params, identity2, pts, FIXED8)
    assert okm.all()
    np.testing.assert_allclose(vals, mvn_logpdf(pts, mu, cov), atol=1e-8)
    one = log_density(params, identity2, pts[0], FIXED8)
    np.testing.assert_allclose(one, vals[0], atol=1e-10)


def test_nll_objective_identity_closed_form(identity2):
    g = np.random.default_rng(6)
    data = g.standard_normal((40, 2))
    mu = np.zeros(2)
    cov = np.eye(2) * 1.3
    params = LandParams.from_moments(mu, cov, norm_const=gauss_z(cov))
    phi = nll_objective(data, params, identity2, FIXED8)
    want = float(0.5 * np.mean(np.sum(data**2, axis=1)) / 1.3 + math.log(gauss_z(cov)))
    np.testing.assert_allclose(phi, want, rtol=1e-9)


def test_missing_norm_const_raises(identity2):
    params = LandParams.from_moments(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        log_density(params, identity2, np.zeros(2))
    with pytest.raises(ValueError):
        nll_objective(np.zeros((3, 2)), params, identity2)


def test_fit_identity_recovers_moments(identity2):
    g = np.random.default_rng(7)
    cov_true = np.array([[1.0, 0.4], [0.4, 0.7]])
    data = g.multivariate_normal([1.0, -2.0], cov_true, size=150)
    cfg = FitConfig(mc_samples=400, max_iter=40, tol=1e-9, rng_seed=0)
    res = fit_mle(data, identity2, cfg, solver=FIXED8)
    ml_cov = np.cov(data.T, bias=True)
    np.testing.assert_allclose(res.params.mu, data.mean(axis=0), atol=2e-2)
    assert np.linalg.norm(res.params.cov - ml_cov) / np.linalg.norm(ml_cov) < 0.05


def test_fit_is_deterministic(arc_metric, arc_points):
    cfg = FitConfig(mc_samples=100, max_iter=3, rng_seed=3)
    solver = GeodesicSolverConfig(integrator="fixed", fixed_steps=8, bvp_tol=1e-4)
    r1 = fit_mle(arc_points, arc_metric, cfg, solver=solver)
    r2 = fit_mle(arc_points, arc_metric, cfg, solver=solver)
    np.testing.assert_array_equal(r1.params.mu, r2.params.mu)
    np.testing.assert_array_equal(r1.params.a, r2.params.a)
    np.testing.assert_array_equal(r1.trace, r2.trace)


def test_fit_trace_tracks_best_params(arc_metric, arc_points):
    cfg = FitConfig(mc_samples=200, max_iter=5, rng_seed=1)
    solver = GeodesicSolverConfig(integrator="fixed", fixed_steps=8, bvp_tol=1e-4)
    res = fit_mle(arc_points, arc_metric, cfg, solver=solver)
    assert len(res.trace) <= cfg.max_iter + 1
    # recomputing with cold log maps moves phi by at most the BVP tolerance
    phi = nll_objective(arc_points, res.params, arc_metric, solver)
    np.testing.assert_allclose(phi, res.trace.min(), rtol=1e-3)


def test_sample_identity_matches_gaussian(identity2):
    cov = np.array([[0.5, -0.1], [-0.1, 0.3]])
    params = LandParams.from_moments(np.array([2.0, 1.0]), cov, norm_const=gauss_z(cov))
    xs = sample(params, identity2, 4000, McStream(0, 9), solver=FIXED8)
    assert xs.shape == (4000, 2)
    np.testing.assert_allclose(xs.mean(axis=0), [2.0, 1.0], atol=5e-2)
    np.testing.assert_allclose(np.cov(xs.T), cov, atol=5e-2)
    again = sample(params, identity2, 4000, McStream(0, 9), solver=FIXED8)
    np.testing.assert_array_equal(xs, again)


def test_sample_degenerate_weights_raise():
    class Spiky(ConstantMetric):
        # one proposal grabs nearly all the importance weight
        def log_measure(self, x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return np.where(x[:, 0] > 2.0, 200.0, 0.0)

    m = Spiky(np.ones(2))
    params = LandParams.from_moments(np.zeros(2), np.eye(2), norm_const=1.0)
    with pytest.raises(FitError):
        sample(params, m, 50, McStream(0, 0), solver=FIXED8)


def test_params_validation():
    with pytest.raises(ValueError):
        LandParams.from_moments(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))  # not SPD
    with pytest.raises(ValueError):
        LandParams(mu=np.zeros(2), a=np.eye(2), cov=2 * np.eye(2))  # cov != inv(a^T a)
    p = LandParams.from_moments(np.zeros(2), np.diag([4.0, 1.0]))
    np.testing.assert_allclose(p.precision, np.diag([0.25, 1.0]), rtol=1e-12)
    q = p.with_moments(mu=np.ones(2))
    np.testing.assert_array_equal(q.mu, np.ones(2))
    np.testing.assert_array_equal(q.a, p.a)


def test_model_dict_roundtrip():
    cov = np.array([[0.9, 0.2], [0.2, 0.6]])
    p = LandParams.from_moments(np.array([0.1, -0.4]), cov, norm_const=3.3, norm_const_samples=77)
    d = model_to_dict(p, sigma=0.5, rho=0.01, seed=4, anchor_hash="ab12")
    q, meta = model_from_dict(d)
    np.testing.assert_array_equal(q.mu, p.mu)
    np.testing.assert_array_equal(q.a, p.a)
    assert q.norm_const == 3.3 and q.norm_const_samples == 77
    assert meta == {"sigma": 0.5, "rho": 0.01, "seed": 4, "metric_anchor_file_hash": "ab12"}


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(step_mu=0.0)
    with pytest.raises(ValueError):
        FitConfig(mc_samples=0)
    with pytest.raises(ValueError):
        FitConfig(init_strategy="pca")
    with pytest.raises(ValueError):
        FitConfig(rng_seed=-1)
