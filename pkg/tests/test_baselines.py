import numpy as np
import pytest
from scipy.stats import multivariate_normal

from land.baselines import (
    GaussianMixture,
    GmmConfig,
    KMeansConfig,
    MeanConfig,
    gmm_fit,
    intrinsic_covariance,
    intrinsic_mean,
    ls_estimate,
    ls_mixture,
    mvn_logpdf,
    riemannian_kmeans,
)
from land.geodesic import GeodesicSolverConfig
from land.metric import ConstantMetric
from land.rng import McStream

FIXED8 = GeodesicSolverConfig(integrator="fixed", fixed_steps=8, bvp_tol=1e-8)


def blobs3(seed=0, per=25, spread=0.25):
    g = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    pts = np.vstack([c + spread * g.standard_normal((per, 2)) for c in centers])
    return pts, np.repeat(np.arange(3), per)


def test_intrinsic_mean_identity_is_euclidean_mean(identity2):
    g = np.random.default_rng(1)
    data = g.standard_normal((40, 2)) + [3.0, -1.0]
    mu = intrinsic_mean(data, identity2, MeanConfig(max_iter=60, tol=1e-12), solver=FIXED8)
    np.testing.assert_allclose(mu, data.mean(axis=0), atol=1e-8)


def test_intrinsic_covariance_identity_matches_numpy(identity2):
    g = np.random.default_rng(2)
    data = g.standard_normal((30, 2)) @ np.array([[1.0, 0.3], [0.0, 0.5]])
    mu = data.mean(axis=0)
    cov = intrinsic_covariance(data, identity2, mu, solver=FIXED8)
    np.testing.assert_allclose(cov, np.cov(data.T, ddof=1), atol=1e-8)
    with pytest.raises(ValueError):
        intrinsic_covariance(data[:1], identity2, mu, solver=FIXED8)


def test_ls_estimate_bundles_mean_and_cov(identity2):
    g = np.random.default_rng(3)
    data = g.standard_normal((25, 2))
    est = ls_estimate(data, identity2, solver=FIXED8)
    np.testing.assert_allclose(est.mean, data.mean(axis=0), atol=1e-7)
    np.testing.assert_allclose(est.covariance, np.cov(data.T, ddof=1), atol=1e-7)


def test_kmeans_identity_recovers_blobs(identity2):
    data, labels = blobs3()
    centers, assign = riemannian_kmeans(data, identity2, 3, KMeansConfig(seed=0), solver=FIXED8)
    assert centers.shape == (3, 2)
    # each true blob maps to exactly one recovered cluster
    for c in range(3):
        blok = assign[labels == c]
        assert len(np.unique(blok)) == 1
    got = centers[np.argsort(centers.sum(axis=1))]
    want = np.array([[0.0, 0.0], [0.0, 4.0], [4.0, 0.0]])
    want = want[np.argsort(want.sum(axis=1))]
    np.testing.assert_allclose(np.sort(got, axis=0), np.sort(want, axis=0), atol=0.2)


def test_kmeans_k_equals_n(identity2):
    data = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    centers, assign = riemannian_kmeans(data, identity2, 3, KMeansConfig(seed=1), solver=FIXED8)
    assert sorted(assign.tolist()) == [0, 1, 2]
    np.testing.assert_allclose(np.sort(centers, axis=0), np.sort(data, axis=0), atol=1e-8)


def test_kmeans_k1_is_intrinsic_mean(identity2):
    g = np.random.default_rng(4)
    data = g.standard_normal((20, 2))
    centers, assign = riemannian_kmeans(data, identity2, 1, KMeansConfig(seed=0), solver=FIXED8)
    assert (assign == 0).all()
    np.testing.assert_allclose(centers[0], data.mean(axis=0), atol=1e-6)


def test_mvn_logpdf_against_scipy():
    g = np.random.default_rng(5)
    mean = np.array([0.5, -1.0])
    cov = np.array([[1.2, 0.4], [0.4, 0.9]])
    x = g.standard_normal((20, 2))
    want = multivariate_normal(mean, cov).logpdf(x)
    np.testing.assert_allclose(mvn_logpdf(x, mean, cov), want, rtol=1e-10)


def test_gmm_single_component_is_ml_estimate():
    g = np.random.default_rng(6)
    data = g.standard_normal((200, 2)) @ np.array([[1.0, 0.0], [0.4, 0.7]]) + [1.0, 2.0]
    gm = gmm_fit(data, 1, GmmConfig(seed=0))
    np.testing.assert_allclose(gm.means[0], data.mean(axis=0), atol=1e-8)
    ml_cov = np.cov(data.T, bias=True)
    # covariance matches up to the SPD floor
    assert np.linalg.norm(gm.covs[0] - ml_cov) / np.linalg.norm(ml_cov) < 1e-4
    np.testing.assert_allclose(gm.weights, [1.0])


def test_gmm_recovers_blobs_and_predicts():
    data, labels = blobs3(seed=7)
    gm = gmm_fit(data, 3, GmmConfig(seed=0))
    pred = gm.predict(data)
    for c in range(3):
        assert len(np.unique(pred[labels == c])) == 1
    r = gm.responsibilities(data)
    np.testing.assert_allclose(r.sum(axis=1), 1.0, rtol=1e-12)
    lp = gm.log_pdf(data)
    assert np.isfinite(lp).all()


def test_gmm_duplicate_data_stays_finite():
    data = np.tile([[1.0, 2.0]], (30, 1))
    gm = gmm_fit(data, 2, GmmConfig(seed=0))
    assert np.isfinite(gm.log_pdf(data)).all()
    for c in gm.covs:
        np.linalg.cholesky(c)  # floored, still SPD


def test_gmm_sample_roundtrip():
    data, _ = blobs3(seed=8)
    gm = gmm_fit(data, 3, GmmConfig(seed=0))
    xs = gm.sample(500, McStream(0, 3))
    assert xs.shape == (500, 2)
    again = gm.sample(500, McStream(0, 3))
    np.testing.assert_array_equal(xs, again)
    assert gm.log_pdf(xs).mean() > gm.log_pdf(xs + 10.0).mean()


def test_ls_mixture_k1_matches_ls_estimate(identity2):
    g = np.random.default_rng(9)
    data = g.standard_normal((30, 2))
    single = ls_estimate(data, identity2, solver=FIXED8)
    mix = ls_mixture(data, identity2, 1, solver=FIXED8)
    np.testing.assert_allclose(mix.means[0], single.mean, atol=1e-6)
    np.testing.assert_allclose(mix.covs[0], single.covariance, atol=1e-6)
    np.testing.assert_allclose(mix.weights, [1.0])


def test_ls_mixture_splits_blobs(identity2):
    data, labels = blobs3(seed=10)
    mix = ls_mixture(data, identity2, 3, solver=FIXED8)
    assert len(mix.means) == 3
    np.testing.assert_allclose(np.sum(mix.weights), 1.0, rtol=1e-12)
    # each weight close to a third for balanced blobs
    assert np.all(np.abs(np.asarray(mix.weights) - 1 / 3) < 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        MeanConfig(max_iter=0)
    with pytest.raises(ValueError):
        KMeansConfig(n_restarts=0)
    with pytest.raises(ValueError):
        GmmConfig(cov_floor=0.0)
