import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st

from land.evaluation import (
    LabeledDataset,
    aic_bic,
    f_measure,
    gen_half_ellipsoid,
    gen_two_moons,
    half_ellipsoid_arc_length,
    half_ellipsoid_truth,
    mean_nll_under_truth,
    metric_record,
    mixture_num_params,
)


def test_noise_zero_points_sit_on_component_means():
    ds = gen_half_ellipsoid(n=100, noise=0.0, seed=3)
    angles = np.linspace(0.0, np.pi, 20)
    means = np.stack([np.cos(angles), 0.5 * np.sin(angles)], axis=1)
    np.testing.assert_allclose(ds.points, means[ds.labels], atol=1e-15)
    # and exactly on the arc: (x/1)^2 + (y/0.5)^2 = 1
    lhs = ds.points[:, 0] ** 2 + (ds.points[:, 1] / 0.5) ** 2
    np.testing.assert_allclose(lhs, 1.0, atol=1e-12)


def test_labels_balanced_and_bit_stable():
    ds1 = gen_half_ellipsoid(n=300, noise=0.05, seed=11)
    ds2 = gen_half_ellipsoid(n=300, noise=0.05, seed=11)
    np.testing.assert_array_equal(ds1.points, ds2.points)
    np.testing.assert_array_equal(ds1.labels, ds2.labels)
    counts = np.bincount(ds1.labels, minlength=20)
    assert counts.min() == counts.max() == 15
    other = gen_half_ellipsoid(n=300, noise=0.05, seed=12)
    assert not np.array_equal(ds1.points, other.points)


def test_half_ellipsoid_embeds_in_higher_dim():
    ds = gen_half_ellipsoid(n=40, noise=0.0, seed=0, dim=4)
    assert ds.points.shape == (40, 4)
    np.testing.assert_allclose(ds.points[:, 2:], 0.0, atol=1e-15)


def test_truth_logpdf_matches_manual_mixture():
    truth = half_ellipsoid_truth(noise=0.07)
    from land.baselines import mvn_logpdf

    pts = np.array([[0.0, 0.5], [1.0, 0.0], [0.3, -0.2]])
    angles = np.linspace(0.0, np.pi, 20)
    means = np.stack([np.cos(angles), 0.5 * np.sin(angles)], axis=1)
    comp = np.stack(
        [mvn_logpdf(pts, m, 0.07**2 * np.eye(2)) for m in means], axis=1
    )
    want = scipy.special.logsumexp(comp, axis=1) - np.log(20)
    np.testing.assert_allclose(truth.log_pdf(pts), want, rtol=1e-10)


def test_arc_length_matches_elliptic_integral():
    # half-perimeter of an ellipse with semi-axes 1 and 0.5
    want = 2.0 * scipy.special.ellipe(0.75)
    np.testing.assert_allclose(half_ellipsoid_arc_length(), want, rtol=1e-9)
    np.testing.assert_allclose(half_ellipsoid_arc_length(), 2.4221120551, atol=1e-9)


def test_two_moons_geometry_and_balance():
    ds = gen_two_moons(n=200, noise=0.0, seed=5)
    labels = ds.labels
    assert sorted(np.unique(labels).tolist()) == [-1, 1]
    assert (labels == 1).sum() == 100
    top = ds.points[labels == -1]
    bot = ds.points[labels == 1]
    np.testing.assert_allclose(np.linalg.norm(top, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(
        np.linalg.norm(bot - np.array([1.0, 0.5]), axis=1), 1.0, atol=1e-12
    )
    again = gen_two_moons(n=200, noise=0.0, seed=5)
    np.testing.assert_array_equal(ds.points, again.points)


def test_mean_nll_point_mass_at_mode():
    truth = half_ellipsoid_truth(noise=0.05)
    x = np.tile([[0.0, 0.5]], (7, 1))
    want = -float(truth.log_pdf(x[:1])[0])
    np.testing.assert_allclose(mean_nll_under_truth(x, truth), want, rtol=1e-12)


def test_mean_nll_accepts_callable_and_estimates_entropy():
    truth = half_ellipsoid_truth(noise=0.05)
    g = np.random.default_rng(0)
    comp = g.integers(0, 20, size=4000)
    angles = np.linspace(0.0, np.pi, 20)
    means = np.stack([np.cos(angles), 0.5 * np.sin(angles)], axis=1)
    xs = means[comp] + 0.05 * g.standard_normal((4000, 2))
    via_obj = mean_nll_under_truth(xs, truth)
    via_fn = mean_nll_under_truth(xs, truth.log_pdf)
    np.testing.assert_allclose(via_obj, via_fn, rtol=1e-12)
    # samples from the truth itself: mean NLL estimates the entropy
    assert -2.0 < via_obj < 0.5


def test_mixture_num_params_table():
    assert mixture_num_params(1, 2) == 5
    assert mixture_num_params(2, 2) == 11
    assert mixture_num_params(2, 3) == 19
    assert mixture_num_params(4, 2) == 23


def test_aic_bic_values():
    aic, bic = aic_bic(0.0, 0, 10)
    assert aic == 0.0 and bic == 0.0
    aic1, bic1 = aic_bic(-100.0, 5, 300)
    np.testing.assert_allclose(aic1, 2 * 5 + 200.0)
    np.testing.assert_allclose(bic1, 5 * np.log(300) + 200.0)
    # BIC's extra penalty over AIC at nu=5, n=300
    np.testing.assert_allclose(bic1 - aic1, 5 * np.log(300) - 10, rtol=1e-12)
    with pytest.raises(ValueError):
        aic_bic(0.0, 5, 0)


def test_f_measure_perfect_and_degenerate():
    labels = np.array([0, 0, 1, 1, 2, 2])
    assert f_measure(labels, labels) == 1.0
    relabeled = np.array([5, 5, 9, 9, 7, 7])
    assert f_measure(labels, relabeled) == 1.0
    # one cluster swallowing two equal classes: P=1/2, R=1, F=2/3
    labels2 = np.array([0, 0, 1, 1])
    ones = np.zeros(4, dtype=int)
    np.testing.assert_allclose(f_measure(labels2, ones), 2 / 3, rtol=1e-12)


def test_f_measure_penalizes_split_classes():
    labels = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
    split = np.array([0, 0, 0, 2, 2, 1, 1, 1, 1, 1])
    got = f_measure(labels, split)
    assert got < 1.0
    # best match for class 0 is cluster 0: P=1, R=3/5 -> F1=3/4
    np.testing.assert_allclose(got, 0.5 * (0.75 + 1.0), rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_f_measure_invariant_to_cluster_relabeling(seed):
    g = np.random.default_rng(seed)
    labels = g.integers(0, 3, size=30)
    assign = g.integers(0, 4, size=30)
    perm = g.permutation(10)
    np.testing.assert_allclose(
        f_measure(labels, assign), f_measure(labels, perm[assign]), rtol=1e-12
    )


def test_metric_record_shape():
    rec = metric_record("land", 2, 7, "nll", 3.5)
    assert rec == {
        "model": "land",
        "K": 2,
        "seed": 7,
        "metric_name": "nll",
        "value": 3.5,
    }


def test_labeled_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(points=np.zeros((3, 2)), labels=np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        LabeledDataset(points=np.zeros(3))
    ds = LabeledDataset(points=np.zeros((3, 2)))
    assert ds.labels is None and ds.n == 3 and ds.dim == 2
