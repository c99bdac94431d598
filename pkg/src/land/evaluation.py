"""Synthetic generators and experiment metrics.

The half-ellipsoid generator is the main synthetic benchmark: a mixture of
20 isotropic Gaussians whose means sit on a half-ellipse (semi-axes 1 and
0.5, angles evenly spaced over [0, pi]). Its true density is available in
closed form, which enables the mean-NLL-under-truth score: sample the
fitted model, evaluate the known generator density at the samples, average
the negative logs. Lower is better; the score bottoms out near the
generator's differential entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .baselines import GaussianMixture

N_ARC_COMPONENTS = 20
ARC_A = 1.0
ARC_B = 0.5


@dataclass(frozen=True)
class LabeledDataset:
    """Point matrix with optional integer class labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2:
            raise ValueError("points must be (N, D)")
        if self.labels is not None:
            lab = np.asarray(self.labels)
            object.__setattr__(self, "labels", lab)
            if lab.shape != (len(pts),):
                raise ValueError("need one label per row")

    @property
    def n(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]


def _arc_means(dim=2):
    theta = np.linspace(0.0, np.pi, N_ARC_COMPONENTS)
    means = np.zeros((N_ARC_COMPONENTS, dim))
    means[:, 0] = ARC_A * np.cos(theta)
    means[:, 1] = ARC_B * np.sin(theta)
    return means


def half_ellipsoid_truth(noise=0.05, dim=2):
    """The generator distribution itself, as an evaluable Gaussian mixture."""
    if noise <= 0:
        raise ValueError("the truth density needs noise > 0")
    means = _arc_means(dim)
    covs = np.broadcast_to(noise**2 * np.eye(dim),
                           (N_ARC_COMPONENTS, dim, dim)).copy()
    w = np.full(N_ARC_COMPONENTS, 1.0 / N_ARC_COMPONENTS)
    return GaussianMixture(weights=w, means=means, covs=covs)


def half_ellipsoid_arc_length():
    """Length of the half-ellipse the component means sit on."""
    val, _ = quad(
        lambda t: math.hypot(ARC_A * math.sin(t), ARC_B * math.cos(t)), 0.0, np.pi
    )
    return val


def gen_half_ellipsoid(n=300, noise=0.05, seed=0, dim=2):
    """Sample the 20-component arc mixture; labels are component indices.

    Component counts are balanced (n mod 20 spread deterministically), the
    row order is a seeded permutation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    g = np.random.default_rng(seed)
    labels = g.permutation(np.arange(n) % N_ARC_COMPONENTS)
    means = _arc_means(dim)
    points = means[labels] + noise * g.standard_normal((n, dim))
    return LabeledDataset(points=points, labels=labels)


def gen_two_moons(n=300, noise=0.05, seed=0):
    """Two interleaved half-circles in 2D; labels are -1 and +1, balanced."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    g = np.random.default_rng(seed)
    n_top = n // 2
    n_bot = n - n_top
    t_top = g.uniform(0.0, np.pi, n_top)
    t_bot = g.uniform(0.0, np.pi, n_bot)
    top = np.column_stack([np.cos(t_top), np.sin(t_top)])
    bot = np.column_stack([1.0 - np.cos(t_bot), 0.5 - np.sin(t_bot)])
    points = np.vstack([top, bot]) + noise * g.standard_normal((n, 2))
    labels = np.concatenate([np.full(n_top, -1), np.full(n_bot, 1)])
    perm = g.permutation(n)
    return LabeledDataset(points=points[perm], labels=labels[perm])


def mean_nll_under_truth(samples, truth):
    """-(1/n) sum log q(x_i) for model samples x_i under the known density q.

    `truth` is either an object with a log_pdf method or a callable
    returning log densities.
    """
    samples = np.asarray(samples, dtype=float)
    log_q = truth.log_pdf if hasattr(truth, "log_pdf") else truth
    vals = np.asarray(log_q(samples), dtype=float)
    if vals.shape != (len(samples),):
        raise ValueError("truth must return one log density per sample")
    return float(-vals.mean())


def mixture_num_params(k, dim):
    """Free parameters of a K-component location-scale mixture:
    K means, K covariances, K-1 independent weights."""
    if k < 1 or dim < 1:
        raise ValueError("need k >= 1 and dim >= 1")
    return k * (dim + dim * (dim + 1) // 2) + (k - 1)


def aic_bic(log_likelihood, num_params, n):
    """(AIC, BIC) from the total data log-likelihood."""
    if n < 1:
        raise ValueError("n must be >= 1")
    aic = -2.0 * log_likelihood + 2.0 * num_params
    bic = -2.0 * log_likelihood + num_params * math.log(n)
    return float(aic), float(bic)


def f_measure(labels, assignments):
    """Set-matching F: each true class takes its best-F1 cluster, classes
    weighted by size. 1.0 iff the partition reproduces the labels."""
    labels = np.asarray(labels)
    assignments = np.asarray(assignments)
    if labels.shape != assignments.shape or labels.ndim != 1:
        raise ValueError("labels and assignments must be equal-length vectors")
    n = len(labels)
    if n == 0:
        raise ValueError("need at least one point")
    total = 0.0
    for c in np.unique(labels):
        in_class = labels == c
        n_c = int(in_class.sum())
        best = 0.0
        for j in np.unique(assignments):
            in_cluster = assignments == j
            tp = int((in_class & in_cluster).sum())
            if tp == 0:
                continue
            prec = tp / in_cluster.sum()
            rec = tp / n_c
            best = max(best, 2.0 * prec * rec / (prec + rec))
        total += (n_c / n) * best
    return float(total)


def metric_record(model, k, seed, metric_name, value):
    """One JSON-ready evaluation record."""
    return {
        "model": str(model),
        "K": int(k),
        "seed": int(seed),
        "metric_name": str(metric_name),
        "value": float(value),
    }
