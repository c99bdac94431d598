"""Shared fixtures: small cached datasets and metrics used across modules."""

import functools

import numpy as np
import pytest

from land.evaluation import gen_half_ellipsoid, half_ellipsoid_arc_length
from land.geodesic import GeodesicSolverConfig
from land.metric import ConstantMetric, learn_metric


@functools.lru_cache(maxsize=8)
def he_points(seed=0, n=60, noise=0.05):
    return gen_half_ellipsoid(n=n, noise=noise, seed=seed).points


@functools.lru_cache(maxsize=8)
def he_metric(seed=0, n=60, noise=0.05):
    # sigma follows the arc-length fraction used throughout the experiments
    return learn_metric(he_points(seed, n, noise), sigma=0.1 * half_ellipsoid_arc_length())


@pytest.fixture(scope="session")
def arc_points():
    return he_points()


@pytest.fixture(scope="session")
def arc_metric():
    return he_metric()


@pytest.fixture(scope="session")
def fast_solver():
    return GeodesicSolverConfig(integrator="fixed", fixed_steps=16, bvp_tol=1e-5, bvp_max_iter=40)


@pytest.fixture
def identity2():
    return ConstantMetric.identity(2)


def random_spd(g, d, scale=1.0):
    q, _ = np.linalg.qr(g.standard_normal((d, d)))
    eig = scale * g.uniform(0.3, 2.0, d)
    return (q * eig) @ q.T
