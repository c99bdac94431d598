"""Diagonal Riemannian metric learned from data.

The metric at a point x is diagonal with entries

    M_dd(x) = 1 / (sum_n w_n(x) * (x_nd - x_d)^2 + rho),
    w_n(x)  = exp(-||x_n - x||^2 / (2 sigma^2)),

where the x_n are anchor points (typically the training data). Directions
with local data support get large weighted variance, hence small metric
entries and short path lengths; empty regions approach the ceiling 1/rho,
so geodesics prefer to stay near the data.

All evaluation routines are batched: a (B, D) array of query points is one
pair of matrix products against precomputed anchor tables, which is what
makes Monte Carlo integration over thousands of geodesics feasible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist


@dataclass(frozen=True)
class MetricParams:
    """Kernel bandwidth and variance regularizer of the learned metric."""

    sigma: float
    rho: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and > 0, got {self.sigma}")
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be finite and > 0, got {self.rho}")


def _as_batch(x, dim):
    """Coerce a point or batch of points to (B, dim); report if it was 1-d."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"point has dimension {x.shape[0]}, metric expects {dim}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected (B, {dim}) array, got shape {x.shape}")
    return x, False


class LearnedMetric:
    """Kernel-weighted diagonal metric with precomputed anchor products.

    Parameters
    ----------
    anchors : (N, D) array
        Points that carry the metric (the training data).
    params : MetricParams
        Bandwidth sigma and regularizer rho.
    """

    def __init__(self, anchors, params):
        anchors = np.array(anchors, dtype=float)
        if anchors.ndim != 2 or anchors.shape[0] < 1:
            raise ValueError("anchors must be a non-empty (N, D) array")
        if not np.all(np.isfinite(anchors)):
            raise ValueError("anchors must be finite")
        self.anchors = anchors
        self.params = params
        self.dim = anchors.shape[1]
        n, d = anchors.shape
        sq = anchors**2
        self._rowsq = sq.sum(axis=1)
        # one combined anchor table so each metric evaluation is a single
        # GEMM against the kernel weights: [x_nd, x_nd^2, 1, x_nk x_nd^2,
        # x_nk x_nd] with the pair columns flattened as (k, d)
        kd_sq = (anchors[:, :, None] * sq[:, None, :]).reshape(n, d * d)
        kd = (anchors[:, :, None] * anchors[:, None, :]).reshape(n, d * d)
        ones = np.ones((n, 1))
        self._table_lin = np.concatenate([anchors, sq, ones], axis=1)
        self._table_full = np.concatenate([anchors, sq, ones, kd_sq, kd], axis=1)

    def _weights(self, x):
        """Gaussian kernel weights w_n(x) for a (B, D) batch, shape (B, N)."""
        dist2 = self._rowsq[None, :] - 2.0 * x @ self.anchors.T
        dist2 += (x * x).sum(axis=1)[:, None]
        np.maximum(dist2, 0.0, out=dist2)
        dist2 *= -0.5 / self.params.sigma**2
        return np.exp(dist2, out=dist2)

    def _denominators(self, x, w):
        """S_d(x) = sum_n w_n (x_nd - x_d)^2 + rho, plus reusable moments."""
        d = self.dim
        p = w @ self._table_lin
        u = p[:, :d]                  # (B, D) sum_n w_n x_nd
        v2 = p[:, d : 2 * d]          # (B, D) sum_n w_n x_nd^2
        w_sum = p[:, 2 * d]
        s = v2 - 2.0 * x * u + x**2 * w_sum[:, None] + self.params.rho
        return s, w_sum, u, v2

    def tensor(self, x):
        """Diagonal metric entries M_dd(x); (D,) -> (D,) or (B, D) -> (B, D)."""
        xb, single = _as_batch(x, self.dim)
        w = self._weights(xb)
        s, _, _, _ = self._denominators(xb, w)
        m = 1.0 / s
        return m[0] if single else m

    def tensor_and_derivative(self, x):
        """Metric entries and their spatial derivative for a batch.

        Returns (m, dm) with m of shape (B, D) and dm of shape (B, D, D),
        where dm[b, d, k] is the derivative of M_dd with respect to x_k.
        """
        xb, single = _as_batch(x, self.dim)
        b, d = xb.shape
        w = self._weights(xb)
        p = w @ self._table_full
        u = p[:, :d]
        v2 = p[:, d : 2 * d]
        w_sum = p[:, 2 * d]
        s = v2 - 2.0 * xb * u + xb**2 * w_sum[:, None] + self.params.rho

        # E[b, k, d] = sum_n w_n (x_nk - x_k) (x_nd - x_d)^2, assembled from
        # the precomputed anchor products in p
        t_sq = p[:, 2 * d + 1 : 2 * d + 1 + d * d].reshape(b, d, d)
        t_lin = p[:, 2 * d + 1 + d * d :].reshape(b, d, d)
        xc = xb[:, :, None]  # varies along k
        xd = xb[:, None, :]  # varies along d
        e = (
            t_sq
            - 2.0 * xd * t_lin
            + xd**2 * u[:, :, None]
            - xc * v2[:, None, :]
            + 2.0 * xc * xd * u[:, None, :]
            - xc * xd**2 * w_sum[:, None, None]
        )
        ds = e.transpose(0, 2, 1) / self.params.sigma**2
        diag = np.arange(d)
        ds[:, diag, diag] -= 2.0 * (u - xb * w_sum[:, None])
        m = 1.0 / s
        dm = -(m**2)[:, :, None] * ds
        if single:
            return m[0], dm[0]
        return m, dm

    def log_measure(self, x):
        """log sqrt(det M(x)) = -0.5 * sum_d log S_d(x)."""
        xb, single = _as_batch(x, self.dim)
        w = self._weights(xb)
        s, _, _, _ = self._denominators(xb, w)
        lm = -0.5 * np.log(s).sum(axis=1)
        return lm[0] if single else lm

    def measure(self, x):
        """Volume element sqrt(det M(x))."""
        return np.exp(self.log_measure(x))


class ConstantMetric:
    """Position-independent diagonal metric; the flat-geometry test double.

    With ``ConstantMetric.identity(d)`` every geodesic quantity reduces to
    its Euclidean counterpart, which anchors the reduction tests.
    """

    def __init__(self, diag):
        diag = np.array(diag, dtype=float)
        if diag.ndim != 1 or np.any(diag <= 0) or not np.all(np.isfinite(diag)):
            raise ValueError("diag must be a 1-d array of positive finite entries")
        self.diag = diag
        self.dim = diag.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(np.ones(dim))

    def tensor(self, x):
        xb, single = _as_batch(x, self.dim)
        m = np.broadcast_to(self.diag, xb.shape).copy()
        return m[0] if single else m

    def tensor_and_derivative(self, x):
        xb, single = _as_batch(x, self.dim)
        m = np.broadcast_to(self.diag, xb.shape).copy()
        dm = np.zeros((xb.shape[0], self.dim, self.dim))
        if single:
            return m[0], dm[0]
        return m, dm

    def geodesic_acceleration(self, x, v):
        return np.zeros_like(np.asarray(v, dtype=float))

    def log_measure(self, x):
        xb, single = _as_batch(x, self.dim)
        lm = np.full(xb.shape[0], 0.5 * np.log(self.diag).sum())
        return lm[0] if single else lm

    def measure(self, x):
        return np.exp(self.log_measure(x))


def median_pairwise_sq(data):
    """Squared median pairwise Euclidean distance of a dataset."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 2:
        raise ValueError("need at least two points for pairwise distances")
    return float(np.median(pdist(data)) ** 2)


def default_rho(data):
    """Documented convention: rho = 1e-2 * (median pairwise distance)^2."""
    return 1e-2 * median_pairwise_sq(data)


def learn_metric(data, sigma, rho=None):
    """Build a LearnedMetric anchored at ``data``.

    rho=None applies the default_rho convention. sigma sets how far each
    anchor's influence reaches; it is the main smoothness knob.
    """
    data = np.asarray(data, dtype=float)
    if rho is None:
        rho = default_rho(data)
    return LearnedMetric(data, MetricParams(sigma=float(sigma), rho=float(rho)))


def metric_tensor(m, x):
    """Diagonal entries of the metric at x (point or batch)."""
    return m.tensor(x)


def metric_derivative(m, x):
    """d M_dd / d x_k at x; rows index d, columns index k."""
    _, dm = m.tensor_and_derivative(x)
    return dm


def measure_density(m, x):
    """Riemannian volume element sqrt(det M(x)); low values mean dense data."""
    return m.measure(x)
