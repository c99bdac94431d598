"""Comparator estimators: intrinsic least squares, Riemannian K-means,
and a Euclidean Gaussian mixture model.

The intrinsic estimators are not maximum likelihood: the mean minimizes the
sum of squared geodesic distances and the covariance is the empirical
second moment of the logarithm maps at that mean. They serve as the "LS"
comparator. The GMM is the standard Euclidean EM baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .geodesic import DEFAULT_SOLVER, damped_step, log_map_batch, tangent_norm
from .parallel import parallel_map
from .rng import as_stream, sample_stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeanConfig:
    """Gradient-descent settings for the intrinsic mean."""

    step: float = 1.0
    tol: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if self.step <= 0 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("step and tol must be > 0, max_iter >= 1")


@dataclass(frozen=True)
class IntrinsicEstimate:
    mean: np.ndarray
    covariance: np.ndarray
    iterations: int


def intrinsic_mean(data, metric, cfg=None, solver=None, init=None):
    """Variance-minimizing mean: mu <- Exp_mu(step * mean_n Log_mu(x_n))."""
    cfg = cfg or MeanConfig()
    solver = solver or DEFAULT_SOLVER
    data = np.asarray(data, dtype=float)
    if len(data) == 1:
        return data[0].copy()
    mu = np.asarray(init, dtype=float) if init is not None else data.mean(axis=0)
    warm = data - mu
    step = cfg.step
    for _ in range(cfg.max_iter):
        logs = log_map_batch(metric, mu, data, solver, v0=warm)
        if not logs.converged.any():
            raise RuntimeError("intrinsic mean: all log maps failed")
        vbar = logs.velocity[logs.converged].mean(axis=0)
        if np.linalg.norm(vbar) <= cfg.tol:
            break
        mu_new, step = damped_step(metric, mu, step, vbar, solver.fixed_steps)
        warm = logs.velocity + (mu - mu_new)[None, :]
        mu = mu_new
    return mu


def intrinsic_covariance(data, metric, mean, solver=None):
    """Tangent empirical covariance (1/(N-1)) sum_n Log Log^T at `mean`."""
    solver = solver or DEFAULT_SOLVER
    data = np.asarray(data, dtype=float)
    logs = log_map_batch(metric, np.asarray(mean, dtype=float), data, solver)
    v = logs.velocity[logs.converged]
    if len(v) < 2:
        raise ValueError("need at least two points with converged log maps")
    if logs.failure_count:
        log.info("intrinsic covariance: %d/%d log maps failed, points skipped",
                 logs.failure_count, len(data))
    return v.T @ v / (len(v) - 1)


def ls_estimate(data, metric, cfg=None, solver=None):
    """Intrinsic mean and covariance in one call."""
    cfg = cfg or MeanConfig()
    mean = intrinsic_mean(data, metric, cfg, solver)
    cov = intrinsic_covariance(data, metric, mean, solver)
    return IntrinsicEstimate(mean=mean, covariance=cov, iterations=cfg.max_iter)


@dataclass(frozen=True)
class KMeansConfig:
    n_restarts: int = 5
    max_iter: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n_restarts < 1 or self.max_iter < 1:
            raise ValueError("n_restarts and max_iter must be >= 1")


def _center_distances(data, centers, metric, solver, warm):
    """Squared geodesic distances point-to-center; inf where the BVP fails."""

    def one(j):
        logs = log_map_batch(metric, centers[j], data, solver, v0=warm[j])
        d2 = tangent_norm(metric, centers[j], logs.velocity) ** 2
        d2 = np.where(logs.converged, d2, np.inf)
        return d2, logs.velocity

    results = parallel_map(one, range(len(centers)))
    dist2 = np.stack([r[0] for r in results], axis=1)
    new_warm = [r[1] for r in results]
    return dist2, new_warm


def riemannian_kmeans(data, metric, k, cfg=None, solver=None):
    """Lloyd iterations with geodesic assignment and intrinsic-mean centers.

    Returns (centers (K, D), assignments (N,)). Ties break toward the
    lowest cluster index; restarts keep the lowest within-cluster cost.
    """
    cfg = cfg or KMeansConfig()
    solver = solver or DEFAULT_SOLVER
    data = np.asarray(data, dtype=float)
    n = len(data)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={n}")
    if k == n:
        return data.copy(), np.arange(n)
    if k == 1:
        mu = intrinsic_mean(data, metric, solver=solver)
        return mu[None, :], np.zeros(n, dtype=int)

    mean_cfg = MeanConfig(max_iter=15)
    best = None
    for restart in range(cfg.n_restarts):
        g = np.random.default_rng([cfg.seed, restart])
        centers = data[g.choice(n, size=k, replace=False)].copy()
        warm = [None] * k
        assign = None
        for _ in range(cfg.max_iter):
            dist2, warm = _center_distances(data, centers, metric, solver, warm)
            unreachable = np.isinf(dist2).all(axis=1)
            if unreachable.any():
                # no geodesic found to any center: fall back to Euclidean
                eu = ((data[unreachable, None, :] - centers[None, :, :]) ** 2).sum(-1)
                dist2[unreachable] = eu
            new_assign = dist2.argmin(axis=1)
            for j in range(k):
                if not (new_assign == j).any():
                    new_assign[np.argmax(dist2.min(axis=1))] = j
            if assign is not None and np.array_equal(new_assign, assign):
                assign = new_assign
                break
            assign = new_assign
            for j in range(k):
                members = data[assign == j]
                centers[j] = intrinsic_mean(members, metric, mean_cfg, solver,
                                            init=centers[j])
                warm[j] = None
        cost = float(np.take_along_axis(dist2, assign[:, None], axis=1).sum())
        if best is None or cost < best[0]:
            best = (cost, centers.copy(), assign.copy())
    _, centers, assign = best
    return centers, assign


def mvn_logpdf(x, mean, cov):
    """Multivariate normal log density via Cholesky; x is (N, D) or (D,)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    lo = np.linalg.cholesky(cov)
    y = solve_triangular(lo, (x - mean).T, lower=True)
    return (
        -0.5 * (d * np.log(2.0 * np.pi) + (y**2).sum(axis=0))
        - np.log(np.diag(lo)).sum()
    )


@dataclass
class GaussianMixture:
    """Euclidean GMM with full covariances."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    log_lik: float = np.nan
    converged: bool = False
    n_iter: int = 0

    @property
    def k(self):
        return len(self.weights)

    def _component_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        out = np.empty((n, self.k))
        for j in range(self.k):
            out[:, j] = mvn_logpdf(x, self.means[j], self.covs[j])
        return out

    def log_pdf(self, x):
        lp = self._component_logpdf(np.atleast_2d(x)) + np.log(self.weights)[None, :]
        return logsumexp(lp, axis=1)

    def responsibilities(self, x):
        lp = self._component_logpdf(np.atleast_2d(x)) + np.log(self.weights)[None, :]
        r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        return r / r.sum(axis=1, keepdims=True)

    def predict(self, x):
        return self.responsibilities(x).argmax(axis=1)

    def sample(self, n, rng):
        stream = as_stream(rng)
        g = sample_stream(stream.seed, stream.event, 0)
        counts = g.multinomial(n, self.weights)
        parts = []
        for j, c in enumerate(counts):
            if c == 0:
                continue
            z = g.standard_normal((c, self.means.shape[1]))
            parts.append(self.means[j] + z @ np.linalg.cholesky(self.covs[j]).T)
        return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class GmmConfig:
    max_iter: int = 200
    tol: float = 1e-8
    seed: int = 0
    n_init: int = 5
    cov_floor: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1 or self.n_init < 1:
            raise ValueError("max_iter and n_init must be >= 1")
        if self.tol <= 0 or self.cov_floor <= 0:
            raise ValueError("tol and cov_floor must be > 0")


def _kmeanspp(data, k, g):
    """Classic D^2-weighted seeding."""
    n = len(data)
    centers = [data[int(g.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            ((data[:, None, :] - np.array(centers)[None, :, :]) ** 2).sum(-1), axis=1
        )
        total = d2.sum()
        if total <= 0:
            centers.append(data[int(g.integers(n))])
            continue
        centers.append(data[int(g.choice(n, p=d2 / total))])
    return np.array(centers)


def _floor_cov(cov, floor_rel, data_scale):
    d = cov.shape[0]
    tr = np.trace(cov)
    floor = floor_rel * (tr / d if tr > 0 else data_scale**2)
    if floor <= 0:
        floor = 1e-12
    return cov + floor * np.eye(d)


def gmm_fit(data, k, cfg=None):
    """Standard EM with log-space responsibilities and a covariance floor."""
    cfg = cfg or GmmConfig()
    data = np.asarray(data, dtype=float)
    n, d = data.shape
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={n}")
    centered = data - data.mean(axis=0)
    data_scale = float(np.sqrt(np.mean(np.sum(centered**2, axis=1)))) or 1.0

    best = None
    for restart in range(cfg.n_init):
        g = np.random.default_rng([cfg.seed, restart])
        centers = _kmeanspp(data, k, g)
        assign = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(-1).argmin(1)
        weights = np.full(k, 1.0 / k)
        means = np.empty((k, d))
        covs = np.empty((k, d, d))
        for j in range(k):
            members = data[assign == j]
            if len(members) == 0:
                members = data
            means[j] = members.mean(axis=0)
            diff = members - means[j]
            covs[j] = _floor_cov(diff.T @ diff / len(members), cfg.cov_floor, data_scale)
            weights[j] = max(len(members), 1) / n
        weights /= weights.sum()

        model = GaussianMixture(weights, means, covs)
        prev_ll = -np.inf
        converged = False
        it = 0
        for it in range(1, cfg.max_iter + 1):
            lp = model._component_logpdf(data) + np.log(model.weights)[None, :]
            norm = logsumexp(lp, axis=1)
            mean_ll = float(norm.mean())
            r = np.exp(lp - norm[:, None])
            nk = r.sum(axis=0)
            for j in range(k):
                if nk[j] < 1e-10:
                    # dead component: re-seed at the worst-explained point
                    worst = int(np.argmin(norm))
                    r[:, j] = 0.0
                    r[worst, j] = 1.0
                    nk = r.sum(axis=0)
            model.weights = nk / nk.sum()
            model.means = (r.T @ data) / nk[:, None]
            for j in range(k):
                diff = data - model.means[j]
                cov = (r[:, j][:, None] * diff).T @ diff / nk[j]
                model.covs[j] = _floor_cov(cov, cfg.cov_floor, data_scale)
            if abs(mean_ll - prev_ll) < cfg.tol:
                converged = True
                break
            prev_ll = mean_ll
        final_ll = float(logsumexp(
            model._component_logpdf(data) + np.log(model.weights)[None, :], axis=1
        ).mean())
        model.log_lik = final_ll
        model.converged = converged
        model.n_iter = it
        if best is None or final_ll > best.log_lik:
            best = model
    return best


@dataclass(frozen=True)
class LsMixture:
    """K-means centers with per-cluster intrinsic covariances and weights."""

    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray
    assignments: np.ndarray


def ls_mixture(data, metric, k, cfg=None, solver=None):
    """The least-squares comparator for K >= 1 components."""
    data = np.asarray(data, dtype=float)
    n, d = data.shape
    if k == 1:
        est = ls_estimate(data, metric, solver=solver)
        return LsMixture(
            means=est.mean[None, :],
            covs=est.covariance[None, :, :],
            weights=np.array([1.0]),
            assignments=np.zeros(n, dtype=int),
        )
    centers, assign = riemannian_kmeans(data, metric, k, cfg, solver)
    covs = np.empty((k, d, d))
    scale = float(np.sqrt(np.mean(np.sum((data - data.mean(0)) ** 2, axis=1))))
    for j in range(k):
        members = data[assign == j]
        try:
            covs[j] = intrinsic_covariance(members, metric, centers[j], solver)
        except (ValueError, np.linalg.LinAlgError):
            covs[j] = (scale**2) * np.eye(d)
        covs[j] = _floor_cov(covs[j], 1e-6, scale)
    weights = np.bincount(assign, minlength=k).astype(float) / n
    return LsMixture(means=centers, covs=covs, weights=weights, assignments=assign)
