"""Locally adaptive normal distribution: density, fitting, sampling.

The model is the maximum-entropy distribution on the learned manifold with
density (with respect to the Riemannian measure)

    p(x | mu, Sigma) = exp(-1/2 <Log_mu(x), Sigma^{-1} Log_mu(x)>) / C(mu, Sigma),

where C is estimated by Monte Carlo on the tangent space at mu:

    C ~= (Z / S) * sum_s m(mu, v_s),   v_s ~ N(0, Sigma),
    m(mu, v) = sqrt(det M(Exp_mu(v))),  Z = sqrt((2 pi)^D det Sigma).

Fitting runs block-coordinate descent: a steepest-descent step in mu (the
gradient preconditioned by Sigma, its normalizing denominator absorbed into
the stepsize), then a gradient step in the precision factor A with
Sigma^{-1} = A^T A. The normalization constant is re-estimated before each
of the two steps, and the same samples serve the constant and the gradient
(common random numbers). Both gradients estimate the normalization term
through the Gaussian score, so they pair with the per-sample values rather
than derivatives of the volume measure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .geodesic import DEFAULT_SOLVER, damped_step, exp_map_batch, log_map, log_map_batch
from .rng import McStream, as_stream, sample_stream, standard_normals

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """Model estimation failed (divergence, rank loss, no usable points)."""


@dataclass(frozen=True)
class LandParams:
    """Mean, precision factor, and cached normalization of one model.

    a is a full-rank matrix with Sigma^{-1} = a^T a; cov caches Sigma.
    norm_const is the Monte Carlo estimate of C(mu, Sigma) and
    norm_const_samples the sample count used for it (0 = not estimated).
    """

    mu: np.ndarray
    a: np.ndarray
    cov: np.ndarray
    norm_const: float | None = None
    norm_const_samples: int = 0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        a = np.asarray(self.a, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "cov", cov)
        d = mu.shape[0]
        if mu.ndim != 1 or a.shape != (d, d) or cov.shape != (d, d):
            raise ValueError("inconsistent parameter shapes")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(a)) and np.all(np.isfinite(cov))):
            raise ValueError("parameters must be finite")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("cov must be symmetric positive definite") from exc
        if np.max(np.abs(cov @ (a.T @ a) - np.eye(d))) > 1e-8:
            raise ValueError("cov is not the inverse of a^T a (tolerance 1e-8)")
        if self.norm_const is not None and not self.norm_const > 0:
            raise ValueError("norm_const must be > 0")

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def precision(self):
        return self.a.T @ self.a

    @classmethod
    def from_moments(cls, mu, cov, norm_const=None, norm_const_samples=0):
        """Build params from (mean, covariance); A is the upper Cholesky
        factor of the precision."""
        cov = np.asarray(cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        c, lower = cho_factor(cov)
        prec = cho_solve((c, lower), np.eye(cov.shape[0]))
        prec = 0.5 * (prec + prec.T)
        a = np.linalg.cholesky(prec).T
        return cls(mu=np.asarray(mu, dtype=float), a=a, cov=cov,
                   norm_const=norm_const, norm_const_samples=norm_const_samples)

    @classmethod
    def from_factor(cls, mu, a, norm_const=None, norm_const_samples=0):
        """Build params from (mean, precision factor A)."""
        a = np.asarray(a, dtype=float)
        prec = a.T @ a
        c, lower = cho_factor(0.5 * (prec + prec.T))
        cov = cho_solve((c, lower), np.eye(prec.shape[0]))
        return cls(mu=np.asarray(mu, dtype=float), a=a, cov=0.5 * (cov + cov.T),
                   norm_const=norm_const, norm_const_samples=norm_const_samples)

    def with_norm_const(self, c, s):
        return replace(self, norm_const=float(c), norm_const_samples=int(s))

    def with_moments(self, mu=None, a=None):
        """Replace mu and/or a, recomputing the cached covariance."""
        return LandParams.from_factor(
            self.mu if mu is None else mu, self.a if a is None else a
        )


@dataclass(frozen=True)
class FitConfig:
    """Stepsizes, sample count, and stopping rule of the fit loop."""

    step_mu: float = 0.1
    step_a: float = 0.1
    mc_samples: int = 3000
    tol: float = 1e-6
    max_iter: int = 100
    init_strategy: str = "least_squares"
    rng_seed: int = 0

    def __post_init__(self):
        if self.step_mu <= 0 or self.step_a <= 0:
            raise ValueError("stepsizes must be > 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.init_strategy not in ("random", "least_squares", "gmm"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


@dataclass(frozen=True)
class McSamples:
    """Tangent draws and volume-measure values behind one C estimate."""

    tangents: np.ndarray    # (S, D), v_s ~ N(0, Sigma)
    log_values: np.ndarray  # (S,), log m(mu, v_s); non-finite where diverged
    ok: np.ndarray          # (S,) usable-sample mask
    log_z: float            # log Z = log sqrt((2 pi)^D det Sigma)

    @property
    def n_used(self):
        return int(self.ok.sum())

    @property
    def log_c_hat(self):
        return float(self.log_z + logsumexp(self.log_values[self.ok]) - math.log(self.n_used))

    @property
    def c_hat(self):
        return math.exp(self.log_c_hat)

    @property
    def values(self):
        out = np.full(len(self.log_values), np.nan)
        out[self.ok] = np.exp(self.log_values[self.ok])
        return out

    @property
    def weights(self):
        """Self-normalized weights m_s / sum m_s (zero at failed samples)."""
        w = np.zeros(len(self.log_values))
        lv = self.log_values[self.ok]
        w[self.ok] = np.exp(lv - logsumexp(lv))
        return w

    def mean_v(self):
        return self.weights @ self.tangents

    def mean_vv(self):
        w = self.weights
        return self.tangents.T @ (w[:, None] * self.tangents)


def _chol_and_logz(cov):
    cov = np.asarray(cov, dtype=float)
    try:
        lo = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Sigma must be symmetric positive definite") from exc
    d = cov.shape[0]
    log_z = 0.5 * d * math.log(2.0 * math.pi) + np.sum(np.log(np.diag(lo)))
    return lo, float(log_z)


def exp_map_chunked(metric, mu, tangents, n_steps, chunk=8192):
    """exp_map_batch in memory-bounded chunks (identical output)."""
    if len(tangents) <= chunk:
        return exp_map_batch(metric, mu, tangents, n_steps)[0]
    ends = np.empty_like(tangents)
    for lo_i in range(0, len(tangents), chunk):
        sl = slice(lo_i, lo_i + chunk)
        ends[sl] = exp_map_batch(metric, mu, tangents[sl], n_steps)[0]
    return ends


def mc_from_tangents(metric, mu, cov, tangents, solver=None):
    """Build the C estimate from given tangent draws (frozen-sample path)."""
    solver = solver or DEFAULT_SOLVER
    _, log_z = _chol_and_logz(cov)
    ends = exp_map_chunked(metric, mu, tangents, solver.fixed_steps)
    finite = np.isfinite(ends).all(axis=1)
    log_values = np.full(len(ends), np.nan)
    log_values[finite] = metric.log_measure(ends[finite])
    ok = np.isfinite(log_values)
    if not ok.any():
        raise FitError("all Monte Carlo geodesics diverged")
    if not ok.all():
        log.info("normalization constant: %d/%d samples diverged and were skipped",
                 (~ok).sum(), len(ok))
    return McSamples(tangents=tangents, log_values=log_values, ok=ok, log_z=log_z)


def normalization_constant(metric, mu, cov, n_samples, rng, solver=None):
    """Monte Carlo estimate of C(mu, Sigma); returns (c_hat, samples)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    stream = as_stream(rng)
    mu = np.asarray(mu, dtype=float)
    lo, _ = _chol_and_logz(cov)
    z = standard_normals(stream.seed, stream.event, n_samples, mu.shape[0])
    tangents = z @ lo.T
    mc = mc_from_tangents(metric, mu, cov, tangents, solver)
    return mc.c_hat, mc


def _quad_forms(logs_v, prec):
    return np.einsum("nd,dk,nk->n", logs_v, prec, logs_v)


def log_density(params, metric, x, solver=None):
    """Log density at one point, with respect to the Riemannian measure."""
    if params.norm_const is None:
        raise ValueError("params.norm_const is not cached; estimate it first")
    v = log_map(metric, params.mu, np.asarray(x, dtype=float), solver)
    q = float(v @ params.precision @ v)
    return -0.5 * q - math.log(params.norm_const)


def log_density_batch(params, metric, x, solver=None, v0=None):
    """Batched log density; returns (values, converged mask).

    Rows whose logarithm map fails get value nan and mask False.
    """
    if params.norm_const is None:
        raise ValueError("params.norm_const is not cached; estimate it first")
    x = np.asarray(x, dtype=float)
    res = log_map_batch(metric, params.mu, x, solver, v0=v0)
    vals = np.full(len(x), np.nan)
    okv = res.velocity[res.converged]
    vals[res.converged] = (
        -0.5 * _quad_forms(okv, params.precision) - math.log(params.norm_const)
    )
    return vals, res.converged


def nll_objective(data, params, metric, solver=None, logs=None):
    """Mean negative log-likelihood phi, using the cached norm_const."""
    if params.norm_const is None:
        raise ValueError("params.norm_const is not cached; estimate it first")
    data = np.asarray(data, dtype=float)
    if logs is None:
        logs = log_map_batch(metric, params.mu, data, solver)
    n_ok = int(logs.converged.sum())
    if n_ok < 0.5 * len(data):
        raise FitError(
            f"more than half of the log maps failed ({len(data) - n_ok}/{len(data)})"
        )
    if n_ok < len(data):
        log.info("nll: skipping %d/%d points with failed log maps",
                 len(data) - n_ok, len(data))
    q = _quad_forms(logs.velocity[logs.converged], params.precision)
    return float(0.5 * q.mean() + math.log(params.norm_const))


def descent_direction_mu(data, params, metric, mc, solver=None, logs=None):
    """Steepest-descent direction for mu (Sigma-preconditioned gradient).

    d_mu = mean_n Log_mu(x_n) - sum_s w_s v_s with w_s the self-normalized
    measure weights; the update is mu <- Exp_mu(step * d_mu).
    """
    data = np.asarray(data, dtype=float)
    if logs is None:
        logs = log_map_batch(metric, params.mu, data, solver)
    if not logs.converged.any():
        raise FitError("no usable log maps for the mu update")
    return logs.velocity[logs.converged].mean(axis=0) - mc.mean_v()


def grad_mu(data, params, metric, mc, solver=None, logs=None):
    """Euclidean gradient of phi in mu (un-preconditioned)."""
    d = descent_direction_mu(data, params, metric, mc, solver=solver, logs=logs)
    return -params.precision @ d


def grad_a(data, params, metric, mc, solver=None, logs=None):
    """Gradient of phi in the precision factor A."""
    data = np.asarray(data, dtype=float)
    if logs is None:
        logs = log_map_batch(metric, params.mu, data, solver)
    if not logs.converged.any():
        raise FitError("no usable log maps for the A update")
    v = logs.velocity[logs.converged]
    second_moment = v.T @ v / len(v)
    return params.a @ (second_moment - mc.mean_vv())


def _tangent_covariance(logs, fallback_scale):
    """Empirical covariance of converged log vectors, floored to be SPD."""
    v = logs.velocity[logs.converged]
    d = v.shape[1]
    if len(v) >= 2:
        cov = v.T @ v / (len(v) - 1)
    else:
        cov = np.zeros((d, d))
    cov = 0.5 * (cov + cov.T)
    floor = 1e-6 * max(np.trace(cov) / d, fallback_scale**2)
    if np.trace(cov) <= 0:
        cov = (fallback_scale**2) * np.eye(d)
    try:
        np.linalg.cholesky(cov + floor * np.eye(d))
    except np.linalg.LinAlgError:
        cov = cov + (np.trace(cov) / d) * np.eye(d)
    return cov + floor * np.eye(d)


def _initialize(data, metric, cfg, solver):
    """Appendix-free restatement: pick mu0 by strategy, Sigma0 as the
    tangent empirical covariance at mu0."""
    from . import baselines  # deferred: baselines depends on geodesic only

    n = len(data)
    scale = float(np.sqrt(np.mean(np.sum((data - data.mean(0)) ** 2, axis=1))))
    if cfg.init_strategy == "random":
        g = sample_stream(cfg.rng_seed, _INIT_EVENT, 0)
        mu0 = data[int(g.integers(n))]
    elif cfg.init_strategy == "least_squares":
        mu0 = baselines.intrinsic_mean(data, metric, solver=solver)
    else:  # gmm: Euclidean fit; K=1 reduces to the sample mean
        mu0 = data.mean(axis=0)
    logs = log_map_batch(metric, mu0, data, solver)
    if not logs.converged.any():
        raise FitError("initialization failed: no log maps converged at mu0")
    cov0 = _tangent_covariance(logs, scale if scale > 0 else 1.0)
    return np.asarray(mu0, dtype=float), cov0, logs


_INIT_EVENT = 2**40  # keeps initialization draws clear of per-iteration events


def fit_mle(data, metric, cfg=None, solver=None):
    """Maximum-likelihood fit by block-coordinate descent.

    Per iteration: estimate C(mu, Sigma); take a steepest-descent step in
    mu; re-estimate C(mu', Sigma); take a gradient step in A. Stepsizes
    adapt by x0.75 on objective increase and x1.1 on decrease (the A
    stepsize with one iteration of lag, when its fresh C arrives). Stops
    when the squared change of phi falls below cfg.tol; returns the
    best-phi iterate visited.
    """
    cfg = cfg or FitConfig()
    solver = solver or DEFAULT_SOLVER
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or len(data) < 2:
        raise ValueError("data must be (N, D) with N >= 2")
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    if data.shape[1] != metric.dim:
        raise ValueError("data dimension does not match the metric")

    mu, cov, logs = _initialize(data, metric, cfg, solver)
    params = LandParams.from_moments(mu, cov)
    step_mu, step_a = cfg.step_mu, cfg.step_a
    trace = []
    best = None
    phi_half_prev = None
    converged = False
    n_skipped = 0
    s = cfg.mc_samples

    for t in range(cfg.max_iter + 1):
        c1, mc1 = normalization_constant(
            metric, params.mu, params.cov, s, McStream(cfg.rng_seed, 2 * t), solver
        )
        params = params.with_norm_const(c1, s)
        phi = nll_objective(data, params, metric, solver=solver, logs=logs)
        trace.append(phi)
        if phi_half_prev is not None:
            step_a *= 1.1 if phi < phi_half_prev else 0.75
        if best is None or phi < best[0]:
            best = (phi, params)
        if t >= 1 and (trace[-1] - trace[-2]) ** 2 <= cfg.tol:
            converged = True
            break
        if t == cfg.max_iter:
            break

        n_skipped += logs.failure_count
        d_mu = descent_direction_mu(data, params, metric, mc1, logs=logs)
        mu_new, step_mu = damped_step(metric, params.mu, step_mu, d_mu, solver.fixed_steps)
        warm = logs.velocity + (params.mu - mu_new)[None, :]
        logs = log_map_batch(metric, mu_new, data, solver, v0=warm)
        if not logs.converged.any():
            raise FitError("all log maps failed after a mu update")
        params_half = params.with_moments(mu=mu_new)
        c2, mc2 = normalization_constant(
            metric, mu_new, params_half.cov, s, McStream(cfg.rng_seed, 2 * t + 1), solver
        )
        params_half = params_half.with_norm_const(c2, s)
        phi_half = nll_objective(data, params_half, metric, logs=logs)
        step_mu *= 1.1 if phi_half < phi else 0.75
        phi_half_prev = phi_half

        g_a = grad_a(data, params_half, metric, mc2, logs=logs)
        a_new = params_half.a - step_a * g_a
        if not np.all(np.isfinite(a_new)) or abs(np.linalg.det(a_new)) < 1e-12:
            raise FitError("precision factor lost rank during the A update")
        params = params_half.with_moments(a=a_new)

    phi_best, params_best = best
    log.info("fit_mle: %d iterations, phi %.6f, converged=%s", len(trace) - 1,
             phi_best, converged)
    return FitResult(
        params=params_best,
        trace=np.array(trace),
        converged=converged,
        n_iter=len(trace) - 1,
        n_skipped_logs=n_skipped,
    )


@dataclass(frozen=True)
class FitResult:
    params: LandParams
    trace: np.ndarray
    converged: bool
    n_iter: int
    n_skipped_logs: int = 0


def sample(params, metric, n, rng, solver=None, oversample=10):
    """Draw n points by self-normalized importance resampling.

    Proposals v ~ N(0, Sigma) are weighted by the volume measure at their
    exponential-map images and resampled with replacement; documented as
    approximate. Raises FitError when the effective sample size of the
    weights is below n (increase `oversample`).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if oversample < 10:
        raise ValueError("oversample must be >= 10")
    solver = solver or DEFAULT_SOLVER
    stream = as_stream(rng)
    lo, _ = _chol_and_logz(params.cov)
    n_prop = int(n * oversample)
    z = standard_normals(stream.seed, stream.event, n_prop, params.dim)
    tangents = z @ lo.T
    ends = exp_map_chunked(metric, params.mu, tangents, solver.fixed_steps)
    finite = np.isfinite(ends).all(axis=1)
    logw = np.full(n_prop, -np.inf)
    logw[finite] = metric.log_measure(ends[finite])
    w = np.exp(logw - logw.max())
    total = w.sum()
    ess = total**2 / np.sum(w**2)
    if ess < n:
        raise FitError(
            f"importance resampling degenerate: effective sample size "
            f"{ess:.0f} < {n}; increase oversample"
        )
    g = sample_stream(stream.seed, stream.event + 1, 0)
    idx = g.choice(n_prop, size=n, replace=True, p=w / total)
    return ends[idx]


def model_to_dict(params, sigma=None, rho=None, seed=None, anchor_hash=None):
    """JSON-ready dict for one fitted model."""
    return {
        "mu": params.mu.tolist(),
        "A": params.a.tolist(),
        "sigma": sigma,
        "rho": rho,
        "norm_const": params.norm_const,
        "S": params.norm_const_samples,
        "seed": seed,
        "metric_anchor_file_hash": anchor_hash,
    }


def model_from_dict(d):
    """Rebuild LandParams from its JSON dict; returns (params, meta)."""
    params = LandParams.from_factor(np.asarray(d["mu"], dtype=float),
                                    np.asarray(d["A"], dtype=float))
    if d.get("norm_const") is not None:
        params = params.with_norm_const(d["norm_const"], d.get("S", 0))
    meta = {k: d.get(k) for k in ("sigma", "rho", "seed", "metric_anchor_file_hash")}
    return params, meta
