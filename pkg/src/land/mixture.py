"""Mixtures of locally adaptive normal distributions, fit by EM.

The E-step computes responsibilities from the component densities (common
volume factors of the shared metric cancel, so the Riemannian densities are
used directly). The M-step takes one steepest-descent step in each mu_k
and one gradient step in each A_k, with the component's normalization
constant re-estimated before each of the two steps.

With K=1 the loop reproduces fit_mle exactly, sample for sample: Monte
Carlo event numbers coincide, the internal updates divide the
responsibility-weighted directions by R_k (so K=1 weights are the 1/N of
the single-model objective), and the traced objective is per point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .geodesic import DEFAULT_SOLVER, damped_step, log_map_batch
from .model import (
    FitConfig,
    FitError,
    LandParams,
    normalization_constant,
    sample as sample_single,
)
from .parallel import parallel_map
from .rng import McStream, as_stream, sample_stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LandMixture:
    """K components with simplex weights."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)
        if len(comps) < 1 or len(w) != len(comps):
            raise ValueError("need K >= 1 components with matching weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex (tolerance 1e-12)")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError("components must share one dimension")

    @property
    def k(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component probabilities per point; rows sum to one."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        object.__setattr__(self, "r", r)
        if r.ndim != 2:
            raise ValueError("responsibilities must be an (N, K) matrix")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("responsibilities must lie in [0, 1]")
        if np.max(np.abs(r.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("responsibility rows must sum to 1 (tolerance 1e-12)")

    @property
    def assignments(self):
        return self.r.argmax(axis=1)


def component_quadratics(data, mix, metric, solver=None, logs_list=None, warm=None):
    """Per-component quadratic forms q[n, k]; nan rows mark failed log maps."""
    data = np.asarray(data, dtype=float)
    solver = solver or DEFAULT_SOLVER

    def solve(j):
        if logs_list is not None and logs_list[j] is not None:
            return logs_list[j]
        v0 = None if warm is None or warm[j] is None else warm[j]
        return log_map_batch(metric, mix.components[j].mu, data, solver, v0=v0)

    logs = parallel_map(solve, range(mix.k))
    n = len(data)
    q = np.full((n, mix.k), np.nan)
    for j, lg in enumerate(logs):
        p = mix.components[j].precision
        v = lg.velocity[lg.converged]
        q[lg.converged, j] = np.einsum("nd,dk,nk->n", v, p, v)
    return q, np.isfinite(q), logs


def _responsibilities_from(q, log_cs, weights):
    """Log-space E-step given quadratics and component constants."""
    with np.errstate(invalid="ignore"):
        lp = -0.5 * q - log_cs[None, :] + np.log(weights)[None, :]
    lp = np.where(np.isfinite(q), lp, -np.inf)
    dead = ~np.isfinite(lp).any(axis=1)
    if dead.any():
        log.warning("E-step: %d points unreachable from every component; "
                    "assigning uniform responsibilities", int(dead.sum()))
        lp[dead] = 0.0
    r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    r /= r.sum(axis=1, keepdims=True)
    return r, dead


def e_step(data, mix, metric, solver=None, logs_list=None):
    """Responsibilities r_nk under the current mixture (log-space)."""
    for c in mix.components:
        if c.norm_const is None:
            raise ValueError("all component norm_consts must be cached")
    q, _, _ = component_quadratics(data, mix, metric, solver, logs_list)
    log_cs = np.array([math.log(c.norm_const) for c in mix.components])
    r, _ = _responsibilities_from(q, log_cs, mix.weights)
    return Responsibilities(r=r)


def mixture_log_density(mix, metric, x, solver=None):
    """Mixture log density (Riemannian measure); returns (values, ok)."""
    for c in mix.components:
        if c.norm_const is None:
            raise ValueError("all component norm_consts must be cached")
    q, _, _ = component_quadratics(np.atleast_2d(x), mix, metric, solver)
    log_cs = np.array([math.log(c.norm_const) for c in mix.components])
    with np.errstate(invalid="ignore"):
        lp = -0.5 * q - log_cs[None, :] + np.log(mix.weights)[None, :]
    lp = np.where(np.isfinite(q), lp, -np.inf)
    ok = np.isfinite(lp).any(axis=1)
    vals = np.where(ok, logsumexp(lp, axis=1), np.nan)
    return vals, ok


def m_step_gradients(data, mix, r, mcs, metric=None, solver=None, logs_list=None):
    """Raw mixture update directions, one (d_mu_k, grad_A_k) pair per
    component.

    These are the responsibility-weighted sums (scale ~ R_k = sum_n r_nk,
    so K=1 gives N times the single-model directions); em_fit divides by
    R_k before stepping.
    """
    data = np.asarray(data, dtype=float)
    r = r.r if isinstance(r, Responsibilities) else np.asarray(r, dtype=float)
    if logs_list is None:
        if metric is None:
            raise ValueError("need either logs_list or the metric")
        _, _, logs_list = component_quadratics(data, mix, metric, solver)
    out = []
    for j, (comp, mc) in enumerate(zip(mix.components, mcs)):
        lg = logs_list[j]
        w = np.where(lg.converged, r[:, j], 0.0)
        rk = w.sum()
        v = lg.velocity
        d_mu = v.T @ w - rk * mc.mean_v()
        second = (w[:, None] * v).T @ v
        grad_a = comp.a @ (second - rk * mc.mean_vv())
        out.append((d_mu, grad_a))
    return out


@dataclass(frozen=True)
class MixtureFitResult:
    mixture: LandMixture
    trace: np.ndarray
    responsibilities: Responsibilities
    converged: bool
    n_iter: int
    n_skipped_logs: int = 0


def _psi(q, ok, r, log_cs, weights):
    """Mean per-point EM objective; skips points unreachable everywhere."""
    valid = ok.any(axis=1)
    with np.errstate(invalid="ignore"):
        term = 0.5 * q + log_cs[None, :] - np.log(weights)[None, :]
    contrib = np.where((r > 0) & ok, r * term, 0.0)
    return float(contrib[valid].sum() / valid.sum())


def _init_mixture(data, metric, k, cfg, solver):
    """Component seeds per strategy + tangent covariances per cluster."""
    from . import baselines
    from .model import _initialize, _tangent_covariance

    if k == 1:
        # single component: take exactly the single-model initialization
        mu0, cov0, _ = _initialize(data, metric, cfg, solver)
        return [LandParams.from_moments(mu0, cov0)], np.array([1.0])

    n = len(data)
    scale = float(np.sqrt(np.mean(np.sum((data - data.mean(0)) ** 2, axis=1)))) or 1.0
    if cfg.init_strategy == "random":
        g = sample_stream(cfg.rng_seed, 2**40, 0)
        mus = data[g.choice(n, size=k, replace=False)]
        d2 = np.empty((n, k))
        for j in range(k):
            lg = log_map_batch(metric, mus[j], data, solver)
            d2[:, j] = np.where(lg.converged, (lg.velocity**2).sum(1), np.inf)
        assign = d2.argmin(axis=1)
        weights = None
    elif cfg.init_strategy == "least_squares":
        mus, assign = baselines.riemannian_kmeans(
            data, metric, k, baselines.KMeansConfig(seed=cfg.rng_seed), solver
        )
        weights = None
    else:  # gmm
        gm = baselines.gmm_fit(data, k, baselines.GmmConfig(seed=cfg.rng_seed))
        mus = gm.means
        assign = gm.predict(data)
        weights = gm.weights
    comps = []
    for j in range(k):
        members = data[assign == j]
        if len(members) < 2:
            members = data
        logs = log_map_batch(metric, mus[j], members, solver)
        cov = _tangent_covariance(logs, scale)
        comps.append(LandParams.from_moments(np.asarray(mus[j], dtype=float), cov))
    if weights is None:
        weights = np.bincount(assign, minlength=k).astype(float)
        weights = np.maximum(weights, 1.0)
    weights = weights / weights.sum()
    return comps, weights


def em_fit(data, metric, k, cfg=None, solver=None):
    """Fit a K-component mixture (alternating E-step and gradient M-step).

    Per iteration: re-estimate each component's C, compute responsibilities,
    then per component take a mu step and an A step exactly as in fit_mle
    but with responsibility weights. Stops on a small squared change of the
    per-point objective; returns the best iterate visited. Components that
    lose all responsibility mass (R_k < 1e-8) are re-seeded at the point of
    lowest mixture density.
    """
    cfg = cfg or FitConfig(init_strategy="gmm")
    solver = solver or DEFAULT_SOLVER
    data = np.asarray(data, dtype=float)
    n = len(data)
    if data.ndim != 2 or n < k or k < 1:
        raise ValueError("need (N, D) data with N >= K >= 1")
    if data.shape[1] != metric.dim:
        raise ValueError("data dimension does not match the metric")
    s = cfg.mc_samples

    comps, weights = _init_mixture(data, metric, k, cfg, solver)
    step_mu = np.full(k, cfg.step_mu)
    step_a = np.full(k, cfg.step_a)
    logs_list = [None] * k
    pending = [None] * k  # per-point (phi before A step, data part after)
    trace = []
    best = None
    converged = False
    n_skipped = 0

    for t in range(cfg.max_iter + 1):
        mcs = []
        for j in range(k):
            c_j, mc_j = normalization_constant(
                metric, comps[j].mu, comps[j].cov, s,
                McStream(cfg.rng_seed, 2 * (t * k + j)), solver,
            )
            comps[j] = comps[j].with_norm_const(c_j, s)
            mcs.append(mc_j)
        mix = LandMixture(components=tuple(comps), weights=weights)
        q, ok, logs_list = component_quadratics(data, mix, metric, solver, logs_list)
        log_cs = np.array([math.log(c.norm_const) for c in comps])
        r, _ = _responsibilities_from(q, log_cs, weights)
        psi = _psi(q, ok, r, log_cs, weights)
        trace.append(psi)

        for j in range(k):
            if pending[j] is not None:
                g_before, data_part = pending[j]
                step_a[j] *= 1.1 if data_part + log_cs[j] < g_before else 0.75
                pending[j] = None
        if best is None or psi < best[0]:
            best = (psi, [c for c in comps], weights.copy(), r.copy())
        if t >= 1 and (trace[-1] - trace[-2]) ** 2 <= cfg.tol:
            converged = True
            break
        if t == cfg.max_iter:
            break

        for j in range(k):
            lg = logs_list[j]
            n_skipped += lg.failure_count
            w = np.where(lg.converged, r[:, j], 0.0)
            rk = float(w.sum())
            if rk < 1e-8:
                with np.errstate(invalid="ignore"):
                    mix_ll = logsumexp(
                        np.where(ok, -0.5 * q - log_cs[None, :] + np.log(weights)[None, :], -np.inf),
                        axis=1,
                    )
                worst = int(np.nanargmin(np.where(ok.any(axis=1), mix_ll, np.nan)))
                log.warning("component %d empty; re-seeding at point %d", j, worst)
                comps[j] = LandParams.from_moments(data[worst], comps[j].cov)
                logs_list[j] = None
                step_mu[j], step_a[j] = cfg.step_mu, cfg.step_a
                continue

            mc1 = mcs[j]
            v = lg.velocity
            d_mu = (v.T @ w - rk * mc1.mean_v()) / rk
            g0 = float(0.5 * (w @ np.nan_to_num(q[:, j])) + rk * log_cs[j])
            mu_new, step_mu[j] = damped_step(
                metric, comps[j].mu, float(step_mu[j]), d_mu, solver.fixed_steps
            )
            warm = lg.velocity + (comps[j].mu - mu_new)[None, :]
            lg_new = log_map_batch(metric, mu_new, data, solver, v0=warm)
            half = comps[j].with_moments(mu=mu_new)
            c2, mc2 = normalization_constant(
                metric, mu_new, half.cov, s,
                McStream(cfg.rng_seed, 2 * (t * k + j) + 1), solver,
            )
            w_new = np.where(lg_new.converged, r[:, j], 0.0)
            rk_new = float(w_new.sum())
            if rk_new <= 0:
                raise FitError(f"all log maps failed for component {j}")
            vn = lg_new.velocity
            q_new = np.einsum("nd,dk,nk->n", vn, half.precision, vn)
            g1 = float(0.5 * (w_new @ np.where(lg_new.converged, q_new, 0.0))
                       + rk_new * math.log(c2))
            step_mu[j] *= 1.1 if g1 / rk_new < g0 / rk else 0.75

            second = (w_new[:, None] * vn).T @ np.where(
                lg_new.converged[:, None], vn, 0.0
            )
            grad_a = half.a @ (second - rk_new * mc2.mean_vv())
            a_new = half.a - float(step_a[j]) * grad_a / rk_new
            if not np.all(np.isfinite(a_new)) or abs(np.linalg.det(a_new)) < 1e-12:
                raise FitError(f"precision factor of component {j} lost rank")
            comps[j] = half.with_moments(a=a_new)
            logs_list[j] = lg_new
            q_after = np.einsum("nd,dk,nk->n", vn, comps[j].precision, vn)
            data_part = float(0.5 * (w_new @ np.where(lg_new.converged, q_after, 0.0)))
            pending[j] = (g1 / rk_new, data_part / rk_new)

        weights = np.maximum(r.sum(axis=0) / n, 1e-12)
        weights = weights / weights.sum()

    psi_best, comps_best, weights_best, r_best = best
    log.info("em_fit: K=%d, %d iterations, psi %.6f, converged=%s",
             k, len(trace) - 1, psi_best, converged)
    return MixtureFitResult(
        mixture=LandMixture(components=tuple(comps_best), weights=weights_best),
        trace=np.array(trace),
        responsibilities=Responsibilities(r=r_best),
        converged=converged,
        n_iter=len(trace) - 1,
        n_skipped_logs=n_skipped,
    )


def mixture_sample(mix, metric, n, rng, solver=None, oversample=10):
    """Draw n points: multinomial component counts, then per-component
    importance resampling."""
    stream = as_stream(rng)
    g = sample_stream(stream.seed, stream.event, 0)
    counts = g.multinomial(n, mix.weights)
    parts = []
    for j, c in enumerate(counts):
        if c == 0:
            continue
        sub = McStream(stream.seed, stream.event + 1 + 2 * j)
        parts.append(sample_single(mix.components[j], metric, int(c), sub,
                                   solver, oversample))
    return np.concatenate(parts, axis=0)


def mixture_to_dict(mix, sigma=None, rho=None, seed=None, anchor_hash=None):
    """JSON-ready dict for a fitted mixture."""
    return {
        "K": mix.k,
        "weights": mix.weights.tolist(),
        "components": [
            {
                "mu": c.mu.tolist(),
                "A": c.a.tolist(),
                "norm_const": c.norm_const,
                "S": c.norm_const_samples,
            }
            for c in mix.components
        ],
        "sigma": sigma,
        "rho": rho,
        "seed": seed,
        "metric_anchor_file_hash": anchor_hash,
    }


def mixture_from_dict(d):
    """Rebuild a LandMixture from its JSON dict; returns (mixture, meta)."""
    comps = []
    for cd in d["components"]:
        p = LandParams.from_factor(np.asarray(cd["mu"], dtype=float),
                                   np.asarray(cd["A"], dtype=float))
        if cd.get("norm_const") is not None:
            p = p.with_norm_const(cd["norm_const"], cd.get("S", 0))
        comps.append(p)
    mix = LandMixture(components=tuple(comps),
                      weights=np.asarray(d["weights"], dtype=float))
    meta = {k: d.get(k) for k in ("sigma", "rho", "seed", "metric_anchor_file_hash")}
    return mix, meta
