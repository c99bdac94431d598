"""Geodesics of the learned metric: exponential and logarithm maps.

A geodesic curve gamma satisfies the second-order ODE

    gamma''_d = -(1 / (2 M_dd)) * ( 2 sum_k dM_dd/dx_k gamma'_d gamma'_k
                                    - sum_k dM_kk/dx_d gamma'_k^2 ),

the diagonal-metric specialization of the general equation
gamma'' = -1/2 M^{-1} [ 2 (I (x) gamma'^T) dvec(M)/dgamma gamma'
                        - (dvec(M)/dgamma)^T (gamma' (x) gamma') ].

The exponential map integrates this initial value problem; the logarithm
map inverts it by single shooting (damped Gauss-Newton on the initial
velocity). Everything that has to run thousands of times per fit iteration
exists in a batched form that integrates many curves over one shared time
grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class GeodesicError(RuntimeError):
    """Base class for solver failures."""


class IvpError(GeodesicError):
    """Exponential-map integration failed; carries the partial curve."""

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


class BvpError(GeodesicError):
    """Logarithm-map shooting failed; carries the best iterate found."""

    def __init__(self, message, velocity=None, residual=None, iterations=0):
        super().__init__(message)
        self.velocity = velocity
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class GeodesicSolverConfig:
    """Tolerances and iteration limits for the exp/log solvers.

    ivp_rel_tol / ivp_abs_tol control the adaptive integrator; fixed_steps
    is the grid size of the batched fixed-step integrator (also used by the
    shooting solver so the discrete boundary problem is well defined).
    bvp_tol is an endpoint residual threshold in data units.
    """

    ivp_rel_tol: float = 1e-7
    ivp_abs_tol: float = 1e-9
    max_steps: int = 10_000
    bvp_max_iter: int = 40
    bvp_tol: float = 1e-6
    initial_guess_rule: str = "straight_line"
    integrator: str = "adaptive"
    fixed_steps: int = 64
    fd_step: float = 1e-6

    def __post_init__(self):
        for name in ("ivp_rel_tol", "ivp_abs_tol", "bvp_tol", "fd_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("max_steps", "bvp_max_iter", "fixed_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.initial_guess_rule != "straight_line":
            raise ValueError(f"unknown initial_guess_rule {self.initial_guess_rule!r}")
        if self.integrator not in ("adaptive", "fixed"):
            raise ValueError(f"unknown integrator {self.integrator!r}")


DEFAULT_SOLVER = GeodesicSolverConfig()


@dataclass
class GeodesicCurve:
    """Solver nodes (t, position, velocity) with cubic Hermite dense output."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    scheme: str = "cubic_hermite"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.t.ndim != 1 or len(self.t) < 2:
            raise ValueError("curve needs at least two nodes")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("node times must be strictly increasing")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("curve positions must be finite")

    @property
    def endpoint(self):
        return self.x[-1]

    def _segments(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.clip(np.searchsorted(self.t, s, side="right") - 1, 0, len(self.t) - 2)
        h = self.t[idx + 1] - self.t[idx]
        u = (s - self.t[idx]) / h
        return idx, h, u

    def position(self, s):
        """Evaluate the curve at parameter values s in [0, 1]."""
        scalar = np.isscalar(s)
        idx, h, u = self._segments(np.atleast_1d(s))
        u = u[:, None]
        h = h[:, None]
        p0, p1 = self.x[idx], self.x[idx + 1]
        v0, v1 = self.v[idx], self.v[idx + 1]
        h00 = 2 * u**3 - 3 * u**2 + 1
        h10 = u**3 - 2 * u**2 + u
        h01 = -2 * u**3 + 3 * u**2
        h11 = u**3 - u**2
        out = h00 * p0 + h10 * h * v0 + h01 * p1 + h11 * h * v1
        return out[0] if scalar else out

    def velocity(self, s):
        """Evaluate the curve derivative at parameter values s."""
        scalar = np.isscalar(s)
        idx, h, u = self._segments(np.atleast_1d(s))
        u = u[:, None]
        h = h[:, None]
        p0, p1 = self.x[idx], self.x[idx + 1]
        v0, v1 = self.v[idx], self.v[idx + 1]
        d00 = (6 * u**2 - 6 * u) / h
        d10 = 3 * u**2 - 4 * u + 1
        d01 = (-6 * u**2 + 6 * u) / h
        d11 = 3 * u**2 - 2 * u
        out = d00 * p0 + d10 * v0 + d01 * p1 + d11 * v1
        return out[0] if scalar else out

    def length(self, metric, resolution=256):
        """Riemannian length by trapezoidal quadrature of the speed."""
        n = max(resolution, 2 * len(self.t))
        s = np.linspace(0.0, 1.0, n)
        pos = self.position(s)
        vel = self.velocity(s)
        m = metric.tensor(pos)
        speed = np.sqrt(np.einsum("bd,bd->b", m * vel, vel))
        return float(np.trapezoid(speed, s))


def _acceleration_generic(metric, x, v):
    """Two-term contraction of the metric derivative; reference path."""
    m, dm = metric.tensor_and_derivative(x)
    t1 = 2.0 * v * np.einsum("bdk,bk->bd", dm, v)
    t2 = np.einsum("bkd,bk->bd", dm, v * v)
    return -0.5 * (t1 - t2) / m


def _acceleration(metric, x, v):
    """Geodesic acceleration for a (B, D) batch of positions/velocities."""
    fast = getattr(metric, "geodesic_acceleration", None)
    if fast is not None:
        return fast(x, v)
    return _acceleration_generic(metric, x, v)


def geodesic_rhs(metric, position, velocity):
    """Acceleration gamma'' at a single (position, velocity) state."""
    position = np.asarray(position, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    if not (np.all(np.isfinite(position)) and np.all(np.isfinite(velocity))):
        raise ValueError("position and velocity must be finite")
    return _acceleration(metric, position[None, :], velocity[None, :])[0]


def _integrate_fixed(metric, x0, v0, n_steps, record=False):
    """Batched fixed-step RK4 over t in [0, 1].

    Returns (x, v) at t=1, or (ts, xs, vs) stacks when record=True.
    Rows that blow up simply carry non-finite values; callers mask them.
    """
    x = np.array(x0, dtype=float, copy=True)
    v = np.array(v0, dtype=float, copy=True)
    h = 1.0 / n_steps
    if record:
        ts = [0.0]
        xs = [x.copy()]
        vs = [v.copy()]
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for i in range(n_steps):
            k1v = _acceleration(metric, x, v)
            x2 = x + 0.5 * h * v
            v2 = v + 0.5 * h * k1v
            k2v = _acceleration(metric, x2, v2)
            x3 = x + 0.5 * h * v2
            v3 = v + 0.5 * h * k2v
            k3v = _acceleration(metric, x3, v3)
            x4 = x + h * v3
            v4 = v + h * k3v
            k4v = _acceleration(metric, x4, v4)
            x = x + (h / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            if record:
                ts.append((i + 1) * h)
                xs.append(x.copy())
                vs.append(v.copy())
    if record:
        return np.array(ts), np.stack(xs), np.stack(vs)
    return x, v


# Dormand-Prince 5(4) tableau.
_DP_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def _integrate_adaptive(metric, x0, v0, cfg):
    """Adaptive Dormand-Prince 5(4) for one curve; returns nodes and status."""

    def f(state):
        x, v = state[: len(x0)], state[len(x0) :]
        a = _acceleration(metric, x[None, :], v[None, :])[0]
        return np.concatenate([v, a])

    y = np.concatenate([np.asarray(x0, float), np.asarray(v0, float)])
    t = 0.0
    ts, ys = [0.0], [y.copy()]
    h = 0.01
    status = "ok"
    k1 = f(y)
    steps = 0
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        while t < 1.0:
            if steps >= cfg.max_steps:
                status = "max_steps"
                break
            steps += 1
            h = min(h, 1.0 - t)
            k = [k1]
            bad = False
            for row in _DP_A:
                stage = y + h * sum(c * ki for c, ki in zip(row, k))
                ki = f(stage)
                if not np.all(np.isfinite(ki)):
                    bad = True
                    break
                k.append(ki)
            if not bad:
                y5 = y + h * sum(c * ki for c, ki in zip(_DP_B5[:6], k))
                k.append(f(y5))
                err_vec = h * sum(
                    (c5 - c4) * ki for c5, c4, ki in zip(_DP_B5, _DP_B4, k)
                )
                bad = not (np.all(np.isfinite(y5)) and np.all(np.isfinite(err_vec)))
            if bad:
                h *= 0.25
                if h < 1e-14:
                    status = "diverged"
                    break
                continue
            scale = cfg.ivp_abs_tol + cfg.ivp_rel_tol * np.maximum(
                np.abs(y), np.abs(y5)
            )
            err = np.sqrt(np.mean((err_vec / scale) ** 2))
            if err <= 1.0:
                t += h
                y = y5
                k1 = k[6]
                ts.append(t)
                ys.append(y.copy())
                factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err**-0.2))
            else:
                factor = min(1.0, max(0.2, 0.9 * err**-0.2))
            h *= factor
            if h < 1e-14:
                status = "diverged" if err > 1.0 else status
                break
    ys = np.array(ys)
    d = len(x0)
    return np.array(ts), ys[:, :d], ys[:, d:], status


def exp_map(metric, x, v, cfg=None):
    """Shoot a geodesic from x with initial velocity v over unit time.

    Returns (endpoint, GeodesicCurve). Raises IvpError (with the partial
    curve attached) when the step budget runs out or the state diverges.
    """
    cfg = cfg or DEFAULT_SOLVER
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(v)):
        raise ValueError("x and v must be finite")
    if np.all(v == 0):
        curve = GeodesicCurve(np.array([0.0, 1.0]), np.stack([x, x]), np.zeros((2, len(x))))
        return x.copy(), curve
    if cfg.integrator == "fixed":
        ts, xs, vs = _integrate_fixed(metric, x[None], v[None], cfg.fixed_steps, record=True)
        xs, vs = xs[:, 0], vs[:, 0]
        status = "ok" if np.all(np.isfinite(xs)) else "diverged"
    else:
        ts, xs, vs, status = _integrate_adaptive(metric, x, v, cfg)
    if status != "ok":
        finite = np.all(np.isfinite(xs), axis=1) & np.all(np.isfinite(vs), axis=1)
        keep = np.flatnonzero(finite)
        partial = None
        if len(keep) >= 2:
            tp = ts[keep]
            partial = GeodesicCurve(tp / tp[-1], xs[keep], vs[keep] * tp[-1])
        raise IvpError(f"exponential map failed: {status}", curve=partial)
    return xs[-1].copy(), GeodesicCurve(ts, xs, vs)


def exp_map_batch(metric, x, v, n_steps):
    """Endpoints of many geodesics over one fixed RK4 grid.

    x may be a single origin (D,) shared by all rows of v, or (B, D).
    Returns (endpoints, end_velocities); non-finite rows mark divergence.
    """
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = np.broadcast_to(x, v.shape)
    return _integrate_fixed(metric, x, v, n_steps)


@dataclass
class ShootingResult:
    """Outcome of a batched logarithm-map solve."""

    velocity: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    iterations: int

    @property
    def failure_count(self):
        return int((~self.converged).sum())


def log_map_batch(metric, origin, targets, cfg=None, v0=None):
    """Solve Exp_origin(v) = target for each row of targets.

    Single shooting with damped Gauss-Newton on the initial velocity over
    the fixed integration grid. ``v0`` warm-starts the velocities (the fit
    loop passes the previous iteration's logs); the default initial guess
    is the straight line target - origin.
    """
    cfg = cfg or DEFAULT_SOLVER
    targets = np.asarray(targets, dtype=float)
    b, d = targets.shape
    origin = np.asarray(origin, dtype=float)
    x0 = np.broadcast_to(origin, targets.shape) if origin.ndim == 1 else origin

    v = np.array(v0, dtype=float, copy=True) if v0 is not None else targets - x0
    endv, _ = exp_map_batch(metric, x0, v, cfg.fixed_steps)
    resid_vec = endv - targets
    resid = np.linalg.norm(resid_vec, axis=1)
    resid[~np.isfinite(resid)] = np.inf
    lam = np.zeros(b)
    eye = np.eye(d)
    sweeps = 0

    for sweeps in range(1, cfg.bvp_max_iter + 1):
        active = (resid > cfg.bvp_tol) & (lam < 1e10)
        if not active.any():
            break

        bad = active & ~np.isfinite(resid_vec).all(axis=1)
        if bad.any():
            # diverged endpoint: pull the guess back toward the straight line
            ib = np.flatnonzero(bad)
            v[ib] = 0.5 * v[ib] + 0.5 * (targets[ib] - x0[ib])
            ends, _ = exp_map_batch(metric, x0[ib], v[ib], cfg.fixed_steps)
            resid_vec[ib] = ends - targets[ib]
            rn = np.linalg.norm(resid_vec[ib], axis=1)
            rn[~np.isfinite(rn)] = np.inf
            resid[ib] = rn
            lam[ib] = np.maximum(lam[ib], 1e-4) * 10.0

        idx = np.flatnonzero(active & ~bad)
        if len(idx) == 0:
            continue
        nb = len(idx)
        va = v[idx]
        ra = resid_vec[idx]

        h = cfg.fd_step * np.maximum(1.0, np.linalg.norm(va, axis=1))
        perturbed = (va[:, None, :] + h[:, None, None] * eye[None, :, :]).reshape(
            nb * d, d
        )
        pend, _ = exp_map_batch(
            metric, np.repeat(x0[idx], d, axis=0), perturbed, cfg.fixed_steps
        )
        base_end = targets[idx] + ra
        jac = (pend.reshape(nb, d, d) - base_end[:, None, :]) / h[:, None, None]
        jac = jac.transpose(0, 2, 1)  # [row, output, input]
        ill = ~np.isfinite(jac).all(axis=(1, 2))
        jac[ill] = eye  # degenerate FD: damped step falls back to -r
        jtj = jac.transpose(0, 2, 1) @ jac
        jtr = np.einsum("bij,bi->bj", jac, ra)
        ridge = lam[idx] + 1e-12 * np.einsum("bii->b", jtj) / d + 1e-30
        dv = -np.linalg.solve(jtj + ridge[:, None, None] * eye, jtr[..., None])[..., 0]
        ok = np.isfinite(dv).all(axis=1)
        dv[~ok] = 0.0

        trial = va + dv
        tend, _ = exp_map_batch(metric, x0[idx], trial, cfg.fixed_steps)
        tvec = tend - targets[idx]
        tnorm = np.linalg.norm(tvec, axis=1)
        tnorm[~np.isfinite(tnorm)] = np.inf
        better = ok & (tnorm < resid[idx])
        acc = idx[better]
        rej = idx[~better]
        v[acc] = trial[better]
        resid_vec[acc] = tvec[better]
        resid[acc] = tnorm[better]
        lam[acc] = np.where(lam[acc] * 0.25 < 1e-12, 0.0, lam[acc] * 0.25)
        lam[rej] = np.maximum(lam[rej], 1e-4) * 10.0

    converged = resid <= cfg.bvp_tol
    if not converged.all():
        log.info(
            "log map: %d/%d targets unconverged (worst residual %.3g)",
            (~converged).sum(),
            b,
            float(np.max(resid[~converged])),
        )
    return ShootingResult(velocity=v, residual=resid, converged=converged, iterations=sweeps)


def log_map(metric, x, y, cfg=None):
    """Tangent vector v with Exp_x(v) = y, by single shooting.

    Raises BvpError (carrying the best velocity and residual) when the
    shooting iteration does not reach cfg.bvp_tol.
    """
    cfg = cfg or DEFAULT_SOLVER
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    res = log_map_batch(metric, x[None, :], y[None, :], cfg)
    if not res.converged[0]:
        raise BvpError(
            f"log map did not converge: residual {res.residual[0]:.3g} > {cfg.bvp_tol:g}",
            velocity=res.velocity[0],
            residual=float(res.residual[0]),
            iterations=res.iterations,
        )
    return res.velocity[0]


def tangent_norm(metric, x, v):
    """Riemannian norm sqrt(v^T M(x) v) of tangent vectors at x."""
    m = metric.tensor(x)
    v = np.asarray(v, dtype=float)
    return np.sqrt(np.einsum("...d,...d->...", m * v, v))


def geodesic_distance(metric, x, y, cfg=None):
    """Geodesic distance, the metric norm of the logarithm map."""
    v = log_map(metric, x, y, cfg)
    return float(tangent_norm(metric, np.asarray(x, dtype=float), v))


def damped_step(metric, x, step, direction, n_steps, max_halvings=6):
    """x <- Exp_x(step * direction) on the fixed grid, halving the step on
    divergence. Returns (new_x, possibly reduced step)."""
    for _ in range(max_halvings):
        end, _ = exp_map_batch(metric, x[None, :], (step * direction)[None, :], n_steps)
        if np.all(np.isfinite(end)):
            return end[0], step
        step *= 0.5
    return x, step
