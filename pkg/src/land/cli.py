"""Command-line entry points: gen, fit, density-grid, eval.

Conventions shared by all commands: datasets are CSV (header x1,...,xD with
an optional label column), fitted models are JSON carrying everything
needed to re-evaluate them (parameters, sigma/rho, the SHA-256 of the
anchor dataset), and every output embeds or sits next to the resolved
configuration. Exit codes: 0 success, 2 usage or validation error, 3 fit
did not converge (outputs still written), 4 numerical failure.

The --threads flag only caps worker threads; it never changes results, so
it is left out of the embedded configs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .baselines import GaussianMixture, GmmConfig, gmm_fit, ls_mixture
from .dataio import (
    file_sha256,
    read_dataset_csv,
    read_json,
    write_dataset_csv,
    write_grid_csv,
    write_json,
    write_trace_csv,
)
from .evaluation import (
    gen_half_ellipsoid,
    gen_two_moons,
    half_ellipsoid_truth,
    f_measure,
    mean_nll_under_truth,
    metric_record,
    mixture_num_params,
)
from .geodesic import GeodesicError, GeodesicSolverConfig
from .metric import default_rho, learn_metric
from .model import (
    FitConfig,
    FitError,
    LandParams,
    fit_mle,
    log_density_batch,
    model_from_dict,
    model_to_dict,
    normalization_constant,
    sample as sample_land,
)
from .mixture import (
    LandMixture,
    component_quadratics,
    em_fit,
    mixture_from_dict,
    mixture_log_density,
    mixture_sample,
    mixture_to_dict,
)
from .parallel import set_threads
from .rng import McStream

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Validation problem that maps to exit code 2."""


def _resolved_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func", "threads")}
    cfg["land_version"] = __version__
    return cfg


def _solver_from(args):
    return GeodesicSolverConfig(
        integrator="fixed",
        fixed_steps=args.ode_steps,
        bvp_tol=args.bvp_tol,
        bvp_max_iter=args.bvp_max_iter,
    )


def _metric_from(args, model_dict):
    """Rebuild the learned metric of a stored model from its anchor file."""
    sigma, rho = model_dict.get("sigma"), model_dict.get("rho")
    if sigma is None or rho is None:
        raise UsageError("model file lacks sigma/rho; was it fit with --model gmm?")
    if args.data is None:
        raise UsageError("--data (the metric anchor dataset) is required")
    if model_dict.get("metric_anchor_file_hash") not in (None, file_sha256(args.data)):
        raise UsageError(f"{args.data} does not match the dataset the model "
                         "was fit on (hash mismatch)")
    anchors = read_dataset_csv(args.data).points
    return learn_metric(anchors, sigma, rho)


def _gmm_from_dict(d):
    return GaussianMixture(
        weights=np.asarray(d["weights"], dtype=float),
        means=np.asarray(d["means"], dtype=float),
        covs=np.asarray(d["covs"], dtype=float),
    )


def cmd_gen(args):
    if args.kind == "half-ellipsoid":
        ds = gen_half_ellipsoid(args.n, args.noise, args.seed, args.dim)
    else:
        if args.dim != 2:
            raise UsageError("two-moons data is 2D only")
        ds = gen_two_moons(args.n, args.noise, args.seed)
    write_dataset_csv(args.out, ds)
    write_json(args.out + ".config.json", _resolved_config(args))
    return 0


def _fit_land_family(args, data, path):
    sigma = args.sigma
    if sigma is None or sigma <= 0:
        raise UsageError("--sigma > 0 is required for land models")
    rho = args.rho if args.rho is not None else default_rho(data)
    metric = learn_metric(data, sigma, rho)
    solver = _solver_from(args)
    init = {"ls": "least_squares"}.get(args.init, args.init)
    cfg = FitConfig(
        step_mu=args.step_mu,
        step_a=args.step_a,
        mc_samples=args.samples,
        tol=args.tol,
        max_iter=args.max_iter,
        init_strategy=init,
        rng_seed=args.seed,
    )
    anchor_hash = file_sha256(path)
    if args.model == "land":
        res = fit_mle(data, metric, cfg, solver)
        body = model_to_dict(res.params, sigma=sigma, rho=rho, seed=args.seed,
                             anchor_hash=anchor_hash)
    else:
        res = em_fit(data, metric, args.k, cfg, solver)
        body = mixture_to_dict(res.mixture, sigma=sigma, rho=rho, seed=args.seed,
                               anchor_hash=anchor_hash)
    return res, body


def cmd_fit(args):
    data = read_dataset_csv(args.data).points
    trace_path = args.trace or (os.path.splitext(args.out)[0] + ".trace.csv")
    config = _resolved_config(args)
    exit_code = 0

    if args.model in ("land", "land-mixture"):
        res, body = _fit_land_family(args, data, args.data)
        trace = res.trace
        if not res.converged:
            exit_code = 3
    elif args.model == "gmm":
        gm = gmm_fit(data, args.k, GmmConfig(max_iter=args.max_iter, tol=args.tol,
                                             seed=args.seed))
        body = {
            "K": gm.k,
            "weights": gm.weights.tolist(),
            "means": gm.means.tolist(),
            "covs": gm.covs.tolist(),
            "log_lik": gm.log_lik,
            "seed": args.seed,
        }
        trace = [-gm.log_lik]
        if not gm.converged:
            exit_code = 3
    else:  # ls: intrinsic estimators, MC-normalized for density comparisons
        if args.sigma is None or args.sigma <= 0:
            raise UsageError("--sigma > 0 is required for ls models")
        rho = args.rho if args.rho is not None else default_rho(data)
        metric = learn_metric(data, args.sigma, rho)
        solver = _solver_from(args)
        est = ls_mixture(data, metric, args.k, solver=solver)
        comps = []
        for j in range(args.k):
            p = LandParams.from_moments(est.means[j], est.covs[j])
            c, _ = normalization_constant(metric, p.mu, p.cov, args.samples,
                                          McStream(args.seed, j), solver)
            comps.append(p.with_norm_const(c, args.samples))
        mix = LandMixture(components=tuple(comps), weights=est.weights)
        body = mixture_to_dict(mix, sigma=args.sigma, rho=rho, seed=args.seed,
                               anchor_hash=file_sha256(args.data))
        vals, ok = mixture_log_density(mix, metric, data, solver)
        trace = [float(-vals[ok].mean())]

    body["model"] = args.model
    body["config"] = config
    write_json(args.out, body)
    write_trace_csv(trace_path, trace)
    write_json(trace_path + ".config.json", config)
    return exit_code


def cmd_density_grid(args):
    model_dict = read_json(args.model_file)
    kind = model_dict.get("model", "land")
    if args.res < 1:
        raise UsageError("--res must be >= 1")
    xs = np.linspace(args.xmin, args.xmax, args.res)
    ys = np.linspace(args.ymin, args.ymax, args.res)
    grid = np.array([[x, y] for x in xs for y in ys])

    if kind == "gmm":
        if np.asarray(model_dict["means"]).shape[1] != 2:
            raise UsageError("density-grid requires a 2D model")
        dens = np.exp(_gmm_from_dict(model_dict).log_pdf(grid))
    else:
        metric = _metric_from(args, model_dict)
        if metric.dim != 2:
            raise UsageError("density-grid requires a 2D model")
        solver = _solver_from(args)
        if kind == "land":
            params, _ = model_from_dict(model_dict)
            vals, ok = log_density_batch(params, metric, grid, solver)
        else:
            mix, _ = mixture_from_dict(model_dict)
            vals, ok = mixture_log_density(mix, metric, grid, solver)
        # model densities are w.r.t. the Riemannian measure; the grid is
        # Lebesgue, so multiply by sqrt(det M)
        dens = np.where(ok, np.exp(vals + metric.log_measure(grid)), np.nan)

    write_grid_csv(args.out, xs, ys, dens.reshape(args.res, args.res))
    write_json(args.out + ".config.json", _resolved_config(args))
    return 0


def _load_for_eval(args, path):
    model_dict = read_json(path)
    kind = model_dict.get("model", "land")
    if kind == "gmm":
        return kind, _gmm_from_dict(model_dict), None
    metric = _metric_from(args, model_dict)
    if kind == "land":
        params, _ = model_from_dict(model_dict)
        return kind, params, metric
    mix, _ = mixture_from_dict(model_dict)
    return kind, mix, metric


def _model_k(kind, obj):
    return 1 if kind == "land" else obj.k


def cmd_eval(args):
    records = []
    solver = _solver_from(args)

    if args.metric == "nll":
        kind, obj, metric = _load_for_eval(args, args.model_file)
        if kind == "gmm":
            samples = obj.sample(args.samples, McStream(args.seed, 0))
        elif kind == "land":
            samples = sample_land(obj, metric, args.samples, McStream(args.seed, 0),
                                  solver, oversample=args.oversample)
        else:
            samples = mixture_sample(obj, metric, args.samples,
                                     McStream(args.seed, 0), solver,
                                     oversample=args.oversample)
        truth = half_ellipsoid_truth(args.noise, dim=samples.shape[1])
        val = mean_nll_under_truth(samples, truth)
        records.append(metric_record(kind, _model_k(kind, obj), args.seed,
                                     "mean_nll_under_truth", val))
    elif args.metric == "f-measure":
        ds = read_dataset_csv(args.data)
        if ds.labels is None:
            raise UsageError("f-measure needs a labeled dataset")
        kind, obj, metric = _load_for_eval(args, args.model_file)
        if kind == "gmm":
            assign = obj.predict(ds.points)
        elif kind == "land":
            assign = np.zeros(len(ds.points), dtype=int)
        else:
            q, _, _ = component_quadratics(ds.points, obj, metric, solver)
            log_cs = np.array([np.log(c.norm_const) for c in obj.components])
            with np.errstate(invalid="ignore"):
                lp = -0.5 * q - log_cs[None, :] + np.log(obj.weights)[None, :]
            lp = np.where(np.isfinite(q), lp, -np.inf)
            assign = lp.argmax(axis=1)
        val = f_measure(ds.labels, assign)
        records.append(metric_record(kind, _model_k(kind, obj), args.seed,
                                     "f_measure", val))
    else:  # aic-bic sweep over the given model files
        data = read_dataset_csv(args.data).points
        for path in args.model_files:
            kind, obj, metric = _load_for_eval(args, path)
            if kind == "gmm":
                ll = float(obj.log_pdf(data).sum())
            elif kind == "land":
                vals, ok = log_density_batch(obj, metric, data, solver)
                ll = float(vals[ok].sum())
            else:
                vals, ok = mixture_log_density(obj, metric, data, solver)
                ll = float(vals[ok].sum())
            k = _model_k(kind, obj)
            nu = mixture_num_params(k, data.shape[1])
            aic, bic = (-2.0 * ll + 2.0 * nu,
                        -2.0 * ll + nu * np.log(len(data)))
            records.append(metric_record(kind, k, args.seed, "aic", aic))
            records.append(metric_record(kind, k, args.seed, "bic", bic))

    write_json(args.out, {"records": records, "config": _resolved_config(args)})
    return 0


def _add_solver_flags(p):
    p.add_argument("--ode-steps", type=int, default=16,
                   help="fixed RK4 steps per geodesic (default 16)")
    p.add_argument("--bvp-tol", type=float, default=1e-4)
    p.add_argument("--bvp-max-iter", type=int, default=40)


def build_parser():
    top = argparse.ArgumentParser(
        prog="land",
        description="Locally adaptive normal distributions: generate data, "
                    "fit models, export densities, evaluate.",
    )
    top.add_argument("--version", action="version", version=f"land {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1,
                        help="worker thread cap (never changes results)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True, help="output file path")

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--kind", required=True, choices=["half-ellipsoid", "two-moons"])
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--dim", type=int, default=2)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", parents=[common], help="fit a model to CSV data")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True,
                   choices=["land", "land-mixture", "ls", "gmm"])
    p.add_argument("--k", type=int, default=1, help="number of components")
    p.add_argument("--sigma", type=float, default=None,
                   help="metric kernel bandwidth (required for land/ls)")
    p.add_argument("--rho", type=float, default=None,
                   help="metric regularizer (default: data-driven)")
    p.add_argument("--samples", type=int, default=3000,
                   help="Monte Carlo samples for normalization constants")
    p.add_argument("--init", choices=["random", "ls", "gmm"], default="gmm")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--step-mu", type=float, default=0.1)
    p.add_argument("--step-a", type=float, default=0.1)
    p.add_argument("--trace", default=None,
                   help="objective trace CSV (default: <out>.trace.csv)")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("density-grid", parents=[common],
                       help="evaluate a fitted model's density on a 2D grid")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", default=None,
                   help="metric anchor dataset (the file the model was fit on)")
    p.add_argument("--xmin", type=float, required=True)
    p.add_argument("--xmax", type=float, required=True)
    p.add_argument("--ymin", type=float, required=True)
    p.add_argument("--ymax", type=float, required=True)
    p.add_argument("--res", type=int, default=50)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_density_grid)

    p = sub.add_parser("eval", parents=[common], help="score a fitted model")
    p.add_argument("--metric", required=True, choices=["nll", "f-measure", "aic-bic"])
    p.add_argument("--model-file", default=None)
    p.add_argument("--model-files", nargs="+", default=None,
                   help="model files for the aic-bic sweep")
    p.add_argument("--data", default=None)
    p.add_argument("--samples", type=int, default=10000,
                   help="model samples for the nll metric")
    p.add_argument("--noise", type=float, default=0.05,
                   help="noise of the half-ellipsoid truth density")
    p.add_argument("--oversample", type=int, default=10)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_eval)
    return top


def main(argv=None):
    level = os.environ.get("LAND_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    set_threads(args.threads)
    try:
        if args.command == "eval":
            if args.metric == "aic-bic" and not args.model_files:
                raise UsageError("aic-bic needs --model-files")
            if args.metric != "aic-bic" and not args.model_file:
                raise UsageError(f"{args.metric} needs --model-file")
            if args.metric in ("f-measure", "aic-bic") and not args.data:
                raise UsageError(f"{args.metric} needs --data")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FitError, GeodesicError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
