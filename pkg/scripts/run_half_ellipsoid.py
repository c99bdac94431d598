"""Density estimation on the half-ellipsoid benchmark.

For each seed: draw 300 points from the 20-component arc mixture, fit a
single-component model on the learned metric plus the two comparators
(intrinsic least squares, Euclidean Gaussian), sample each fitted model,
and score the samples under the true generator density. Also records the
volume measure at the fitted means (the model mean should sit in a denser
region than the least-squares mean).

Run:  python3 scripts/run_half_ellipsoid.py --seeds 10 --out results.json
"""

import argparse
import json
import time

import numpy as np

from land import (
    FitConfig,
    GeodesicSolverConfig,
    LandParams,
    McStream,
    fit_mle,
    gen_half_ellipsoid,
    gmm_fit,
    half_ellipsoid_truth,
    learn_metric,
    ls_estimate,
    mean_nll_under_truth,
    normalization_constant,
    sample,
)

SAMPLE_EVENT = 2**41  # keeps evaluation draws clear of the fit's MC events


def run_seed(seed, n, noise, s_mc, n_eval, max_iter, sigma, rho):
    data = gen_half_ellipsoid(n=n, noise=noise, seed=seed)
    x = data.points
    metric = learn_metric(x, sigma, rho)
    solver = GeodesicSolverConfig(integrator="fixed", fixed_steps=16,
                                  bvp_tol=1e-4, bvp_max_iter=40)
    sampler = GeodesicSolverConfig(integrator="fixed", fixed_steps=8,
                                   bvp_tol=1e-4)
    truth = half_ellipsoid_truth(noise)

    cfg = FitConfig(mc_samples=s_mc, max_iter=max_iter, tol=1e-6,
                    init_strategy="least_squares", rng_seed=seed)
    t0 = time.time()
    land_fit = fit_mle(x, metric, cfg, solver)
    t_fit = time.time() - t0
    land_samples = sample(land_fit.params, metric, n_eval,
                          McStream(seed, SAMPLE_EVENT), sampler)

    ls = ls_estimate(x, metric, solver=solver)
    ls_params = LandParams.from_moments(ls.mean, ls.covariance)
    c_ls, _ = normalization_constant(metric, ls_params.mu, ls_params.cov,
                                     s_mc, McStream(seed, SAMPLE_EVENT + 2),
                                     solver)
    ls_params = ls_params.with_norm_const(c_ls, s_mc)
    ls_samples = sample(ls_params, metric, n_eval,
                        McStream(seed, SAMPLE_EVENT + 3), sampler)

    gm = gmm_fit(x, 1)
    gmm_samples = gm.sample(n_eval, McStream(seed, SAMPLE_EVENT + 5))

    return {
        "seed": seed,
        "nll_land": mean_nll_under_truth(land_samples, truth),
        "nll_ls": mean_nll_under_truth(ls_samples, truth),
        "nll_gmm": mean_nll_under_truth(gmm_samples, truth),
        "measure_at_land_mean": float(metric.measure(land_fit.params.mu)),
        "measure_at_ls_mean": float(metric.measure(ls.mean)),
        "land_iters": land_fit.n_iter,
        "land_converged": land_fit.converged,
        "fit_seconds": round(t_fit, 2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--sigma", type=float, default=0.20,
                    help="metric bandwidth; ~0.08 of the arc length")
    ap.add_argument("--rho", type=float, default=None,
                    help="metric regularizer (default: data-driven)")
    ap.add_argument("--mc-samples", type=int, default=500)
    ap.add_argument("--eval-samples", type=int, default=10000)
    ap.add_argument("--max-iter", type=int, default=10)
    ap.add_argument("--out", default="half_ellipsoid_results.json")
    args = ap.parse_args()

    rows = []
    for seed in range(args.seeds):
        row = run_seed(seed, args.n, args.noise, args.mc_samples,
                       args.eval_samples, args.max_iter, args.sigma, args.rho)
        rows.append(row)
        print(f"seed {seed}: nll land {row['nll_land']:.3f} "
              f"ls {row['nll_ls']:.3f} gmm {row['nll_gmm']:.3f} "
              f"({row['fit_seconds']}s)", flush=True)

    med = {k: float(np.median([r[k] for r in rows]))
           for k in ("nll_land", "nll_ls", "nll_gmm")}
    denser = sum(r["measure_at_land_mean"] < r["measure_at_ls_mean"] for r in rows)
    summary = {
        "medians": med,
        "land_beats_ls": med["nll_land"] < med["nll_ls"],
        "land_beats_gmm": med["nll_land"] < med["nll_gmm"],
        "land_mean_denser_count": denser,
        "rows": rows,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(med, indent=2))
    print(f"model mean in denser region than LS mean: {denser}/{len(rows)} seeds")


if __name__ == "__main__":
    main()
