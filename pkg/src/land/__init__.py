"""Locally adaptive normal distributions on a learned Riemannian metric.

The package learns a smoothly varying diagonal metric from data, computes
geodesics and exponential/logarithm maps under it, and fits Riemannian
normal distributions (single and mixture) by maximum likelihood with Monte
Carlo normalization. Baseline estimators (intrinsic least squares,
Riemannian K-means, Euclidean GMM), synthetic generators, and evaluation
metrics round out the experiment tooling; the `land` console script drives
everything from the command line.
"""

__version__ = "0.1.0"

from .baselines import (
    GaussianMixture,
    GmmConfig,
    IntrinsicEstimate,
    KMeansConfig,
    LsMixture,
    MeanConfig,
    gmm_fit,
    intrinsic_covariance,
    intrinsic_mean,
    ls_estimate,
    ls_mixture,
    riemannian_kmeans,
)
from .evaluation import (
    LabeledDataset,
    aic_bic,
    f_measure,
    gen_half_ellipsoid,
    gen_two_moons,
    half_ellipsoid_arc_length,
    half_ellipsoid_truth,
    mean_nll_under_truth,
    mixture_num_params,
)
from .geodesic import (
    BvpError,
    GeodesicCurve,
    GeodesicError,
    GeodesicSolverConfig,
    IvpError,
    ShootingResult,
    exp_map,
    exp_map_batch,
    geodesic_distance,
    log_map,
    log_map_batch,
)
from .metric import (
    ConstantMetric,
    LearnedMetric,
    MetricParams,
    default_rho,
    learn_metric,
    measure_density,
    metric_derivative,
    metric_tensor,
)
from .mixture import (
    LandMixture,
    MixtureFitResult,
    Responsibilities,
    e_step,
    em_fit,
    m_step_gradients,
    mixture_from_dict,
    mixture_log_density,
    mixture_sample,
    mixture_to_dict,
)
from .model import (
    FitConfig,
    FitError,
    FitResult,
    LandParams,
    McSamples,
    fit_mle,
    grad_a,
    grad_mu,
    log_density,
    log_density_batch,
    model_from_dict,
    model_to_dict,
    nll_objective,
    normalization_constant,
    sample,
)
from .parallel import get_threads, set_threads
from .rng import McStream, sample_stream, standard_normals

__all__ = [name for name in dir() if not name.startswith("_")]
