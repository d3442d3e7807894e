"""Structural equation modelling for jump-diffusion processes observed at high frequency.

The package simulates a latent jump-diffusion factor system, estimates
candidate SEM covariance structures by thresholded quasi-likelihood, and
selects among them with the quasi-Akaike criterion QAIC.
"""
from .asymptotics import (
    AsymptoticInfo,
    asymptotic_info,
    check_identifiability,
    numerical_rank,
    population_h,
    sigma_jacobian,
    weight_matrix,
    y_function,
)
from .errors import (
    AllStartsFailed,
    ConfigError,
    DimensionMismatch,
    NoConvergedFits,
    NoKeptIncrements,
    NotPositiveDefinite,
    NotSymmetric,
    NumericalError,
    SemError,
    SingularPsi,
)
from .harness import (
    BiasResult,
    CampaignConfig,
    Candidate,
    McReport,
    NormalityResult,
    derive_seed,
    normality_experiment,
    qaic_bias_experiment,
    run_campaign,
    summarize,
)
from .matrix import duplication_matrix, duplication_pinv, unvech, vec, vech, vech_indices, vech_size
from .model import Dimensions, EntryBlock, Fixed, Free, ModelSpec, assemble_sigma, load_model, sigma_batch
from .qmle import (
    FitResult,
    IncrementSet,
    JumpFilterConfig,
    SelectionReport,
    fit,
    make_increments,
    population_fit,
    qaic,
    quasi_loglik,
    quasi_loglik_grad,
    random_starts,
    select,
)
from .simulate import (
    JumpSpec,
    ObservationPath,
    SamplingDesign,
    SdeSpec,
    TrueModelSpec,
    load_true_model,
    simulate_latent,
    simulate_observations,
    true_sigma,
)

__version__ = "0.1.0"
