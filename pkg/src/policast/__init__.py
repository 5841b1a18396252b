"""Hierarchical GP epidemic fatality forecasting under policy scenarios."""

from .data import (
    Dataset,
    IngestConfig,
    PolicyTimeline,
    RegionRecord,
    aggregate_regions,
    impute_features,
    load_dataset,
    save_dataset,
    stringency_index,
)
from .forecast import (
    ForecastResult,
    ScenarioSpec,
    aggregate_forecasts,
    baseline_forecast,
    counterfactual_shift,
    cumulative_error,
    stringency_regression,
)
from .gp import GpPosterior, KernelSpec, gp_posterior, gp_predict, kernel_eval, multi_output_gp
from .model import ModelConfig, RegionLatents, joint_log_density, lower_layer_prior, transform_latents
from .seir import SeirParams, SeirState, SeirTrajectory, integrate_euler, reproduction_number, seir_derivatives
from .svi import (
    PosteriorModel,
    TrainReport,
    VariationalParams,
    elbo_estimate,
    elbo_gradient,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
