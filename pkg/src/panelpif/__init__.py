"""Likelihood-based inference for panels of partially observed Markov processes."""

__version__ = "0.1.0"

from .core import (CovariateTable, DomainError, PanelData, ParameterSet, Transform, UnitData,
                   UnitModel, from_estimation_scale, to_estimation_scale, unit_parameters,
                   validate_panel)
from .likelihood import (ReplicateMatrix, combine_mean_of_products, combine_product_of_means,
                         jackknife_se, replicated_eval, variance_mean_of_products,
                         variance_product_of_means)
from .models import default_parameters, get_model, simulate_panel
from .mcap import McapError, McapResult, mcap, profile_design
from .pif import (CoolingSchedule, MarginalSettings, PerturbationPolicy, PifResult, SearchSettings,
                  Swarm, marginal_refine, multi_start, perturb, pif_run)
from .smc import (FilterOptions, FilterResult, FilteringError, effective_sample_size, log_mean_exp,
                  particle_filter, resample_multinomial, resample_systematic)

__all__ = [
    "CoolingSchedule", "CovariateTable", "DomainError", "FilterOptions", "FilterResult",
    "FilteringError", "MarginalSettings", "McapError", "McapResult", "PanelData", "ParameterSet",
    "PerturbationPolicy", "PifResult", "ReplicateMatrix", "SearchSettings", "Swarm", "Transform",
    "UnitData", "UnitModel", "combine_mean_of_products", "combine_product_of_means",
    "default_parameters", "effective_sample_size", "from_estimation_scale", "get_model", "jackknife_se", "log_mean_exp", "marginal_refine",
    "mcap", "multi_start", "particle_filter", "perturb", "pif_run", "profile_design",
    "replicated_eval", "resample_multinomial", "resample_systematic", "simulate_panel", "to_estimation_scale",
    "unit_parameters", "validate_panel", "variance_mean_of_products", "variance_product_of_means",
]
