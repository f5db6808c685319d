"""Maximum likelihood for diffusions via simulated likelihoods and kriging search."""

from .gp import DesignSet, GpHyper, GpState, fit_posterior_mode, kriging_mean, kriging_variance
from .models import ObservedSeries, SdeModel, ThetaBox, get_model, model_zoo
from .regions import lrt_region, rao_region
from .skbo import SkboConfig, SkboResult, run_skbo
from .smc import SmcConfig, loglik_estimate, transition_estimate

__version__ = "0.1.0"

__all__ = [
    "DesignSet",
    "GpHyper",
    "GpState",
    "ObservedSeries",
    "SdeModel",
    "SkboConfig",
    "SkboResult",
    "SmcConfig",
    "ThetaBox",
    "fit_posterior_mode",
    "get_model",
    "kriging_mean",
    "kriging_variance",
    "loglik_estimate",
    "lrt_region",
    "model_zoo",
    "rao_region",
    "run_skbo",
    "transition_estimate",
]
