"""Interpolant-based policy diffusion toolkit.

Policies that transport actions from an informative source policy to the
demonstrated action distribution with a learned stochastic-interpolant SDE,
plus DDPM/DDIM and residual baselines, sample-set metrics, and a checker for
the source-improvement bounds.
"""

from .baselines import DdimPolicy, ResidualPolicy
from .core import BridgerPolicy, FieldModel, SamplerConfig, TrainConfig
from .exceptions import ConfigError, DivergenceError, NotFittedError, ShapeError
from .interpolant import InterpolantSpec
from .metrics import emd, lipschitz_estimate, roughness
from .sources import CvaeSource, GaussianSource, MixtureSource, RingSource, make_source
from .tasks import CANONICAL_TASKS, TaskSpec, gen_data

__version__ = "0.1.0"

__all__ = [
    "BridgerPolicy",
    "CANONICAL_TASKS",
    "ConfigError",
    "CvaeSource",
    "DdimPolicy",
    "DivergenceError",
    "FieldModel",
    "GaussianSource",
    "InterpolantSpec",
    "MixtureSource",
    "NotFittedError",
    "ResidualPolicy",
    "RingSource",
    "SamplerConfig",
    "ShapeError",
    "TaskSpec",
    "TrainConfig",
    "emd",
    "gen_data",
    "lipschitz_estimate",
    "make_source",
    "roughness",
]
