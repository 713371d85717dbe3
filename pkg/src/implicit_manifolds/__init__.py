"""Density estimation on implicitly defined manifolds.

A manifold is learned as the zero set of a rank-regularised network, an
energy is trained on it by contrastive divergence with constrained Langevin
sampling, and models can be combined by union, intersection and translation.
"""

from .analytic import SphereMap, TorusMap
from .cebm import (ConstrainedModel, EnergyModel, EnergyTrainConfig, SampleBuffer, estimate_log_z,
                   log_density, normalize, train_energy)
from .clmc import ClmcConfig, ChainState, clmc_run, constrained_leapfrog, run_chains, tangent_project
from .compose import intersect, translate, union
from .errors import (ConvergenceWarning, InputShapeError, OffManifoldError, RankDeficiencyError,
                     SingularSystemError, TrainingDivergenceError)
from .mdf import MdfModel, MdfTrainConfig, mdf_loss, project_to_manifold, residual, train_mdf
from .netcore import GradientBundle, MlpModel, forward, jvp, param_grad, vjp
from .pushforward import (AutoencoderConfig, LatentEbmConfig, PushforwardModel, fit_pushforward,
                          pushforward_log_density)
from .solvers import AdamState, LbfgsConfig, adam_step, cg_solve, clip_grad_norm, lbfgs_minimize

__all__ = [
    "SphereMap", "TorusMap", "ConstrainedModel", "EnergyModel", "EnergyTrainConfig", "SampleBuffer",
    "estimate_log_z", "log_density", "normalize", "train_energy", "ClmcConfig", "ChainState", "clmc_run",
    "constrained_leapfrog", "run_chains", "tangent_project", "intersect", "translate", "union",
    "ConvergenceWarning", "InputShapeError", "OffManifoldError", "RankDeficiencyError",
    "SingularSystemError", "TrainingDivergenceError", "MdfModel", "MdfTrainConfig", "mdf_loss",
    "project_to_manifold", "residual", "train_mdf", "GradientBundle", "MlpModel", "forward", "jvp",
    "param_grad", "vjp", "AutoencoderConfig", "LatentEbmConfig", "PushforwardModel", "fit_pushforward",
    "pushforward_log_density", "AdamState", "LbfgsConfig", "adam_step", "cg_solve", "clip_grad_norm",
    "lbfgs_minimize",
]
