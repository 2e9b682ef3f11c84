"""Spectral estimation, plug-in filtering/smoothing and error audits for
hidden Markov models with nonparametric emission densities on [0, 1]."""

from .bases import BasisSpec, CoeffVec, eta3, eval_basis, project_density, reconstruct
from .errors import (
    CapabilityError,
    DiagonalizationError,
    DimensionError,
    DomainError,
    EstimationError,
    InsufficientDataError,
    NPHMMError,
    RankDeficiencyError,
    StructureError,
)
from .evaluation import align, audit, emission_l2_risk, prop1_bound, prop2_bound, rate_study
from .inference import (
    backward_smooth,
    forward_filter,
    oracle_posteriors,
    plugin_posteriors,
    tv_distance,
)
from .model import (
    HmmSpec,
    c_star,
    c_star_constant,
    markov_constants,
    population_moments,
    population_moments_for,
    sample_trajectory,
    section4_hmm,
)
from .spectral import MomentSet, SpectralEstimate, empirical_moments, estimate, fit

__version__ = "0.1.0"
