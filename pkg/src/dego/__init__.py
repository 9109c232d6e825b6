"""Efficient global optimization with Kriging, warped Kriging and deep GP surrogates."""

from .dgp import (
    DgpConfig,
    DgpLayer,
    DgpModel,
    DgpTrainConfig,
    PsiStats,
    TrainingFailed,
    elbo,
    init_dgp,
    predict_dgp_gaussian,
    predict_dgp_mc,
    psi_statistics,
    sparse_layer_bound,
    train_dgp,
)
from .doe import lhs
from .ego import EgoConfig, RunRecord, StudySummary, SurrogateSpec, inducing_schedule, repeat_study, run_ego
from .gp import Dataset, GpModel, GpTrainConfig, fit_gp, neg_log_marginal, predict_gp
from .infill import (
    AcquisitionSpec,
    Prediction,
    acquisition_value,
    ei_mc,
    ev_mc,
    expected_improvement,
    expected_violation,
    pi_mc,
    pof_mc,
    probability_of_feasibility,
    probability_of_improvement,
)
from .kernels import ArdPExpKernel, ArdSqExpKernel, KnotMapping, MappedKernel
from .problems import PROBLEMS, Problem, get_problem, quad_2d, standin_constraint, xiong_variant

__version__ = "0.1.0"
