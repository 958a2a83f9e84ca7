"""Selective inference for component-wise L2-Boosting."""

from .baselearner import (
    BaseLearner,
    LearnerKind,
    SplineConfig,
    build_difference_penalty,
    build_pspline_basis,
    fit_learner,
    group_learner,
    hat_matrix,
    lambda_for_df,
    linear_learner,
    spline_deviation_learner,
    spline_learner,
)
from .boosting import BoostConfig, BoostFit, boost_fit, estimate_sigma, selection_set
from .oracle import CVOracle, FixedStopOracle, PathSignOracle
from .polyhedron import (
    PathCertificate,
    build_gamma,
    polyhedron_pvalue,
    trunc_gauss_cdf,
    truncation_limits,
    upsilon,
)
from .sampler import (
    InferenceResult,
    TestSpec,
    effective_sample_size,
    selective_inference,
    test_matrix_group,
    test_vector_linear,
)
from .stopping import assign_folds, cv_choose_mstop, pipeline_select

__version__ = "0.1.0"
