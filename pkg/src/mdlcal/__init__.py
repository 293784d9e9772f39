"""Calibration, refinement and max-entropy predictors over sets of finite distributions."""

__version__ = "0.1.0"

from .dist import (
    DistributionError,
    FeatureSpace,
    FiniteJoint,
    LabelSpace,
    Predictor,
    SpaceMismatch,
    WeightNotSimplex,
    ZeroMassFeature,
    bayes_predictor,
    conditional_y_given_x,
    marginal_x,
    marginal_y,
    mix,
)
from .scoring import BrierLoss, CostMatrix, LogLoss, ProperLoss, bregman, entropy, expected_loss, loss, make_loss
from .decomposition import Decomposition, calibration_error, decompose, group_by_forecast, refinement, risk
from .envelopes import (
    BisectionFailure,
    ConvexHullEnvelope,
    CVaREnvelope,
    DivergenceBallEnvelope,
    Envelope,
    divergence,
    generalized_bayes_rule,
    make_envelope,
)
from .solver import (
    NotConverged,
    SaddleCertificate,
    SolveResult,
    SolverOptions,
    expected_gen_entropy,
    minimax_game,
    solve_max_entropy,
    verify_saddle,
)
from .audit import (
    AuditReport,
    AuditRow,
    audit_envelope,
    disparity_curve,
    fit_temperature,
    lipschitz_check,
    tradeoff_ledger,
)
from .decision import (
    DecisionRule,
    NotCalibrated,
    ThresholdSpec,
    induced_rule,
    threshold_from_costs,
    verify_avg_optimality,
    verify_worstcase_optimality,
)
