"""Off-policy evaluation from multiple logging policies under stratified sampling.

Estimate the value of an evaluation policy from logged bandit data where
each stratum was generated by a different, fixed-size logging policy.
Ships the inverse-propensity family, the general weighted control-variate
class, cross-fitted doubly robust estimators (with known or estimated
propensities), variance-minimizing control variates for stratified and
iid objectives, exact small-instance oracles, and a
classification-to-bandit benchmark pipeline.
"""

from .core import (
    DiscreteEnvironment,
    InvalidPolicyError,
    LoggedSample,
    OverlapViolationError,
    StratifiedDataset,
    Stratum,
    as_generator,
    policy_table,
    policy_value_exact,
    sample_iid_mixture,
    sample_stratified,
    value_function,
)
from .estimators import (
    check_constraint,
    cross_fit_estimate,
    dr_avg,
    dr_estimate,
    dr_estimated_propensity,
    dr_pw,
    gamma_estimate,
    is_avg,
    is_estimate,
    is_pw_feasible,
    phi,
    phi_scores,
    split_folds,
    weighted_is,
)
from .nuisance import BehaviorModel, FitConfig, QModel, fit_behavior, fit_q
from .policies import (
    GreedyPolicy,
    LinearSoftmaxPolicy,
    MixturePolicy,
    Policy,
    TabularPolicy,
    UniformPolicy,
    check_weak_overlap,
    check_whole_weak_overlap,
    load_policy,
    marginal_policy,
    save_policy,
)
from .variance import (
    QClass,
    efficiency_bound,
    empirical_variance_iid,
    empirical_variance_stratified,
    mrdr_estimate,
    mrdr_fit,
    smrdr_estimate,
    smrdr_fit,
    variance_objective,
)

__version__ = "0.1.0"
