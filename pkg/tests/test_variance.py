import numpy as np
import pytest

import stratope as sp
from stratope.core import OverlapViolationError, StratifiedDataset, Stratum
from stratope.estimators import TableControlVariate, is_estimate
from stratope.nuisance import FitConfig
from stratope.policies import TabularPolicy, UniformPolicy, marginal_policy
from stratope.variance import (
    QClass,
    _objective_and_grad,
    _prepare_parts,
    efficiency_bound,
    empirical_variance_iid,
    empirical_variance_stratified,
    mrdr_fit,
    phi_score_fn,
    smrdr_estimate,
    smrdr_fit,
    variance_objective,
)


def dataset_from_scores(*stratum_scores):
    """Strata whose rewards are the wanted scores (uniform policies make w=1)."""
    strata = []
    for scores in stratum_scores:
        scores = np.asarray(scores, dtype=float)
        n = scores.shape[0]
        strata.append(Stratum(np.tile(np.eye(2)[0], (n, 1)), np.zeros(n, dtype=int), scores))
    return StratifiedDataset(tuple(strata))


def reward_score(k, stratum):
    return stratum.rewards


class TestEmpiricalVariances:
    def test_constant_scores_give_zero(self):
        data = dataset_from_scores([2.0, 2.0], [2.0, 2.0, 2.0])
        assert empirical_variance_stratified(data, reward_score) == pytest.approx(0.0)
        assert empirical_variance_iid(data, reward_score) == pytest.approx(0.0)

    def test_single_stratum_is_population_variance(self):
        data = dataset_from_scores([0.0, 1.0, 2.0])
        assert empirical_variance_stratified(data, reward_score) == pytest.approx(2.0 / 3.0)

    def test_hand_computed_stratified_value(self):
        data = dataset_from_scores([0.0, 2.0], [1.0, 1.0])
        assert empirical_variance_stratified(data, reward_score) == pytest.approx(0.5)

    def test_hand_computed_pooled_value(self):
        data = dataset_from_scores([0.0, 2.0], [1.0, 1.0])
        assert empirical_variance_iid(data, reward_score) == pytest.approx(0.5)

    def test_between_stratum_spread_only_hits_pooled(self):
        data = dataset_from_scores([0.0, 2.0], [3.0, 3.0])
        assert empirical_variance_stratified(data, reward_score) == pytest.approx(0.5)
        assert empirical_variance_iid(data, reward_score) == pytest.approx(1.5)

    def test_empty_stratum_rejected(self):
        data = dataset_from_scores([1.0], [])
        with pytest.raises(ValueError):
            empirical_variance_stratified(data, reward_score)


class TestEfficiencyBound:
    def test_deterministic_rewards_and_flat_value_give_zero(self):
        env = sp.DiscreteEnvironment([0.5, 0.5], [[0.4, 0.4], [0.4, 0.4]], reward_noise="deterministic")
        pol = UniformPolicy(2)
        assert efficiency_bound(env, pol, [pol], [1.0]) == pytest.approx(0.0, abs=1e-15)

    def test_toy_uniform_value(self, toy_env, uniform2):
        assert efficiency_bound(toy_env, uniform2, [uniform2, uniform2], [0.5, 0.5]) == pytest.approx(0.2)

    def test_identity_weights_add_noise_and_value_spread(self):
        # equal evaluation and logging policies with constant reward noise
        env = sp.DiscreteEnvironment([0.5, 0.5], [[0.3, 0.7], [0.7, 0.3]])
        point = TabularPolicy([[1.0, 0.0], [1.0, 0.0]])
        # sigma^2 = 0.21 everywhere; v = (0.3, 0.7) so var[v] = 0.04
        assert efficiency_bound(env, point, [point], [1.0]) == pytest.approx(0.25)

    def test_overlap_violation_rejected(self, toy_env):
        pi_e = TabularPolicy([[1.0, 0.0], [1.0, 0.0]])
        logger = TabularPolicy([[0.0, 1.0], [0.0, 1.0]])
        with pytest.raises(OverlapViolationError):
            efficiency_bound(toy_env, pi_e, [logger], [1.0])


@pytest.fixture
def smrdr_fixture(toy_env, toy_loggers, uniform2):
    data = sp.sample_stratified(toy_env, toy_loggers, [150, 250], seed=13)
    pi_star = marginal_policy(toy_loggers, data.proportions)
    return data, uniform2, pi_star


class TestVarianceOptimizers:
    def test_descent_improves_on_zero_init(self, smrdr_fixture):
        data, pi_e, pi_star = smrdr_fixture
        qc = QClass(2, 2)
        cfg = FitConfig(learning_rate=0.3, iterations=200, l2_penalty=1e-6, seed=0)
        model = smrdr_fit(data, qc, pi_e, pi_star, cfg)
        at_zero = variance_objective(data, qc.model(np.zeros(qc.shape)), pi_e, pi_star)
        fitted = variance_objective(data, model, pi_e, pi_star)
        assert fitted <= at_zero + 1e-12

    def test_objective_history_non_increasing_at_small_step(self, smrdr_fixture):
        data, pi_e, pi_star = smrdr_fixture
        cfg = FitConfig(learning_rate=0.05, iterations=300, l2_penalty=1e-6, seed=0)
        model = smrdr_fit(data, QClass(2, 2), pi_e, pi_star, cfg, n_starts=1)
        assert np.all(np.diff(model.loss_history) <= 1e-10)

    def test_single_stratum_objectives_coincide(self, toy_env, uniform2):
        logger = TabularPolicy([[0.6, 0.4], [0.4, 0.6]])
        data = sp.sample_stratified(toy_env, [logger], [200], seed=3)
        cfg = FitConfig(learning_rate=0.3, iterations=200, l2_penalty=1e-6, seed=0)
        qc = QClass(2, 2)
        m_s = smrdr_fit(data, qc, uniform2, logger, cfg)
        m_m = mrdr_fit(data, qc, uniform2, logger, cfg)
        o_s = variance_objective(data, m_s, uniform2, logger, "stratified")
        o_m = variance_objective(data, m_m, uniform2, logger, "stratified")
        assert o_s == pytest.approx(o_m, abs=1e-8)

    def test_stratified_objective_prefers_stratified_fit(self, toy_env, uniform2):
        # loggers with very different action laws separate the two objectives
        l1 = TabularPolicy([[0.9, 0.1], [0.9, 0.1]])
        l2 = TabularPolicy([[0.1, 0.9], [0.1, 0.9]])
        data = sp.sample_stratified(toy_env, [l1, l2], [80, 320], seed=21)
        pi_star = marginal_policy([l1, l2], data.proportions)
        cfg = FitConfig(learning_rate=0.5, iterations=300, l2_penalty=1e-6, seed=1)
        qc = QClass(2, 2)
        m_s = smrdr_fit(data, qc, uniform2, pi_star, cfg)
        m_m = mrdr_fit(data, qc, uniform2, pi_star, cfg)
        o_s = variance_objective(data, m_s, uniform2, pi_star, "stratified")
        o_m = variance_objective(data, m_m, uniform2, pi_star, "stratified")
        assert o_s <= o_m + 1e-12

    def test_objective_gradients_match_finite_differences(self, smrdr_fixture, rng):
        data, pi_e, pi_star = smrdr_fixture
        qc = QClass(2, 2)
        for pooled in (False, True):
            parts = _prepare_parts(data, pi_e, pi_star, pooled, qc)
            for _ in range(3):
                theta = rng.normal(scale=0.8, size=qc.shape)
                _, grad = _objective_and_grad(theta, qc, parts, 1e-3)
                fd = np.zeros_like(theta)
                eps = 1e-5
                for idx in np.ndindex(*theta.shape):
                    tp, tm = theta.copy(), theta.copy()
                    tp[idx] += eps
                    tm[idx] -= eps
                    fd[idx] = (
                        _objective_and_grad(tp, qc, parts, 1e-3)[0]
                        - _objective_and_grad(tm, qc, parts, 1e-3)[0]
                    ) / (2 * eps)
                assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-4

    def test_shift_invariance_only_under_identical_policies(self, toy_env, uniform2, toy_loggers):
        data = sp.sample_stratified(toy_env, toy_loggers, [50, 50], seed=2)
        g = TableControlVariate(toy_env.q_table)
        g_shift = TableControlVariate(toy_env.q_table + 0.37)
        # identical policies: the ratio is 1 at every logged pair, shifts cancel
        same = variance_objective(data, g, uniform2, uniform2)
        same_shift = variance_objective(data, g_shift, uniform2, uniform2)
        assert same == pytest.approx(same_shift, abs=1e-12)
        # distinct policies: no cancellation in general
        pi_star = marginal_policy(toy_loggers, data.proportions)
        apart = variance_objective(data, g, uniform2, pi_star)
        apart_shift = variance_objective(data, g_shift, uniform2, pi_star)
        assert abs(apart - apart_shift) > 1e-6

    def test_nonfinite_objective_rejected(self, toy_env):
        pi_e = TabularPolicy([[1.0, 0.0], [1.0, 0.0]])
        pi_star = TabularPolicy([[0.0, 1.0], [0.0, 1.0]])
        stratum = Stratum(np.eye(2)[[0, 1]], np.array([0, 0]), np.array([1.0, 0.0]))
        data = StratifiedDataset((stratum,))
        with pytest.raises((OverlapViolationError, ValueError)):
            smrdr_fit(data, QClass(2, 2), pi_e, pi_star, FitConfig(iterations=5))


class TestCrossFitEstimates:
    def test_monte_carlo_mean_near_value(self, toy_env, uniform2, toy_loggers):
        pi_star = marginal_policy(toy_loggers, [0.5, 0.5])
        cfg = FitConfig(learning_rate=0.5, iterations=120, l2_penalty=1e-5, seed=0)
        qc = QClass(2, 2)
        values = np.empty(300)
        for m in range(values.size):
            data = sp.sample_stratified(toy_env, toy_loggers, [30, 30], seed=60_000 + m)
            values[m] = smrdr_estimate(data, qc, uniform2, pi_star, cfg, n_folds=2, seed=m, n_starts=1)
        assert abs(values.mean() - 0.5) < 3 * values.std(ddof=1) / np.sqrt(values.size)

    def test_replication_variance_near_bound_when_class_contains_q(
        self, toy_env, uniform2, toy_loggers
    ):
        # one-hot contexts: the logistic-linear class contains the true table
        n = 5000
        pi_star = marginal_policy(toy_loggers, [0.5, 0.5])
        vstar = efficiency_bound(toy_env, uniform2, toy_loggers, [0.5, 0.5])
        cfg = FitConfig(learning_rate=1.2, iterations=250, l2_penalty=1e-7, seed=0)
        qc = QClass(2, 2)
        values = np.empty(400)
        for m in range(values.size):
            data = sp.sample_stratified(toy_env, toy_loggers, [n // 2, n // 2], seed=80_000 + m)
            values[m] = smrdr_estimate(data, qc, uniform2, pi_star, cfg, n_folds=2, seed=m, n_starts=1)
        assert n * values.var() == pytest.approx(vstar, rel=0.15)
