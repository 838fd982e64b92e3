"""Exact ground truth on finite environments by enumeration.

For any per-sample score ``f(k, s, a, r)``, the estimator ``mean_n[f]`` is
linear in the samples, so its exact mean and variance under both sampling
schemes reduce to per-logger moments computed by summing over the finite
(context, action, reward) support:

* stratified (fixed sizes):  mean = sum_k rho_k E_k[f],
  variance = (1/n^2) sum_k n_k var_k[f];
* iid mixture (logger drawn with probability rho_k per sample):
  same mean, variance = (1/n) var of f under the joint (k, s, a, r) mixture.

Reward support must be finite: two-point scaled-Bernoulli or deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import DiscreteEnvironment, as_generator, policy_table
from .policies import GreedyPolicy, MixturePolicy, Policy, marginal_policy

# f(logger_id, context_ids (m,), contexts (m, d), actions (m,), rewards (m,)) -> (m,)
ScoreFunction = Callable[[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _support_grid(env: DiscreteEnvironment) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s_idx = np.repeat(np.arange(env.n_contexts), env.n_actions)
    a_idx = np.tile(np.arange(env.n_actions), env.n_contexts)
    return s_idx, a_idx, env.features[s_idx]


def _reward_branches(env: DiscreteEnvironment, s_idx, a_idx):
    q = env.q_table[s_idx, a_idx]
    if env.reward_noise == "deterministic":
        return [(q, np.ones_like(q))]
    p = q / env.r_max
    return [(np.zeros_like(q), 1.0 - p), (np.full_like(q, env.r_max), p)]


def logger_moments(
    env: DiscreteEnvironment, logger: Policy, logger_id: int, f: ScoreFunction
) -> tuple[float, float]:
    """Exact first moment and raw second moment of f under one logger."""
    s_idx, a_idx, contexts = _support_grid(env)
    pk = policy_table(logger, env)[s_idx, a_idx]
    base = env.context_probs[s_idx] * pk
    m1 = 0.0
    m2 = 0.0
    for rewards, rprob in _reward_branches(env, s_idx, a_idx):
        w = base * rprob
        mask = w > 0  # scores may be undefined off the logger's support
        vals = np.asarray(
            f(logger_id, s_idx[mask], contexts[mask], a_idx[mask], rewards[mask]), dtype=float
        )
        if not np.all(np.isfinite(vals)):
            raise ValueError("score function is nonfinite on the sampled support")
        m1 += float(w[mask] @ vals)
        m2 += float(w[mask] @ (vals * vals))
    return m1, m2


def exact_moments_stratified(
    env: DiscreteEnvironment,
    loggers: Sequence[Policy],
    sizes: Sequence[int],
    f: ScoreFunction,
) -> tuple[float, float]:
    """Exact (mean, variance) of ``mean_n[f]`` under fixed stratum sizes."""
    sizes = np.asarray(sizes, dtype=float)
    n = sizes.sum()
    mean = 0.0
    var = 0.0
    for k, logger_k in enumerate(loggers):
        m1, m2 = logger_moments(env, logger_k, k, f)
        mean += (sizes[k] / n) * m1
        var += sizes[k] * (m2 - m1 * m1)
    return mean, var / (n * n)


def exact_moments_iid(
    env: DiscreteEnvironment,
    loggers: Sequence[Policy],
    rho: Sequence[float],
    n: int,
    f: ScoreFunction,
) -> tuple[float, float]:
    """Exact (mean, variance) of ``mean_n[f]`` when each sample draws its logger."""
    rho = np.asarray(rho, dtype=float)
    m1_mix = 0.0
    m2_mix = 0.0
    for k, logger_k in enumerate(loggers):
        m1, m2 = logger_moments(env, logger_k, k, f)
        m1_mix += rho[k] * m1
        m2_mix += rho[k] * m2
    return m1_mix, (m2_mix - m1_mix * m1_mix) / n


# ---------------------------------------------------------------------------
# Score-function builders (closed-form definitions, no estimator code shared)
# ---------------------------------------------------------------------------


def _logged_ratio(pi_num: Policy, pi_den: Policy, contexts, actions) -> np.ndarray:
    rows = np.arange(actions.shape[0])
    num = pi_num.prob_matrix(contexts)[rows, actions]
    den = pi_den.prob_matrix(contexts)[rows, actions]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(num > 0, num / den, 0.0)


def is_score(pi_e: Policy, pi_star: Policy) -> ScoreFunction:
    """f = pi_e r / pi_star, the marginal importance-sampling score."""

    def f(k, context_ids, contexts, actions, rewards):
        return _logged_ratio(pi_e, pi_star, contexts, actions) * rewards

    return f


def weighted_is_score(pi_e: Policy, loggers: Sequence[Policy], lam, rho) -> ScoreFunction:
    """f = (lam_k / rho_k) pi_e r / pi_k, the simplex-weighted per-logger score."""
    lam = np.asarray(lam, dtype=float)
    rho = np.asarray(rho, dtype=float)

    def f(k, context_ids, contexts, actions, rewards):
        return (lam[k] / rho[k]) * _logged_ratio(pi_e, loggers[k], contexts, actions) * rewards

    return f


def gamma_score(
    pi_e: Policy, h_tables: np.ndarray, g_table: np.ndarray
) -> ScoreFunction:
    """f = h(k,s,a) pi_e (r - g(s,a)) + g(s, pi_e) for tabular (h, g).

    ``h_tables`` is (K, S, A) and ``g_table`` is (S, A), both indexed by
    context id, so any feature encoding works.
    """
    h_tables = np.asarray(h_tables, dtype=float)
    g_table = np.asarray(g_table, dtype=float)

    def f(k, context_ids, contexts, actions, rewards):
        rows = np.arange(actions.shape[0])
        pe = pi_e.prob_matrix(contexts)
        g_all = g_table[context_ids]
        h_logged = h_tables[k][context_ids, actions]
        direct = (pe * g_all).sum(axis=1)
        return h_logged * pe[rows, actions] * (rewards - g_all[rows, actions]) + direct

    return f


def phi_score(pi_e: Policy, pi_star: Policy, g_table: np.ndarray) -> ScoreFunction:
    """f = (pi_e/pi_star)(r - g) + g(s, pi_e), the doubly-robust score."""
    g_table = np.asarray(g_table, dtype=float)

    def f(k, context_ids, contexts, actions, rewards):
        rows = np.arange(actions.shape[0])
        pe = pi_e.prob_matrix(contexts)
        g_all = g_table[context_ids]
        ratio = _logged_ratio(pi_e, pi_star, contexts, actions)
        direct = (pe * g_all).sum(axis=1)
        return ratio * (rewards - g_all[rows, actions]) + direct

    return f


# ---------------------------------------------------------------------------
# Oracle quantities for the named inverse-propensity estimators
# ---------------------------------------------------------------------------


def per_stratum_is_variances(
    env: DiscreteEnvironment, loggers: Sequence[Policy], pi_e: Policy
) -> np.ndarray:
    """Exact variance of the per-logger IS score under each logger."""
    out = []
    for k, logger_k in enumerate(loggers):

        def f(kk, context_ids, contexts, actions, rewards, _logger=logger_k):
            return _logged_ratio(pi_e, _logger, contexts, actions) * rewards

        m1, m2 = logger_moments(env, logger_k, k, f)
        out.append(m2 - m1 * m1)
    return np.asarray(out)


def oracle_lambda_star(
    env: DiscreteEnvironment,
    loggers: Sequence[Policy],
    sizes: Sequence[int],
    pi_e: Policy,
    var_floor: float = 1e-12,
) -> np.ndarray:
    """Variance-minimizing simplex weights from exact per-stratum variances."""
    variances = np.maximum(per_stratum_is_variances(env, loggers, pi_e), var_floor)
    raw = np.asarray(sizes, dtype=float) / variances
    return raw / raw.sum()


def variance_is(env, loggers, sizes, pi_e, pi_star) -> float:
    return exact_moments_stratified(env, loggers, sizes, is_score(pi_e, pi_star))[1]


def variance_weighted_is(env, loggers, sizes, pi_e, lam) -> float:
    sizes = np.asarray(sizes, dtype=float)
    rho = sizes / sizes.sum()
    f = weighted_is_score(pi_e, loggers, lam, rho)
    return exact_moments_stratified(env, loggers, sizes, f)[1]


# ---------------------------------------------------------------------------
# Instance search: variance ordering of IS vs precision-weighted IS flips
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DilemmaInstance:
    """A small environment where one of IS / IS-PW strictly beats the other."""

    env: DiscreteEnvironment
    loggers: tuple[Policy, ...]
    pi_e: Policy
    sizes: tuple[int, ...]
    lambda_star: tuple[float, ...]
    var_is: float
    var_is_pw: float

    def to_record(self) -> dict:
        """JSON-serializable description for fixtures and reports."""
        return {
            "context_probs": self.env.context_probs.tolist(),
            "q_table": self.env.q_table.tolist(),
            "reward_noise": self.env.reward_noise,
            "r_max": self.env.r_max,
            "loggers": [
                {"alpha": pol.alpha, "greedy_action": int(np.argmax(pol.base.scores[:, 0]))}
                for pol in self.loggers
            ],
            "pi_e_alpha": self.pi_e.alpha,
            "pi_e_greedy_action": int(np.argmax(self.pi_e.base.scores[:, 0])),
            "sizes": [int(s) for s in self.sizes],
            "lambda_star": [float(v) for v in self.lambda_star],
            "var_is": float(self.var_is),
            "var_is_pw": float(self.var_is_pw),
        }


@dataclass(frozen=True)
class DilemmaSearchConfig:
    """Coarse exhaustive grid; first instance clearing the margin wins.

    ``relative_margin`` demands a clear separation of the two variances so
    that a Monte Carlo replication study can confirm the ordering; it also
    excludes the degenerate identical-logger case, where both estimators
    coincide.
    """

    n_contexts: int = 2
    n_actions: int = 2
    q_grid: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    logger_alphas: tuple[float, ...] = (0.1, 0.5, 0.9)
    pi_e_alpha: float = 0.8
    sizes: tuple[int, ...] = (4, 4)
    relative_margin: float = 0.05


def _point_mass_greedy(action: int, n_actions: int) -> GreedyPolicy:
    scores = np.zeros((n_actions, 1))
    scores[action, 0] = 1.0
    return GreedyPolicy(scores=scores)


def find_dilemma_instances(
    config: DilemmaSearchConfig = DilemmaSearchConfig(),
) -> tuple[DilemmaInstance, DilemmaInstance]:
    """Search a coarse grid for both orderings of var[IS] vs var[IS-PW].

    Returns (instance where IS wins, instance where IS-PW wins); raises if
    the grid is exhausted before both directions are found.
    """
    n_cells = config.n_contexts * config.n_actions
    p_s = np.full(config.n_contexts, 1.0 / config.n_contexts)
    # constant feature so mixture-of-greedy policies see a 1-d context
    features = np.ones((config.n_contexts, 1))
    pi_e = MixturePolicy(config.pi_e_alpha, _point_mass_greedy(0, config.n_actions))
    sizes = np.asarray(config.sizes)
    rho = sizes / sizes.sum()

    is_wins = None
    pw_wins = None
    logger_dirs = [(0, 0), (0, 1)] if config.n_actions > 1 else [(0, 0)]
    for q_cells in itertools.product(config.q_grid, repeat=n_cells):
        q_table = np.asarray(q_cells).reshape(config.n_contexts, config.n_actions)
        env = DiscreteEnvironment(p_s, q_table, features=features)
        for a1, a2 in logger_dirs:
            for alpha1, alpha2 in itertools.product(config.logger_alphas, repeat=2):
                loggers = (
                    MixturePolicy(alpha1, _point_mass_greedy(a1, config.n_actions)),
                    MixturePolicy(alpha2, _point_mass_greedy(a2, config.n_actions)),
                )
                pi_star = marginal_policy(loggers, rho)
                v_is = variance_is(env, loggers, sizes, pi_e, pi_star)
                lam = oracle_lambda_star(env, loggers, sizes, pi_e)
                v_pw = variance_weighted_is(env, loggers, sizes, pi_e, lam)
                margin = config.relative_margin * max(v_is, v_pw)
                if is_wins is None and v_is < v_pw - margin:
                    is_wins = DilemmaInstance(
                        env, loggers, pi_e, tuple(config.sizes), tuple(lam), v_is, v_pw
                    )
                elif pw_wins is None and v_pw < v_is - margin:
                    pw_wins = DilemmaInstance(
                        env, loggers, pi_e, tuple(config.sizes), tuple(lam), v_is, v_pw
                    )
                if is_wins is not None and pw_wins is not None:
                    return is_wins, pw_wins
    raise RuntimeError("grid exhausted without finding both variance orderings")


def monte_carlo_is_variances(
    instance: DilemmaInstance, n_reps: int, seed: int | np.random.Generator
) -> tuple[float, float]:
    """Sample variances of IS and IS-PW over replicated datasets.

    Fully vectorized over replications; memory scales with
    ``n_reps * sum(sizes)``.
    """
    rng = as_generator(seed)
    env = instance.env
    sizes = instance.sizes
    n = sum(sizes)
    pi_star = marginal_policy(instance.loggers, np.asarray(sizes) / n)
    pe = policy_table(instance.pi_e, env)
    ps = policy_table(pi_star, env)
    p_cells_success = (env.q_table / env.r_max).ravel()

    is_sum = np.zeros(n_reps)
    pw_est = np.zeros(n_reps)
    for k, (logger_k, n_k) in enumerate(zip(instance.loggers, sizes)):
        pk = policy_table(logger_k, env)
        cell_probs = (env.context_probs[:, None] * pk).ravel()
        w_is = np.where(pe > 0, pe / ps, 0.0).ravel()
        with np.errstate(divide="ignore", invalid="ignore"):
            w_k = np.where(pe > 0, pe / pk, 0.0).ravel()
        cells = rng.choice(cell_probs.size, size=(n_reps, n_k), p=cell_probs)
        rewards = env.r_max * (rng.random((n_reps, n_k)) < p_cells_success[cells])
        is_sum += (w_is[cells] * rewards).sum(axis=1)
        pw_est += instance.lambda_star[k] * (w_k[cells] * rewards).mean(axis=1)
    return float(np.var(is_sum / n)), float(np.var(pw_est))
