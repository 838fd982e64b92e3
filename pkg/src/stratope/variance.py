"""Variance functionals, the efficiency bound, and variance-minimizing control variates.

Two empirical variance objectives are available for the doubly-robust
score: the stratified one, ``sum_k rho_k var_{n_k}[phi]``, which matches
fixed stratum sizes, and the pooled one, ``var_n[phi]``, which targets
iid sampling.  Minimizing either over a bounded logistic-linear
hypothesis class yields the two variance-tailored control variates; both
use the same multi-start gradient-descent optimizer since the objectives
are nonconvex in the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    DiscreteEnvironment,
    OverlapViolationError,
    StratifiedDataset,
    Stratum,
    as_generator,
    policy_table,
    value_function,
)
from .estimators import ControlVariate, InverseMarginal, cross_fit_estimate, phi_scores
from .nuisance import FitConfig, QModel, _sigmoid, _with_intercept
from .policies import Policy

ScoreFn = Callable[[int, Stratum], np.ndarray]


def empirical_variance_stratified(
    data: StratifiedDataset, score: ScoreFn, bessel: bool = False
) -> float:
    """Proportion-weighted within-stratum variance of a per-sample score."""
    if np.any(data.sizes == 0):
        raise ValueError("every stratum must be nonempty")
    ddof = 1 if bessel else 0
    total = 0.0
    for k, stratum in enumerate(data.strata):
        values = np.asarray(score(k, stratum), dtype=float)
        total += (stratum.size / data.total) * float(np.var(values, ddof=ddof))
    return total


def empirical_variance_iid(
    data: StratifiedDataset, score: ScoreFn, bessel: bool = False
) -> float:
    """Variance of the score pooled over all samples, ignoring strata."""
    values = np.concatenate(
        [np.asarray(score(k, stratum), dtype=float) for k, stratum in enumerate(data.strata)]
    )
    return float(np.var(values, ddof=1 if bessel else 0))


def phi_score_fn(g: ControlVariate, pi_e: Policy, pi_star: Policy) -> ScoreFn:
    """Adapter: the doubly-robust score of each sample, per stratum."""

    def score(k: int, stratum: Stratum) -> np.ndarray:
        return phi_scores(stratum.contexts, stratum.actions, stratum.rewards, g, pi_e, pi_star)

    return score


def variance_objective(
    data: StratifiedDataset,
    g: ControlVariate,
    pi_e: Policy,
    pi_star: Policy,
    kind: str = "stratified",
) -> float:
    """Empirical variance of the doubly-robust score under either sampling view."""
    score = phi_score_fn(g, pi_e, pi_star)
    if kind == "stratified":
        return empirical_variance_stratified(data, score)
    if kind == "iid":
        return empirical_variance_iid(data, score)
    raise ValueError(f"unknown variance kind {kind!r}")


def efficiency_bound(
    env: DiscreteEnvironment,
    pi_e: Policy,
    loggers: Sequence[Policy],
    rho: Sequence[float],
) -> float:
    """Minimal variance (times n) attainable on this instance.

    Computed exactly by enumeration:
    ``E_pistar[(pi_e/pi_star)^2 sigma_r^2] + var_pS[v(s)]``.
    """
    rho = np.asarray(rho, dtype=float)
    pe = policy_table(pi_e, env)
    ps = np.zeros_like(pe)
    for w, logger_k in zip(rho, loggers):
        ps += w * policy_table(logger_k, env)
    if np.any((pe > 0) & (ps <= 0)):
        raise OverlapViolationError(
            "evaluation policy plays actions the marginal logging policy never plays"
        )
    sigma2 = env.reward_variance_table()
    with np.errstate(divide="ignore", invalid="ignore"):
        weighted = np.where(pe > 0, pe * pe / ps, 0.0) * sigma2
    first = float(env.context_probs @ weighted.sum(axis=1))
    v = value_function(env, pi_e)
    mean_v = float(env.context_probs @ v)
    second = float(env.context_probs @ ((v - mean_v) ** 2))
    return first + second


# ---------------------------------------------------------------------------
# SMRDR / MRDR: minimize an empirical variance objective over a
# logistic-linear control-variate class.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QClass:
    """Bounded logistic-linear hypothesis class for control variates.

    A parameter matrix theta of shape (n_actions, feature_dim + 1) maps to
    ``g(s, a) = r_max * sigmoid(theta_a . [x, 1])``, so members are bounded
    by r_max.  ``feature_indices`` restricts the class to a subset of the
    context features (the remaining ones are invisible to it), which is the
    standard way to study misspecification on these instances.
    """

    n_actions: int
    feature_dim: int
    r_max: float = 1.0
    feature_indices: tuple[int, ...] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        d = self.feature_dim if self.feature_indices is None else len(self.feature_indices)
        return (self.n_actions, d + 1)

    def project(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        if self.feature_indices is None:
            return contexts
        return contexts[:, list(self.feature_indices)]

    def values(self, theta: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        return self.r_max * _sigmoid(_with_intercept(self.project(contexts)) @ theta.T)

    def model(self, theta: np.ndarray) -> QModel:
        return _ProjectedQModel(
            np.asarray(theta, dtype=float),
            link="logistic",
            r_max=self.r_max,
            feature_indices=self.feature_indices,
        )


@dataclass(eq=False)
class _ProjectedQModel(QModel):
    """QModel over a feature subset; predicts like its QClass."""

    feature_indices: tuple[int, ...] | None = None

    def values(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        if self.feature_indices is not None:
            contexts = contexts[:, list(self.feature_indices)]
        return super().values(contexts)


@dataclass(frozen=True, eq=False)
class _StratumParts:
    """Quantities of one stratum that do not depend on theta."""

    design: np.ndarray  # (n_k, d+1)
    pe: np.ndarray  # (n_k, A)
    rows: np.ndarray  # arange(n_k)
    actions: np.ndarray
    ratio: np.ndarray  # (n_k,) pi_e / pi_star at the logged pairs
    coef: np.ndarray  # (n_k, A) pe - ratio * onehot, the dphi/dg coefficient
    rewards: np.ndarray
    weight: float  # rho_k, or 1 for the pooled objective


def _prepare_parts(
    data: StratifiedDataset, pi_e: Policy, pi_star: Policy, pooled: bool, qclass: QClass
) -> list[_StratumParts]:
    strata: list[tuple[Stratum, float]]
    if pooled:
        contexts, actions, rewards, _ = data.pooled()
        strata = [(Stratum(contexts, actions, rewards), 1.0)]
    else:
        rho = data.proportions
        strata = [(stratum, float(rho[k])) for k, stratum in enumerate(data.strata)]
    parts = []
    for stratum, weight in strata:
        rows = np.arange(stratum.size)
        pe = pi_e.prob_matrix(stratum.contexts)
        ps_logged = pi_star.prob_matrix(stratum.contexts)[rows, stratum.actions]
        pe_logged = pe[rows, stratum.actions]
        if np.any((pe_logged > 0) & (ps_logged <= 0)):
            raise OverlapViolationError("overlap violation on the logged support")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(pe_logged > 0, pe_logged / ps_logged, 0.0)
        coef = pe.copy()
        coef[rows, stratum.actions] -= ratio
        parts.append(
            _StratumParts(
                _with_intercept(qclass.project(stratum.contexts)),
                pe,
                rows,
                stratum.actions,
                ratio,
                coef,
                stratum.rewards,
                weight,
            )
        )
    return parts


def _objective_and_grad(
    theta: np.ndarray, qclass: QClass, parts: list[_StratumParts], l2: float
) -> tuple[float, np.ndarray]:
    """Weighted sum of per-part population variances of phi, with ridge term."""
    value = 0.0
    grad = np.zeros_like(theta)
    ones = None
    for part in parts:
        g = qclass.r_max * _sigmoid(part.design @ theta.T)
        gprime = g * (1.0 - g / qclass.r_max)  # d g / d z
        if ones is None or ones.shape[0] != g.shape[1]:
            ones = np.ones(g.shape[1])
        phi = part.ratio * (part.rewards - g[part.rows, part.actions]) + (part.pe * g) @ ones
        centered = phi - phi.mean()
        n_k = phi.shape[0]
        value += part.weight * float(centered @ centered) / n_k
        # d var / d theta_a = (2/n_k) sum_i centered_i * dphi_i/dtheta_a
        weighted = part.coef * gprime
        weighted *= centered[:, None]
        grad += part.weight * (2.0 / n_k) * (weighted.T @ part.design)
    penalty = theta.copy()
    penalty[:, -1] = 0.0
    value += 0.5 * l2 * float((penalty * penalty).sum())
    grad += l2 * penalty
    return value, grad


def _minimize_variance(
    data: StratifiedDataset,
    qclass: QClass,
    pi_e: Policy,
    pi_star: Policy,
    config: FitConfig,
    pooled: bool,
    n_starts: int = 3,
) -> tuple[QModel, float, np.ndarray]:
    parts = _prepare_parts(data, pi_e, pi_star, pooled, qclass)
    rng = as_generator(config.seed)
    starts = [np.zeros(qclass.shape)]
    starts += [rng.normal(scale=0.5, size=qclass.shape) for _ in range(n_starts - 1)]
    best_theta = None
    best_value = np.inf
    best_history = None
    for theta0 in starts:
        theta = theta0.copy()
        history = np.empty(config.iterations)
        for it in range(config.iterations):
            value, grad = _objective_and_grad(theta, qclass, parts, config.l2_penalty)
            if not np.isfinite(value):
                raise ValueError("variance objective is nonfinite (check overlap)")
            history[it] = value
            theta -= config.learning_rate * grad
        final, _ = _objective_and_grad(theta, qclass, parts, config.l2_penalty)
        if final < best_value:
            best_value = final
            best_theta = theta
            best_history = history
    model = qclass.model(best_theta)
    model.loss_history = best_history
    return model, best_value, best_theta


def smrdr_fit(
    data: StratifiedDataset,
    qclass: QClass,
    pi_e: Policy,
    pi_star: Policy,
    config: FitConfig = FitConfig(),
    n_starts: int = 3,
) -> QModel:
    """Control variate minimizing the stratified empirical variance of phi."""
    model, _, _ = _minimize_variance(data, qclass, pi_e, pi_star, config, pooled=False, n_starts=n_starts)
    return model


def mrdr_fit(
    data: StratifiedDataset,
    qclass: QClass,
    pi_e: Policy,
    pi_star: Policy,
    config: FitConfig = FitConfig(),
    n_starts: int = 3,
) -> QModel:
    """Control variate minimizing the pooled (iid) empirical variance of phi."""
    model, _, _ = _minimize_variance(data, qclass, pi_e, pi_star, config, pooled=True, n_starts=n_starts)
    return model


def smrdr_estimate(
    data: StratifiedDataset,
    qclass: QClass,
    pi_e: Policy,
    pi_star: Policy,
    config: FitConfig = FitConfig(),
    n_folds: int = 2,
    seed: int | np.random.Generator = 0,
    n_starts: int = 3,
) -> float:
    """Cross-fitted doubly robust estimate with the stratified-variance control variate."""
    h = InverseMarginal(pi_star)

    def fitter(train: StratifiedDataset):
        return h, smrdr_fit(train, qclass, pi_e, pi_star, config, n_starts)

    return cross_fit_estimate(data, n_folds, fitter, pi_e, seed)


def mrdr_estimate(
    data: StratifiedDataset,
    qclass: QClass,
    pi_e: Policy,
    pi_star: Policy,
    config: FitConfig = FitConfig(),
    n_folds: int = 2,
    seed: int | np.random.Generator = 0,
    n_starts: int = 3,
) -> float:
    """Cross-fitted doubly robust estimate with the pooled-variance control variate."""
    h = InverseMarginal(pi_star)

    def fitter(train: StratifiedDataset):
        return h, mrdr_fit(train, qclass, pi_e, pi_star, config, n_starts)

    return cross_fit_estimate(data, n_folds, fitter, pi_e, seed)
