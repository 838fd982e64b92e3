"""Point estimators of the evaluation-policy value on stratified logged data.

The general form is the weighted control-variate estimator

    mean_i [ h(k_i, s_i, a_i) * pi_e(a_i|s_i) * (r_i - g(s_i, a_i)) + g(s_i, pi_e) ]

over all pooled samples, where the weight function ``h`` must satisfy

    sum_k rho_k * pi_k(a|s) * h(k, s, a) = 1   wherever pi_e(a|s) > 0

for the estimate to be unbiased.  Inverse-propensity weighting, its
per-stratum average, precision-weighted combinations, and the
doubly-robust family are all instances; the named estimators below
therefore share one scoring code path, which makes the subclass
identities hold bit-for-bit.

Convention: where ``pi_e(a|s) = 0`` the weighted residual term is defined
as 0, whatever ``h`` evaluates to there.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import (
    DiscreteEnvironment,
    OverlapViolationError,
    StratifiedDataset,
    Stratum,
    as_generator,
    policy_table,
)
from .policies import Policy

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
PROPENSITY_FLOOR = 1e-6
CONSTRAINT_ATOL = 1e-9


class ControlVariate(Protocol):
    """Anything exposing per-(context, action) values as an (n, A) matrix."""

    def values(self, contexts: np.ndarray) -> np.ndarray: ...


class WeightFunction(Protocol):
    """Per-logger weights h(k, s, a), evaluated as an (n, A) matrix per stratum."""

    def values(self, logger_id: int, contexts: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ZeroControlVariate:
    n_actions: int

    def values(self, contexts: np.ndarray) -> np.ndarray:
        return np.zeros((np.atleast_2d(contexts).shape[0], self.n_actions))


@dataclass(frozen=True, eq=False)
class TableControlVariate:
    """g(s, a) read from a table; contexts must be one-hot indicators."""

    table: np.ndarray  # (n_contexts, n_actions)

    def values(self, contexts: np.ndarray) -> np.ndarray:
        return np.atleast_2d(contexts) @ self.table


@dataclass(frozen=True)
class PolicyControlVariate:
    """g given by a fitted reward model or any object with a values() matrix."""

    model: ControlVariate

    def values(self, contexts: np.ndarray) -> np.ndarray:
        return self.model.values(contexts)


@dataclass(frozen=True)
class InverseMarginal:
    """h = 1 / pi_star(a|s), independent of the logger identity."""

    pi_star: Policy
    floor: float = 0.0  # > 0 only for estimated propensities

    def values(self, logger_id: int, contexts: np.ndarray) -> np.ndarray:
        p = self.pi_star.prob_matrix(contexts)
        if self.floor > 0.0:
            p = np.maximum(p, self.floor)
        with np.errstate(divide="ignore"):
            return 1.0 / p


@dataclass(frozen=True)
class InversePerLogger:
    """h(k, ., .) = 1 / pi_k(a|s)."""

    loggers: tuple[Policy, ...]
    floor: float = 0.0

    def values(self, logger_id: int, contexts: np.ndarray) -> np.ndarray:
        p = self.loggers[logger_id].prob_matrix(contexts)
        if self.floor > 0.0:
            p = np.maximum(p, self.floor)
        with np.errstate(divide="ignore"):
            return 1.0 / p


@dataclass(frozen=True, eq=False)
class SimplexWeighted:
    """h(k, ., .) = lam_k / (rho_k * pi_k(a|s)) for simplex weights lam.

    Turns the general estimator into the convex combination of per-stratum
    inverse-propensity estimates with weights lam.
    """

    loggers: tuple[Policy, ...]
    lam: np.ndarray
    rho: np.ndarray
    floor: float = 0.0

    def values(self, logger_id: int, contexts: np.ndarray) -> np.ndarray:
        p = self.loggers[logger_id].prob_matrix(contexts)
        if self.floor > 0.0:
            p = np.maximum(p, self.floor)
        with np.errstate(divide="ignore"):
            return self.lam[logger_id] / (self.rho[logger_id] * p)


@dataclass(frozen=True, eq=False)
class TableWeightFunction:
    """h read from per-logger tables (K, S, A); contexts must be one-hot."""

    tables: np.ndarray

    def values(self, logger_id: int, contexts: np.ndarray) -> np.ndarray:
        return np.atleast_2d(contexts) @ self.tables[logger_id]


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def phi(sample, g: ControlVariate, pi_e: Policy, pi_star: Policy) -> float:
    """Doubly-robust score of one logged sample.

    ``(pi_e/pi_star)(r - g(s,a)) + g(s, pi_e)``; the ratio term is 0 when
    ``pi_e(a|s) = 0``, and an overlap violation is raised when
    ``pi_star(a|s) = 0 < pi_e(a|s)``.
    """
    contexts = np.atleast_2d(np.asarray(sample.context, dtype=float))
    scores = phi_scores(
        contexts, np.array([sample.action]), np.array([sample.reward]), g, pi_e, pi_star
    )
    return float(scores[0])


def phi_scores(
    contexts: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    g: ControlVariate,
    pi_e: Policy,
    pi_star: Policy,
) -> np.ndarray:
    """Vectorized doubly-robust scores for a batch of logged samples."""
    rows = np.arange(actions.shape[0])
    pe = pi_e.prob_matrix(contexts)
    ps_logged = pi_star.prob_matrix(contexts)[rows, actions]
    pe_logged = pe[rows, actions]
    bad = (pe_logged > 0) & (ps_logged <= 0)
    if np.any(bad):
        raise OverlapViolationError(
            f"evaluation policy plays {int(bad.sum())} logged action(s) the marginal "
            "logging policy never plays"
        )
    gvals = g.values(contexts)
    direct = (pe * gvals).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pe_logged > 0, pe_logged / ps_logged, 0.0)
    return ratio * (rewards - gvals[rows, actions]) + direct


def _stratum_scores(
    k: int, stratum: Stratum, h: WeightFunction, g: ControlVariate, pi_e: Policy
) -> np.ndarray:
    rows = np.arange(stratum.size)
    pe = pi_e.prob_matrix(stratum.contexts)
    pe_logged = pe[rows, stratum.actions]
    gvals = g.values(stratum.contexts)
    if not np.all(np.isfinite(gvals)):
        raise ValueError(f"control variate is nonfinite on stratum {k}")
    hvals = h.values(k, stratum.contexts)[rows, stratum.actions]
    active = pe_logged > 0
    if not np.all(np.isfinite(hvals[active])):
        raise OverlapViolationError(
            f"weight function is nonfinite at a logged point of stratum {k} "
            "(likely an overlap violation)"
        )
    direct = (pe * gvals).sum(axis=1)
    residual = np.zeros(stratum.size)
    residual[active] = (
        hvals[active] * pe_logged[active] * (stratum.rewards - gvals[rows, stratum.actions])[active]
    )
    return residual + direct


def gamma_estimate(
    data: StratifiedDataset, h: WeightFunction, g: ControlVariate, pi_e: Policy
) -> float:
    """Weighted control-variate estimate with explicit (h, g)."""
    scores = np.concatenate(
        [_stratum_scores(k, stratum, h, g, pi_e) for k, stratum in enumerate(data.strata)]
    )
    return float(np.mean(scores))


def check_constraint(
    h: WeightFunction,
    loggers: Sequence[Policy],
    sizes: Sequence[int],
    env: DiscreteEnvironment,
    pi_e: Policy,
    atol: float = CONSTRAINT_ATOL,
) -> bool:
    """Whether ``sum_k n_k pi_k(a|s) h(k,s,a) = n`` wherever ``pi_e(a|s) > 0``.

    Checked in the scale-free form ``sum_k rho_k pi_k h = 1`` within ``atol``.
    """
    sizes = np.asarray(sizes, dtype=float)
    rho = sizes / sizes.sum()
    pe = policy_table(pi_e, env)
    total = np.zeros_like(pe)
    for k, logger_k in enumerate(loggers):
        pk = policy_table(logger_k, env)
        hk = h.values(k, env.features)
        # a logger contributes only on its own support; h there must be finite
        support = pk > 0
        term = np.zeros_like(pk)
        term[support] = rho[k] * pk[support] * hk[support]
        total += term
    mask = pe > 0
    with np.errstate(invalid="ignore"):
        return bool(np.all(np.abs(total[mask] - 1.0) <= atol))


# ---------------------------------------------------------------------------
# Named inverse-propensity estimators
# ---------------------------------------------------------------------------


def is_estimate(data: StratifiedDataset, pi_e: Policy, pi_star: Policy) -> float:
    """Importance sampling against the marginal logging policy."""
    zero = ZeroControlVariate(pi_e.n_actions)
    return gamma_estimate(data, InverseMarginal(pi_star), zero, pi_e)


def weighted_is(
    data: StratifiedDataset, lam, pi_e: Policy, loggers: Sequence[Policy]
) -> float:
    """Convex combination of per-stratum importance-sampling estimates."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape[0] != data.n_strata:
        raise ValueError("one weight per stratum required")
    if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-9:
        raise ValueError("lam must lie on the simplex")
    if np.any((lam > 0) & (data.sizes == 0)):
        raise ValueError("positive weight on an empty stratum")
    h = SimplexWeighted(tuple(loggers), lam, data.proportions)
    return gamma_estimate(data, h, ZeroControlVariate(pi_e.n_actions), pi_e)


def is_avg(data: StratifiedDataset, pi_e: Policy, loggers: Sequence[Policy]) -> float:
    """Size-weighted average of the per-stratum importance-sampling estimates."""
    return weighted_is(data, data.proportions, pi_e, loggers)


def _per_stratum_is_scores(
    data: StratifiedDataset, pi_e: Policy, loggers: Sequence[Policy], floor: float = 0.0
) -> list[np.ndarray]:
    out = []
    for stratum, logger_k in zip(data.strata, loggers):
        rows = np.arange(stratum.size)
        pe = pi_e.prob_matrix(stratum.contexts)[rows, stratum.actions]
        pk = logger_k.prob_matrix(stratum.contexts)[rows, stratum.actions]
        if floor > 0.0:
            pk = np.maximum(pk, floor)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(pe > 0, pe / pk, 0.0)
        out.append(w * stratum.rewards)
    return out


def precision_weights(variances, sizes, var_floor: float = VARIANCE_FLOOR) -> np.ndarray:
    """Inverse-variance simplex weights ``lam_k ~ n_k / var_k``, variance-floored."""
    variances = np.maximum(np.asarray(variances, dtype=float), var_floor)
    raw = np.asarray(sizes, dtype=float) / variances
    return raw / raw.sum()


def is_pw_feasible(
    data: StratifiedDataset,
    pi_e: Policy,
    loggers: Sequence[Policy],
    var_floor: float = VARIANCE_FLOOR,
    bessel: bool = False,
) -> float:
    """Precision-weighted combination with weights from empirical variances."""
    if np.any(data.sizes < 2):
        raise ValueError("every stratum needs at least 2 samples for precision weights")
    ddof = 1 if bessel else 0
    variances = [float(np.var(s, ddof=ddof)) for s in _per_stratum_is_scores(data, pi_e, loggers)]
    lam = precision_weights(variances, data.sizes, var_floor)
    return weighted_is(data, lam, pi_e, loggers)


# ---------------------------------------------------------------------------
# Cross-fitting
# ---------------------------------------------------------------------------

NuisanceFitter = Callable[[StratifiedDataset], tuple[WeightFunction, ControlVariate]]


def split_folds(
    data: StratifiedDataset, n_folds: int, seed: int | np.random.Generator
) -> list[tuple[StratifiedDataset, StratifiedDataset]]:
    """Random even per-stratum partition into (evaluation, training) fold pairs.

    Every stratum is split into ``n_folds`` folds whose sizes are within 1 of
    ``n_k / n_folds``.  When some nonempty stratum has fewer samples than
    ``n_folds``, the fold count is reduced for the whole run (with a warning)
    rather than dropping samples.
    """
    if n_folds < 2:
        raise ValueError("cross-fitting needs at least 2 folds")
    nonempty = data.sizes[data.sizes > 0]
    if nonempty.size and int(nonempty.min()) < n_folds:
        effective = max(2, int(nonempty.min()))
        logger.warning(
            "reducing cross-fit folds from %d to %d: smallest stratum has %d samples",
            n_folds,
            effective,
            int(nonempty.min()),
        )
        n_folds = effective
    rng = as_generator(seed)
    per_stratum = [
        np.array_split(rng.permutation(stratum.size), n_folds) for stratum in data.strata
    ]
    pairs = []
    for z in range(n_folds):
        eval_strata = []
        train_strata = []
        for stratum, folds in zip(data.strata, per_stratum):
            eval_strata.append(stratum.subset(np.sort(folds[z])))
            rest = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != z]))
            train_strata.append(stratum.subset(rest))
        pairs.append((StratifiedDataset(tuple(eval_strata)), StratifiedDataset(tuple(train_strata))))
    return pairs


def cross_fit_estimate(
    data: StratifiedDataset,
    n_folds: int,
    nuisance_fitter: NuisanceFitter,
    pi_e: Policy,
    seed: int | np.random.Generator = 0,
) -> float:
    """Fit (h, g) on each training fold, score the held-out fold, average.

    Returns ``sum_z |L_z| * J_z / n`` where ``J_z`` is the estimate on
    evaluation fold ``L_z`` with nuisances fit on its complement.
    """
    total = 0.0
    for eval_part, train_part in split_folds(data, n_folds, seed):
        if eval_part.total == 0:
            continue
        h, g = nuisance_fitter(train_part)
        total += eval_part.total * gamma_estimate(eval_part, h, g, pi_e)
    return total / data.total


QFitter = Callable[[StratifiedDataset], ControlVariate]
BehaviorFitter = Callable[[StratifiedDataset], Policy]


def dr_estimate(
    data: StratifiedDataset,
    pi_e: Policy,
    pi_star: Policy,
    q_fitter: QFitter,
    n_folds: int = 2,
    seed: int | np.random.Generator = 0,
) -> float:
    """Cross-fitted doubly robust estimate with the known marginal policy."""
    h = InverseMarginal(pi_star)
    return cross_fit_estimate(data, n_folds, lambda train: (h, q_fitter(train)), pi_e, seed)


def dr_avg(
    data: StratifiedDataset,
    pi_e: Policy,
    loggers: Sequence[Policy],
    q_fitter: QFitter,
    n_folds: int = 2,
    seed: int | np.random.Generator = 0,
) -> float:
    """Doubly robust with per-logger inverse weights (size-weighted average)."""
    h = InversePerLogger(tuple(loggers))
    return cross_fit_estimate(data, n_folds, lambda train: (h, q_fitter(train)), pi_e, seed)


def _dr_score_variances(
    data: StratifiedDataset,
    pi_e: Policy,
    loggers: Sequence[Policy],
    g: ControlVariate,
    bessel: bool = False,
) -> np.ndarray:
    """Per-stratum empirical variances of the per-logger doubly-robust score."""
    ddof = 1 if bessel else 0
    variances = []
    for stratum, logger_k in zip(data.strata, loggers):
        scores = phi_scores(stratum.contexts, stratum.actions, stratum.rewards, g, pi_e, logger_k)
        variances.append(float(np.var(scores, ddof=ddof)) if stratum.size else 0.0)
    return np.asarray(variances)


def dr_pw(
    data: StratifiedDataset,
    pi_e: Policy,
    loggers: Sequence[Policy],
    q_fitter: QFitter,
    n_folds: int = 2,
    seed: int | np.random.Generator = 0,
    var_floor: float = VARIANCE_FLOOR,
) -> float:
    """Doubly robust precision-weighted combination of per-stratum estimates.

    The simplex weights are inverse-variance weights of the per-stratum
    doubly-robust scores, estimated (like the reward model) on the training
    part of each fold.
    """
    loggers = tuple(loggers)
    rho = data.proportions

    def fitter(train: StratifiedDataset):
        g = q_fitter(train)
        lam = precision_weights(
            _dr_score_variances(train, pi_e, loggers, g), train.sizes, var_floor
        )
        return SimplexWeighted(loggers, lam, rho), g

    return cross_fit_estimate(data, n_folds, fitter, pi_e, seed)


def dr_estimated_propensity(
    data: StratifiedDataset,
    pi_e: Policy,
    behavior_fitter: BehaviorFitter,
    q_fitter: QFitter,
    n_folds: int = 2,
    seed: int | np.random.Generator = 0,
    propensity_floor: float = PROPENSITY_FLOOR,
) -> float:
    """Doubly robust with the marginal logging policy estimated per fold.

    Estimated propensities are floored at ``propensity_floor`` before
    inversion.  Unbiasedness holds only asymptotically.
    """

    def fitter(train: StratifiedDataset):
        pi_hat = behavior_fitter(train)
        return InverseMarginal(pi_hat, floor=propensity_floor), q_fitter(train)

    return cross_fit_estimate(data, n_folds, fitter, pi_e, seed)
