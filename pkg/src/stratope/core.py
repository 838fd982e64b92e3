"""Finite bandit environments, stratified logged datasets, and samplers.

Contexts in a :class:`DiscreteEnvironment` are integer ids carrying a
feature vector (one-hot by default), so exact enumeration and
feature-based regression work on the same objects.  Rewards are either
deterministic, ``r = q(s, a)``, or scaled Bernoulli, ``r = r_max`` with
probability ``q(s, a) / r_max`` and ``0`` otherwise, keeping the reward
variance closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .policies import Policy, marginal_policy

SIMPLEX_ATOL = 1e-9


class InvalidPolicyError(ValueError):
    """A policy is undefined or inconsistent on the environment's support."""


class OverlapViolationError(ValueError):
    """An importance weight is undefined because the logger never plays the action."""


def as_generator(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Coerce an integer seed (or existing generator) into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def one_hot_features(n_contexts: int) -> np.ndarray:
    return np.eye(n_contexts)


@dataclass(frozen=True, eq=False)
class DiscreteEnvironment:
    """Finite ground-truth data-generating process.

    context_probs : (S,) probabilities of the context ids.
    q_table       : (S, A) mean reward per (context, action), in [0, r_max].
    features      : (S, d) per-context feature vectors; one-hot when omitted.
    reward_noise  : "bernoulli" (scaled two-point) or "deterministic".
    """

    context_probs: np.ndarray
    q_table: np.ndarray
    features: np.ndarray | None = None
    reward_noise: str = "bernoulli"
    r_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "context_probs", np.asarray(self.context_probs, dtype=float))
        object.__setattr__(self, "q_table", np.asarray(self.q_table, dtype=float))
        if abs(self.context_probs.sum() - 1.0) > SIMPLEX_ATOL or np.any(self.context_probs < 0):
            raise ValueError("context_probs must lie on the simplex")
        if self.q_table.shape[0] != self.context_probs.shape[0]:
            raise ValueError("q_table must have one row per context")
        if np.any(self.q_table < 0) or np.any(self.q_table > self.r_max):
            raise ValueError("mean rewards must lie in [0, r_max]")
        if self.reward_noise not in ("bernoulli", "deterministic"):
            raise ValueError(f"unknown reward_noise {self.reward_noise!r}")
        if self.features is None:
            object.__setattr__(self, "features", one_hot_features(self.n_contexts))
        else:
            feats = np.atleast_2d(np.asarray(self.features, dtype=float))
            if not np.all(np.isfinite(feats)) or feats.shape[0] != self.n_contexts:
                raise ValueError("features must be finite with one row per context")
            object.__setattr__(self, "features", feats)

    @property
    def n_contexts(self) -> int:
        return self.context_probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.q_table.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def reward_variance_table(self) -> np.ndarray:
        """Conditional reward variance per (context, action)."""
        if self.reward_noise == "deterministic":
            return np.zeros_like(self.q_table)
        return self.q_table * (self.r_max - self.q_table)

    def reward_support(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Reward values and probabilities for one (context, action) cell."""
        q = self.q_table[s, a]
        if self.reward_noise == "deterministic":
            return np.array([q]), np.array([1.0])
        p = q / self.r_max
        return np.array([0.0, self.r_max]), np.array([1.0 - p, p])


def policy_table(policy: Policy, env: DiscreteEnvironment) -> np.ndarray:
    """Evaluate a policy on every environment context: (S, A) probabilities.

    Raises :class:`InvalidPolicyError` when the policy is inconsistent on the
    support (nonfinite, negative, wrong action count, rows off the simplex).
    """
    table = policy.prob_matrix(env.features)
    if table.shape != (env.n_contexts, env.n_actions):
        raise InvalidPolicyError(
            f"policy defines {table.shape[1]} actions, environment has {env.n_actions}"
        )
    if not np.all(np.isfinite(table)) or np.any(table < -SIMPLEX_ATOL):
        raise InvalidPolicyError("policy probabilities must be finite and nonnegative")
    if not np.allclose(table.sum(axis=1), 1.0, atol=1e-8):
        raise InvalidPolicyError("policy probabilities must sum to 1 per context")
    return np.clip(table, 0.0, None)


def policy_value_exact(env: DiscreteEnvironment, pi_e: Policy) -> float:
    """Exact mean reward of ``pi_e`` on ``env`` by enumeration over (s, a)."""
    pe = policy_table(pi_e, env)
    return float(env.context_probs @ (pe * env.q_table).sum(axis=1))


def value_function(env: DiscreteEnvironment, pi_e: Policy) -> np.ndarray:
    """Per-context expected reward of ``pi_e``: (S,) array."""
    pe = policy_table(pi_e, env)
    return (pe * env.q_table).sum(axis=1)


@dataclass(frozen=True)
class LoggedSample:
    """One logged interaction: which logger acted, where, how, and the reward."""

    logger_id: int
    context: np.ndarray
    action: int
    reward: float


@dataclass(frozen=True, eq=False)
class Stratum:
    """All samples logged by a single policy.  Arrays are never mutated."""

    contexts: np.ndarray  # (n_k, d)
    actions: np.ndarray  # (n_k,)
    rewards: np.ndarray  # (n_k,)
    context_ids: np.ndarray | None = None  # (n_k,) when drawn from a finite env

    def __post_init__(self):
        object.__setattr__(self, "contexts", np.atleast_2d(np.asarray(self.contexts, dtype=float)))
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=int))
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=float))
        n = self.actions.shape[0]
        if self.contexts.shape[0] != n or self.rewards.shape[0] != n:
            raise ValueError("contexts, actions, and rewards must have equal length")

    @property
    def size(self) -> int:
        return self.actions.shape[0]

    def subset(self, indices: np.ndarray) -> "Stratum":
        ids = None if self.context_ids is None else self.context_ids[indices]
        return Stratum(self.contexts[indices], self.actions[indices], self.rewards[indices], ids)


def _empty_stratum(feature_dim: int) -> Stratum:
    return Stratum(
        np.empty((0, feature_dim)), np.empty(0, dtype=int), np.empty(0), np.empty(0, dtype=int)
    )


@dataclass(frozen=True)
class StratifiedDataset:
    """K strata of logged samples; stratum k was generated by logger k.

    Sizes are design constants under stratified sampling; under the iid
    mixture sampler they are the realized multinomial counts.
    """

    strata: tuple[Stratum, ...]

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))
        if not self.strata:
            raise ValueError("a dataset needs at least one stratum")

    @property
    def n_strata(self) -> int:
        return len(self.strata)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([stratum.size for stratum in self.strata])

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    @property
    def proportions(self) -> np.ndarray:
        return self.sizes / self.total

    def pooled(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Concatenate strata (in order): contexts, actions, rewards, logger ids."""
        contexts = np.vstack([stratum.contexts for stratum in self.strata])
        actions = np.concatenate([stratum.actions for stratum in self.strata])
        rewards = np.concatenate([stratum.rewards for stratum in self.strata])
        loggers = np.concatenate(
            [np.full(stratum.size, k, dtype=int) for k, stratum in enumerate(self.strata)]
        )
        return contexts, actions, rewards, loggers

    def samples(self) -> Iterator[LoggedSample]:
        for k, stratum in enumerate(self.strata):
            for i in range(stratum.size):
                yield LoggedSample(k, stratum.contexts[i], int(stratum.actions[i]), float(stratum.rewards[i]))


def _draw_stratum(
    env: DiscreteEnvironment, logger: Policy, size: int, rng: np.random.Generator
) -> Stratum:
    if size == 0:
        return _empty_stratum(env.feature_dim)
    ids = rng.choice(env.n_contexts, size=size, p=env.context_probs)
    contexts = env.features[ids]
    actions = logger.sample(contexts, rng)
    means = env.q_table[ids, actions]
    if env.reward_noise == "deterministic":
        rewards = means
    else:
        rewards = env.r_max * (rng.random(size) < means / env.r_max)
    return Stratum(contexts, actions, rewards, context_ids=ids)


def sample_stratified(
    env: DiscreteEnvironment,
    loggers: Sequence[Policy],
    sizes: Sequence[int],
    seed: int | np.random.Generator,
) -> StratifiedDataset:
    """Draw exactly ``sizes[k]`` iid samples from logger k, for every k."""
    if len(loggers) != len(sizes):
        raise ValueError("one size per logger required")
    if any(s < 0 for s in sizes):
        raise ValueError("sizes must be nonnegative")
    rng = as_generator(seed)
    return StratifiedDataset(
        tuple(_draw_stratum(env, logger, int(size), rng) for logger, size in zip(loggers, sizes))
    )


def sample_iid_mixture(
    env: DiscreteEnvironment,
    loggers: Sequence[Policy],
    rho: Sequence[float],
    n: int,
    seed: int | np.random.Generator,
) -> StratifiedDataset:
    """Draw ``n`` iid samples, each picking its logger from Categorical(rho).

    Equivalent to randomizing the stratum sizes as Multinomial(n, rho) and
    then sampling stratified with those sizes.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < -SIMPLEX_ATOL) or abs(rho.sum() - 1.0) > SIMPLEX_ATOL:
        raise ValueError("rho must lie on the simplex")
    rng = as_generator(seed)
    counts = rng.multinomial(n, rho)
    return StratifiedDataset(
        tuple(_draw_stratum(env, logger, int(c), rng) for logger, c in zip(loggers, counts))
    )


__all__ = [
    "DiscreteEnvironment",
    "InvalidPolicyError",
    "LoggedSample",
    "OverlapViolationError",
    "StratifiedDataset",
    "Stratum",
    "as_generator",
    "marginal_policy",
    "one_hot_features",
    "policy_table",
    "policy_value_exact",
    "sample_iid_mixture",
    "sample_stratified",
    "value_function",
]
