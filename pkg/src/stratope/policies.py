"""Policy families for discrete-action contextual bandits.

A policy maps a context feature vector to a probability distribution over
``n_actions`` actions.  All policies here are immutable and safe to share
across threads; sampling takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_ATOL = 1e-9
SIMPLEX_ATOL = 1e-9


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, overflow-safe.

    Uses column-wise max/sum tricks, which are much faster than axis-1
    reductions when the number of actions is small.
    """
    out = np.array(logits, dtype=float)
    m = out[:, 0].copy()
    for j in range(1, out.shape[1]):
        np.maximum(m, out[:, j], out=m)
    out -= m[:, None]
    np.exp(out, out=out)
    out /= (out @ np.ones(out.shape[1]))[:, None]
    return out


class Policy:
    """Base class: a stochastic map from context features to actions.

    Subclasses implement :meth:`prob_matrix`; everything else derives
    from it.  Every policy exposes ``n_actions``.
    """

    n_actions: int

    def prob_matrix(self, contexts: np.ndarray) -> np.ndarray:
        """Action probabilities for a batch of contexts.

        Parameters
        ----------
        contexts : array of shape (n, d)

        Returns
        -------
        array of shape (n, n_actions), each row on the probability simplex.
        """
        raise NotImplementedError

    def probs(self, context) -> np.ndarray:
        """Action probabilities for a single context, shape (n_actions,)."""
        x = np.atleast_2d(np.asarray(context, dtype=float))
        return self.prob_matrix(x)[0]

    def prob(self, context, action: int) -> float:
        return float(self.probs(context)[action])

    def sample(self, contexts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one action per context row, distributed per prob_matrix."""
        p = self.prob_matrix(np.atleast_2d(np.asarray(contexts, dtype=float)))
        cum = np.cumsum(p, axis=1)
        cum[:, -1] = 1.0  # guard cumulative rounding
        u = rng.random(p.shape[0])
        return (u[:, None] >= cum).sum(axis=1)


def action_probability(policy: Policy, context, action: int) -> float:
    """Probability that ``policy`` plays ``action`` in ``context``."""
    if not 0 <= action < policy.n_actions:
        raise ValueError(f"action {action} out of range [0, {policy.n_actions})")
    return policy.prob(context, action)


def sample_action(policy: Policy, context, rng: np.random.Generator) -> int:
    """Draw a single action in ``context``."""
    return int(policy.sample(np.atleast_2d(np.asarray(context, dtype=float)), rng)[0])


@dataclass(frozen=True)
class UniformPolicy(Policy):
    """Plays every action with probability 1/n_actions."""

    n_actions: int

    def prob_matrix(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(contexts)
        return np.full((contexts.shape[0], self.n_actions), 1.0 / self.n_actions)


@dataclass(frozen=True, eq=False)
class LinearSoftmaxPolicy(Policy):
    """Softmax over linear scores ``weights @ x / temperature``.

    weights : (n_actions, d).  Probabilities are strictly positive.
    """

    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-d (n_actions, d) array")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def n_actions(self) -> int:
        return self.weights.shape[0]

    def prob_matrix(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        return softmax_rows(contexts @ self.weights.T / self.temperature)


@dataclass(frozen=True, eq=False)
class GreedyPolicy(Policy):
    """Point mass on the argmax of linear scores; ties break to the lowest index.

    scores : (n_actions, d) linear scorer, optional per-action intercept.
    """

    scores: np.ndarray
    intercept: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=float))
        if self.intercept is not None:
            object.__setattr__(self, "intercept", np.asarray(self.intercept, dtype=float))

    @property
    def n_actions(self) -> int:
        return self.scores.shape[0]

    def greedy_actions(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        s = contexts @ self.scores.T
        if self.intercept is not None:
            s = s + self.intercept
        return s.argmax(axis=1)  # argmax returns the first maximum

    def prob_matrix(self, contexts: np.ndarray) -> np.ndarray:
        best = self.greedy_actions(contexts)
        p = np.zeros((best.shape[0], self.n_actions))
        p[np.arange(best.shape[0]), best] = 1.0
        return p


@dataclass(frozen=True)
class MixturePolicy(Policy):
    """``alpha * base + (1 - alpha) * uniform`` over the base's action set."""

    alpha: float
    base: Policy

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def n_actions(self) -> int:
        return self.base.n_actions

    def prob_matrix(self, contexts: np.ndarray) -> np.ndarray:
        uniform = (1.0 - self.alpha) / self.n_actions
        return self.alpha * self.base.prob_matrix(contexts) + uniform


@dataclass(frozen=True, eq=False)
class TabularPolicy(Policy):
    """Explicit per-context table of action probabilities.

    table : (n_contexts, n_actions).  Contexts must be one-hot indicator
    vectors of dimension n_contexts (the default feature encoding of
    ``DiscreteEnvironment``); probabilities are read off as ``x @ table``.
    """

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", np.asarray(self.table, dtype=float))
        if self.table.ndim != 2:
            raise ValueError("table must be 2-d (n_contexts, n_actions)")
        if np.any(self.table < 0):
            raise ValueError("action probabilities must be nonnegative")
        if not np.allclose(self.table.sum(axis=1), 1.0, atol=SIMPLEX_ATOL):
            raise ValueError("each table row must sum to 1")

    @property
    def n_actions(self) -> int:
        return self.table.shape[1]

    def prob_matrix(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        return contexts @ self.table


@dataclass(frozen=True, eq=False)
class MarginalPolicy(Policy):
    """Mixture of logging policies with stratum proportions as weights."""

    loggers: tuple[Policy, ...]
    rho: np.ndarray

    @property
    def n_actions(self) -> int:
        return self.loggers[0].n_actions

    def prob_matrix(self, contexts: np.ndarray) -> np.ndarray:
        out = self.rho[0] * self.loggers[0].prob_matrix(contexts)
        for w, pol in zip(self.rho[1:], self.loggers[1:]):
            out += w * pol.prob_matrix(contexts)
        return out


def marginal_policy(loggers: Sequence[Policy], rho) -> Policy:
    """Mix the loggers with weights ``rho`` into the marginal logging policy.

    ``rho`` must lie on the probability simplex (tolerance 1e-9).  With a
    single logger the logger itself is returned unchanged.
    """
    rho = np.asarray(rho, dtype=float)
    if len(loggers) != rho.shape[0]:
        raise ValueError("one weight per logger required")
    if np.any(rho < -SIMPLEX_ATOL) or abs(rho.sum() - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"rho must lie on the simplex, got {rho!r}")
    n_actions = {pol.n_actions for pol in loggers}
    if len(n_actions) != 1:
        raise ValueError("all loggers must share the same action space")
    if len(loggers) == 1:
        return loggers[0]
    return MarginalPolicy(tuple(loggers), rho)


@dataclass(frozen=True)
class OverlapReport:
    """Result of an absolute-continuity check between two policies."""

    ok: bool
    violations: tuple[tuple[int, int], ...]  # (context index, action) pairs


def check_weak_overlap(pi_e: Policy, pi_star: Policy, env) -> OverlapReport:
    """Check that ``pi_e(a|s) > 0`` implies ``pi_star(a|s) > 0`` on ``env``.

    Returns the overall verdict plus every violating (context, action) pair.
    """
    pe = pi_e.prob_matrix(env.features)
    ps = pi_star.prob_matrix(env.features)
    bad = (pe > 0) & (ps <= 0)
    violations = tuple((int(s), int(a)) for s, a in zip(*np.nonzero(bad)))
    return OverlapReport(ok=not violations, violations=violations)


def check_whole_weak_overlap(pi_e: Policy, loggers: Sequence[Policy], env) -> OverlapReport:
    """Check overlap of ``pi_e`` against every logger individually."""
    violations: list[tuple[int, int]] = []
    ok = True
    for logger in loggers:
        report = check_weak_overlap(pi_e, logger, env)
        ok = ok and report.ok
        violations.extend(report.violations)
    return OverlapReport(ok=ok, violations=tuple(dict.fromkeys(violations)))


# ---------------------------------------------------------------------------
# Plain-text serialization: one header line (tag + shape + extras), then one
# whitespace-separated row of reals per action.
# ---------------------------------------------------------------------------


def _write_matrix(out, matrix: np.ndarray) -> None:
    for row in np.atleast_2d(matrix):
        out.write(" ".join(repr(float(v)) for v in row) + "\n")


def _read_matrix(lines, n_rows: int, n_cols: int) -> np.ndarray:
    rows = [[float(tok) for tok in next(lines).split()] for _ in range(n_rows)]
    matrix = np.asarray(rows, dtype=float)
    if matrix.shape != (n_rows, n_cols):
        raise ValueError(f"expected a {n_rows}x{n_cols} matrix, got {matrix.shape}")
    return matrix


def save_policy(policy: Policy, path_or_file) -> None:
    """Write a policy in the plain-text matrix format."""
    if hasattr(path_or_file, "write"):
        _save_policy(policy, path_or_file)
    else:
        with open(path_or_file, "w") as out:
            _save_policy(policy, out)


def _greedy_matrix(policy: GreedyPolicy) -> tuple[np.ndarray, int]:
    if policy.intercept is None:
        return policy.scores, 0
    return np.hstack([policy.scores, policy.intercept[:, None]]), 1


def _save_policy(policy: Policy, out) -> None:
    if isinstance(policy, UniformPolicy):
        out.write(f"uniform {policy.n_actions} 0\n")
    elif isinstance(policy, LinearSoftmaxPolicy):
        a, d = policy.weights.shape
        out.write(f"linear_softmax {a} {d} {policy.temperature!r}\n")
        _write_matrix(out, policy.weights)
    elif isinstance(policy, GreedyPolicy):
        matrix, has_intercept = _greedy_matrix(policy)
        out.write(f"greedy {matrix.shape[0]} {policy.scores.shape[1]} {has_intercept}\n")
        _write_matrix(out, matrix)
    elif isinstance(policy, MixturePolicy) and isinstance(policy.base, GreedyPolicy):
        matrix, has_intercept = _greedy_matrix(policy.base)
        out.write(
            f"mixture_greedy {matrix.shape[0]} {policy.base.scores.shape[1]} "
            f"{policy.alpha!r} {has_intercept}\n"
        )
        _write_matrix(out, matrix)
    elif isinstance(policy, TabularPolicy):
        s, a = policy.table.shape
        out.write(f"tabular {a} {s}\n")
        _write_matrix(out, policy.table.T)  # one row per action
    else:
        raise ValueError(f"cannot serialize policy of type {type(policy).__name__}")


def load_policy(path_or_file) -> Policy:
    """Read a policy written by :func:`save_policy`."""
    if hasattr(path_or_file, "read"):
        return _load_policy(path_or_file)
    with open(path_or_file) as fh:
        return _load_policy(fh)


def _split_greedy(matrix: np.ndarray, d: int, has_intercept: int) -> GreedyPolicy:
    if has_intercept:
        return GreedyPolicy(scores=matrix[:, :d], intercept=matrix[:, d])
    return GreedyPolicy(scores=matrix)


def _load_policy(fh) -> Policy:
    lines = iter(fh.read().splitlines())
    header = next(lines).split()
    tag = header[0]
    if tag == "uniform":
        return UniformPolicy(int(header[1]))
    if tag == "linear_softmax":
        a, d, temp = int(header[1]), int(header[2]), float(header[3])
        return LinearSoftmaxPolicy(_read_matrix(lines, a, d), temperature=temp)
    if tag == "greedy":
        a, d, has_intercept = int(header[1]), int(header[2]), int(header[3])
        return _split_greedy(_read_matrix(lines, a, d + has_intercept), d, has_intercept)
    if tag == "mixture_greedy":
        a, d, alpha, has_intercept = (
            int(header[1]),
            int(header[2]),
            float(header[3]),
            int(header[4]),
        )
        base = _split_greedy(_read_matrix(lines, a, d + has_intercept), d, has_intercept)
        return MixturePolicy(alpha=alpha, base=base)
    if tag == "tabular":
        a, s = int(header[1]), int(header[2])
        return TabularPolicy(_read_matrix(lines, a, s).T)
    raise ValueError(f"unknown policy tag {tag!r}")
