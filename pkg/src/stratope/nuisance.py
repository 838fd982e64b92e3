"""Regression nuisances: reward models q-hat and the behavior-policy estimate.

Both are fit by full-batch gradient descent with a fixed step count, which
keeps every fit deterministic.  The reward model is one logistic (or linear)
regression per action; the behavior model is a multinomial logit over
actions, fit on the pooled strata so that it targets the marginal logging
policy.  Analytic gradients are exposed for finite-difference checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import StratifiedDataset
from .estimators import QFitter
from .policies import softmax_rows

logger = logging.getLogger(__name__)

LOGIT_CLIP = 30.0


@dataclass(frozen=True)
class FitConfig:
    """Gradient-descent hyperparameters shared by all fitters."""

    learning_rate: float = 0.1
    iterations: int = 2000
    l2_penalty: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)))


def _with_intercept(contexts: np.ndarray) -> np.ndarray:
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    return np.hstack([contexts, np.ones((contexts.shape[0], 1))])


def binary_logistic_loss_grad(
    w: np.ndarray, design: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean log-loss with ridge penalty on the non-intercept weights."""
    p = _sigmoid(design @ w)
    eps = 1e-12
    loss = -float(np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
    penalty = w.copy()
    penalty[-1] = 0.0  # intercept unpenalized
    loss += 0.5 * l2 * float(penalty @ penalty)
    grad = design.T @ (p - y) / design.shape[0] + l2 * penalty
    return loss, grad


def squared_loss_grad(
    w: np.ndarray, design: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean squared error with ridge penalty on the non-intercept weights."""
    resid = design @ w - y
    penalty = w.copy()
    penalty[-1] = 0.0
    loss = 0.5 * float(np.mean(resid * resid)) + 0.5 * l2 * float(penalty @ penalty)
    grad = design.T @ resid / design.shape[0] + l2 * penalty
    return loss, grad


def multinomial_loss_grad(
    weights: np.ndarray, design: np.ndarray, actions: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean multinomial log-loss; ``weights`` is (n_actions, d+1)."""
    probs = softmax_rows(design @ weights.T)
    rows = np.arange(design.shape[0])
    loss = -float(np.mean(np.log(probs[rows, actions] + 1e-12)))
    penalty = weights.copy()
    penalty[:, -1] = 0.0
    loss += 0.5 * l2 * float((penalty * penalty).sum())
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    grad = (probs - onehot).T @ design / design.shape[0] + l2 * penalty
    return loss, grad


def _descend(w0: np.ndarray, loss_grad, config: FitConfig) -> tuple[np.ndarray, np.ndarray]:
    w = w0.copy()
    history = np.empty(config.iterations)
    for it in range(config.iterations):
        loss, grad = loss_grad(w)
        history[it] = loss
        w -= config.learning_rate * grad
    return w, history


@dataclass(eq=False)
class QModel:
    """Per-action reward regression with logistic or identity link.

    weights : (n_actions, d+1), intercept last.  Under the logistic link
    predictions are ``r_max * sigmoid(.)`` and therefore stay in
    [0, r_max].  ``missing_actions`` flags actions that had no training
    samples; their rows predict the global mean reward.
    """

    weights: np.ndarray
    link: str = "logistic"
    r_max: float = 1.0
    missing_actions: tuple[int, ...] = ()
    loss_history: np.ndarray | None = None

    @property
    def n_actions(self) -> int:
        return self.weights.shape[0]

    def values(self, contexts: np.ndarray) -> np.ndarray:
        design = _with_intercept(contexts)
        z = design @ self.weights.T
        if self.link == "logistic":
            return self.r_max * _sigmoid(z)
        return z


def fit_q(
    contexts: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    n_actions: int,
    config: FitConfig = FitConfig(),
    link: str = "logistic",
    r_max: float = 1.0,
) -> QModel:
    """Fit one reward regression per action by full-batch gradient descent.

    An action with no samples falls back to a constant prediction at the
    global mean reward and is flagged in ``missing_actions``.
    """
    if link not in ("logistic", "identity"):
        raise ValueError(f"unknown link {link!r}")
    design = _with_intercept(contexts)
    actions = np.asarray(actions, dtype=int)
    rewards = np.asarray(rewards, dtype=float)
    if design.shape[0] == 0:
        raise ValueError("cannot fit a reward model on zero samples")
    dim = design.shape[1]
    weights = np.zeros((n_actions, dim))
    global_mean = float(np.mean(rewards))
    missing: list[int] = []
    histories = []
    for a in range(n_actions):
        mask = actions == a
        if not np.any(mask):
            missing.append(a)
            if link == "logistic":
                p = np.clip(global_mean / r_max, 1e-6, 1 - 1e-6)
                weights[a, -1] = np.log(p / (1 - p))
            else:
                weights[a, -1] = global_mean
            continue
        design_a = design[mask]
        if link == "logistic":
            y = rewards[mask] / r_max
            loss_grad = lambda w, X=design_a, yy=y: binary_logistic_loss_grad(
                w, X, yy, config.l2_penalty
            )
        else:
            y = rewards[mask]
            loss_grad = lambda w, X=design_a, yy=y: squared_loss_grad(w, X, yy, config.l2_penalty)
        weights[a], hist = _descend(np.zeros(dim), loss_grad, config)
        histories.append(hist)
    if missing:
        logger.warning("no samples for action(s) %s; using the global mean reward", missing)
    history = np.mean(histories, axis=0) if histories else None
    return QModel(weights, link=link, r_max=r_max, missing_actions=tuple(missing), loss_history=history)


@dataclass(eq=False)
class BehaviorModel:
    """Multinomial-logit estimate of the marginal logging policy.

    Implements the policy interface (``prob_matrix`` etc.) so it can stand
    in wherever a known policy is expected.  Probabilities are strictly
    positive by construction; flooring happens only at inversion time.
    """

    weights: np.ndarray  # (n_actions, d+1), intercept last
    loss_history: np.ndarray | None = None

    @property
    def n_actions(self) -> int:
        return self.weights.shape[0]

    def prob_matrix(self, contexts: np.ndarray) -> np.ndarray:
        return softmax_rows(_with_intercept(contexts) @ self.weights.T)

    def probs(self, context) -> np.ndarray:
        return self.prob_matrix(np.atleast_2d(np.asarray(context, dtype=float)))[0]

    def prob(self, context, action: int) -> float:
        return float(self.probs(context)[action])


def fit_behavior(
    contexts: np.ndarray,
    actions: np.ndarray,
    n_actions: int,
    config: FitConfig = FitConfig(),
) -> BehaviorModel:
    """Multinomial logistic regression of action on context.

    Fit on pooled strata this estimates the marginal logging policy, since
    the stratum proportions are exactly the pooling weights.
    """
    design = _with_intercept(contexts)
    actions = np.asarray(actions, dtype=int)
    n = design.shape[0]
    if n == 0:
        raise ValueError("cannot fit a behavior model on zero samples")
    # hoisted constants make the descent loop cheap
    rows = np.arange(n)
    onehot_t_design = np.zeros((n_actions, design.shape[1]))
    np.add.at(onehot_t_design, actions, design)
    weights = np.zeros((n_actions, design.shape[1]))
    history = np.empty(config.iterations)
    for it in range(config.iterations):
        probs = softmax_rows(design @ weights.T)
        loss = -float(np.mean(np.log(probs[rows, actions] + 1e-12)))
        penalty = weights.copy()
        penalty[:, -1] = 0.0
        history[it] = loss + 0.5 * config.l2_penalty * float((penalty * penalty).sum())
        grad = (probs.T @ design - onehot_t_design) / n + config.l2_penalty * penalty
        weights -= config.learning_rate * grad
    return BehaviorModel(weights, loss_history=history)


# ---------------------------------------------------------------------------
# Fitters with the cross-fitting call signature (dataset -> model)
# ---------------------------------------------------------------------------


def logistic_q_fitter(
    n_actions: int, config: FitConfig = FitConfig(), r_max: float = 1.0
) -> QFitter:
    def fitter(train: StratifiedDataset) -> QModel:
        contexts, actions, rewards, _ = train.pooled()
        return fit_q(contexts, actions, rewards, n_actions, config, r_max=r_max)

    return fitter


def pooled_behavior_fitter(n_actions: int, config: FitConfig = FitConfig()):
    def fitter(train: StratifiedDataset) -> BehaviorModel:
        contexts, actions, _, _ = train.pooled()
        return fit_behavior(contexts, actions, n_actions, config)

    return fitter


def per_stratum_behavior_fitter(n_actions: int, config: FitConfig = FitConfig()):
    """Fit one behavior model per stratum (estimates each logger separately)."""

    def fitter(train: StratifiedDataset) -> list[BehaviorModel]:
        return [
            fit_behavior(stratum.contexts, stratum.actions, n_actions, config)
            for stratum in train.strata
        ]

    return fitter


# ---------------------------------------------------------------------------
# Serialization (same plain-text matrix format as policies)
# ---------------------------------------------------------------------------


def save_q_model(model: QModel, path_or_file) -> None:
    from .policies import _write_matrix

    def write(out):
        a, p = model.weights.shape
        out.write(f"qmodel {a} {p} {model.link} {model.r_max!r}\n")
        _write_matrix(out, model.weights)

    if hasattr(path_or_file, "write"):
        write(path_or_file)
    else:
        with open(path_or_file, "w") as fh:
            write(fh)


def load_q_model(path_or_file) -> QModel:
    from .policies import _read_matrix

    def read(fh):
        lines = iter(fh.read().splitlines())
        header = next(lines).split()
        if header[0] != "qmodel":
            raise ValueError(f"expected a qmodel header, got {header[0]!r}")
        a, p, link, r_max = int(header[1]), int(header[2]), header[3], float(header[4])
        return QModel(_read_matrix(lines, a, p), link=link, r_max=r_max)

    if hasattr(path_or_file, "read"):
        return read(path_or_file)
    with open(path_or_file) as fh:
        return read(fh)


def save_behavior_model(model: BehaviorModel, path_or_file) -> None:
    from .policies import _write_matrix

    def write(out):
        a, p = model.weights.shape
        out.write(f"behavior {a} {p}\n")
        _write_matrix(out, model.weights)

    if hasattr(path_or_file, "write"):
        write(path_or_file)
    else:
        with open(path_or_file, "w") as fh:
            write(fh)


def load_behavior_model(path_or_file) -> BehaviorModel:
    from .policies import _read_matrix

    def read(fh):
        lines = iter(fh.read().splitlines())
        header = next(lines).split()
        if header[0] != "behavior":
            raise ValueError(f"expected a behavior header, got {header[0]!r}")
        return BehaviorModel(_read_matrix(lines, int(header[1]), int(header[2])))

    if hasattr(path_or_file, "read"):
        return read(path_or_file)
    with open(path_or_file) as fh:
        return read(fh)
