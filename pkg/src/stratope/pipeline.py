"""Classification-to-bandit conversion and benchmark data preparation.

A multiclass dataset becomes logged bandit feedback by treating the label
as the action: a policy picks an action per row and earns reward 1 when it
matches the true label.  The evaluation policy is a deterministic
classifier trained on a held-out split, so its true value is simply its
accuracy on the evaluation rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import StratifiedDataset, Stratum, as_generator
from .nuisance import FitConfig, fit_behavior
from .policies import GreedyPolicy, MixturePolicy, Policy


@dataclass(frozen=True, eq=False)
class ClassificationDataset:
    """Numeric feature rows with integer class labels in [0, n_classes)."""

    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "features", np.atleast_2d(np.asarray(self.features, dtype=float)))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels must have equal length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")

    @property
    def n_rows(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "ClassificationDataset":
        return ClassificationDataset(self.features[indices], self.labels[indices], self.n_classes)


class CsvParseError(ValueError):
    pass


def _looks_like_header(row: list[str], label_index: int) -> bool:
    for j, cell in enumerate(row):
        if j == label_index:
            continue
        try:
            float(cell)
        except ValueError:
            return True
    return False


def load_csv_dataset(path, label_column) -> ClassificationDataset:
    """Parse a CSV of numeric features plus one label column.

    ``label_column`` may be a header name (requires a header row) or a
    0-based column index.  Labels are remapped to 0..l-1 in order of first
    appearance.  Malformed input raises :class:`CsvParseError` with the
    offending row number.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise CsvParseError(f"{path}: empty file")

    start = 0
    if isinstance(label_column, str):
        header = rows[0]
        if label_column not in header:
            raise CsvParseError(f"{path}: no column named {label_column!r} in header")
        label_index = header.index(label_column)
        start = 1
    else:
        label_index = int(label_column)
        if rows and label_index >= len(rows[0]):
            raise CsvParseError(f"{path}: label column {label_index} out of range")
        if _looks_like_header(rows[0], label_index):
            start = 1
    data_rows = rows[start:]
    if not data_rows:
        raise CsvParseError(f"{path}: no data rows")

    width = len(data_rows[0])
    features = []
    raw_labels = []
    for offset, row in enumerate(data_rows):
        line_no = start + offset + 1
        if len(row) != width:
            raise CsvParseError(f"{path}:{line_no}: expected {width} fields, got {len(row)}")
        if label_index >= len(row):
            raise CsvParseError(f"{path}:{line_no}: label column {label_index} out of range")
        feats = []
        for j, cell in enumerate(row):
            if j == label_index:
                continue
            try:
                feats.append(float(cell))
            except ValueError:
                raise CsvParseError(
                    f"{path}:{line_no}: non-numeric feature value {cell!r}"
                ) from None
        features.append(feats)
        raw_labels.append(row[label_index])

    mapping: dict[str, int] = {}
    labels = []
    for value in raw_labels:
        if value not in mapping:
            mapping[value] = len(mapping)
        labels.append(mapping[value])
    return ClassificationDataset(np.asarray(features), np.asarray(labels), n_classes=len(mapping))


def save_csv_dataset(dataset: ClassificationDataset, path) -> None:
    """Write features plus a trailing ``label`` column with a header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(dataset.n_features)] + ["label"])
        for feats, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in feats] + [int(label)])


def make_synthetic_multiclass(
    n_rows: int,
    n_classes: int,
    n_features: int,
    seed: int | np.random.Generator,
    separation: float = 2.0,
) -> ClassificationDataset:
    """Gaussian class clusters with unit noise around separated class means."""
    rng = as_generator(seed)
    means = rng.normal(size=(n_classes, n_features))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = rng.integers(n_classes, size=n_rows)
    features = means[labels] + rng.normal(size=(n_rows, n_features))
    return ClassificationDataset(features, labels, n_classes)


@dataclass(frozen=True)
class ExperimentSplit:
    """Disjoint, exhaustive train/evaluation partition of one dataset."""

    train: ClassificationDataset
    eval: ClassificationDataset
    seed: int


def split_train_eval(
    dataset: ClassificationDataset, train_fraction: float = 0.3, seed: int = 0
) -> ExperimentSplit:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = as_generator(seed)
    perm = rng.permutation(dataset.n_rows)
    n_train = int(round(train_fraction * dataset.n_rows))
    return ExperimentSplit(
        train=dataset.subset(perm[:n_train]),
        eval=dataset.subset(perm[n_train:]),
        seed=seed,
    )


def train_det_policy(
    train: ClassificationDataset, config: FitConfig = FitConfig()
) -> GreedyPolicy:
    """Deterministic classifier policy: argmax of a multinomial-logit fit."""
    model = fit_behavior(train.features, train.labels, train.n_classes, config)
    return GreedyPolicy(scores=model.weights[:, :-1], intercept=model.weights[:, -1])


def policy_accuracy(policy: GreedyPolicy, dataset: ClassificationDataset) -> float:
    """Fraction of rows where the greedy action equals the label.

    For a deterministic evaluation policy this is its exact value on the
    benchmark, since reward is the correct-label indicator.
    """
    return float(np.mean(policy.greedy_actions(dataset.features) == dataset.labels))


def build_policy_suite(det_policy: GreedyPolicy) -> tuple[Policy, Policy, Policy]:
    """Evaluation and logging policies: mixtures of the classifier and uniform.

    Returns (pi_e, pi_1, pi_2) with classifier weights 1.00, 0.95, and 0.05.
    """
    return (
        MixturePolicy(1.00, det_policy),
        MixturePolicy(0.95, det_policy),
        MixturePolicy(0.05, det_policy),
    )


def classification_to_bandit(
    dataset: ClassificationDataset, policy: Policy, seed: int | np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One logged pass of ``policy`` over the rows: (contexts, actions, rewards).

    Reward is 1 when the sampled action equals the true label, else 0; the
    label itself is discarded afterwards.
    """
    rng = as_generator(seed)
    actions = policy.sample(dataset.features, rng)
    rewards = (actions == dataset.labels).astype(float)
    return dataset.features, actions, rewards


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def partition_eval_by_ratio(
    eval_dataset: ClassificationDataset,
    ratio: float,
    pi_1: Policy,
    pi_2: Policy,
    seed: int | np.random.Generator,
) -> StratifiedDataset:
    """Split the evaluation rows into two strata with size ratio ``n_1/n_2``.

    Rows are assigned by random permutation (without replacement); the
    first stratum is logged with ``pi_1``, the rest with ``pi_2``.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    n = eval_dataset.n_rows
    n_1 = _round_half_up(n * ratio / (1.0 + ratio))
    if n_1 == 0 or n_1 == n:
        raise ValueError(f"ratio {ratio} leaves an empty stratum for {n} rows")
    rng = as_generator(seed)
    perm = rng.permutation(n)
    strata = []
    for rows, policy in ((perm[:n_1], pi_1), (perm[n_1:], pi_2)):
        part = eval_dataset.subset(rows)
        contexts, actions, rewards = classification_to_bandit(part, policy, rng)
        strata.append(Stratum(contexts, actions, rewards))
    return StratifiedDataset(tuple(strata))


def write_bandit_csv(dataset: StratifiedDataset, path) -> None:
    """Line-record export: ``k,s_0,...,s_{d-1},a,r`` with a header line."""
    d = dataset.strata[0].contexts.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [f"s_{j}" for j in range(d)] + ["a", "r"])
        for k, stratum in enumerate(dataset.strata):
            for i in range(stratum.size):
                writer.writerow(
                    [k]
                    + [repr(float(v)) for v in stratum.contexts[i]]
                    + [int(stratum.actions[i]), repr(float(stratum.rewards[i]))]
                )


def read_bandit_csv(path) -> StratifiedDataset:
    """Read a file written by :func:`write_bandit_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "k":
            raise CsvParseError(f"{path}: missing bandit-record header")
        d = len(header) - 3
        by_logger: dict[int, list[tuple[list[float], int, float]]] = {}
        for row in reader:
            if not row:
                continue
            k = int(row[0])
            feats = [float(v) for v in row[1 : 1 + d]]
            by_logger.setdefault(k, []).append((feats, int(row[1 + d]), float(row[2 + d])))
    strata = []
    for k in range(max(by_logger) + 1):
        entries = by_logger.get(k, [])
        if entries:
            feats, actions, rewards = zip(*entries)
            strata.append(Stratum(np.asarray(feats), np.asarray(actions), np.asarray(rewards)))
        else:
            strata.append(Stratum(np.empty((0, d)), np.empty(0, dtype=int), np.empty(0)))
    return StratifiedDataset(tuple(strata))
