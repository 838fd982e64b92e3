"""Benchmark harness and oracle verification suite.

``run_benchmark`` reproduces the classification-to-bandit protocol: train a
deterministic classifier policy on a 30% split, log the remaining rows
with two mixture policies at a grid of stratum-size ratios, and score a
configurable set of estimators over seeded replications, reporting
relative root-mean-squared error.  All logging policies are treated as
unknown and estimated per cross-fit fold.

``run_theorem_suite`` replays the exact (enumeration-based) checks:
unbiasedness, the variance orderings, minimal-variance optimality,
stratified-versus-iid domination, and the instance-dependent ordering
search, printing one pass/fail line per check.
"""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .core import (
    DiscreteEnvironment,
    StratifiedDataset,
    as_generator,
    policy_table,
    policy_value_exact,
)
from .estimators import (
    InverseMarginal,
    InversePerLogger,
    SimplexWeighted,
    ZeroControlVariate,
    _per_stratum_is_scores,
    gamma_estimate,
    precision_weights,
    split_folds,
)
from .nuisance import FitConfig, fit_behavior, fit_q
from .oracle import (
    DilemmaSearchConfig,
    exact_moments_iid,
    exact_moments_stratified,
    find_dilemma_instances,
    gamma_score,
    is_score,
    monte_carlo_is_variances,
    oracle_lambda_star,
    phi_score,
    variance_is,
    variance_weighted_is,
    weighted_is_score,
)
from .pipeline import (
    ClassificationDataset,
    build_policy_suite,
    load_csv_dataset,
    make_synthetic_multiclass,
    partition_eval_by_ratio,
    policy_accuracy,
    split_train_eval,
    train_det_policy,
)
from .policies import Policy, TabularPolicy, marginal_policy
from .variance import QClass, efficiency_bound, mrdr_fit, smrdr_fit

logger = logging.getLogger(__name__)

ESTIMATOR_NAMES = ("is", "is_avg", "is_pw", "dr", "dr_avg", "dr_pw", "smrdr", "mrdr")
DEFAULT_RATIOS = (0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0)

RESULTS_CSV = "results.csv"
MANIFEST_JSON = "manifest.json"
FIGURE_CSVS = {
    "fig_dr_vs_is.csv": ("is", "is_avg", "is_pw", "dr", "dr_avg", "dr_pw", "smrdr"),
    "fig_smrdr_vs_mrdr.csv": ("smrdr", "mrdr"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    rows: int = 2000
    classes: int = 4
    features: int = 5
    separation: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a benchmark run depends on; hashable via its JSON form."""

    dataset_path: str | None = None
    label_column: str | int = "label"
    synthetic: SyntheticSpec | None = SyntheticSpec()
    train_fraction: float = 0.3
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    replications: int = 200
    estimators: tuple[str, ...] = ESTIMATOR_NAMES
    folds: int = 2
    seed: int = 0
    threads: int = 1
    out_dir: str = "bench_out"
    nuisance_fit: FitConfig = FitConfig(learning_rate=0.5, iterations=300, l2_penalty=1e-4)
    variance_fit: FitConfig = FitConfig(learning_rate=0.5, iterations=300, l2_penalty=1e-4)
    n_starts: int = 3
    propensity_floor: float = 1e-6

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if any(r <= 0 for r in self.ratios):
            raise ConfigError("ratios must be positive")
        unknown = set(self.estimators) - set(ESTIMATOR_NAMES)
        if unknown:
            raise ConfigError(f"unknown estimators: {sorted(unknown)}")
        if self.dataset_path is None and self.synthetic is None:
            raise ConfigError("either dataset_path or synthetic must be given")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        kwargs = {}
        dataset = raw.pop("dataset", None)
        if dataset is not None:
            if "path" in dataset:
                kwargs["dataset_path"] = dataset["path"]
                kwargs["label_column"] = dataset.get("label_column", "label")
                kwargs["synthetic"] = None
            elif "synthetic" in dataset:
                kwargs["synthetic"] = SyntheticSpec(**dataset["synthetic"])
            else:
                raise ConfigError("dataset must contain 'path' or 'synthetic'")
        for key in ("nuisance_fit", "variance_fit"):
            if key in raw:
                kwargs[key] = FitConfig(**raw.pop(key))
        for key in ("ratios", "estimators"):
            if key in raw:
                kwargs[key] = tuple(raw.pop(key))
        valid = set(cls.__dataclass_fields__)
        for key, value in raw.items():
            if key not in valid:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "synthetic" and isinstance(value, dict):
                value = SyntheticSpec(**value)
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        return out

    def sha256(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Estimator evaluation on one logged dataset, all logging policies estimated
# ---------------------------------------------------------------------------


def evaluate_estimators(
    data: StratifiedDataset,
    pi_e: Policy,
    names: Sequence[str] = ESTIMATOR_NAMES,
    n_folds: int = 2,
    nuisance_fit: FitConfig = FitConfig(),
    variance_fit: FitConfig = FitConfig(),
    n_starts: int = 3,
    propensity_floor: float = 1e-6,
    seed: int | np.random.Generator = 0,
) -> tuple[dict[str, float], dict[str, float]]:
    """Cross-fitted estimates with per-fold estimated logging policies.

    Behavior models (pooled for the marginal policy, one per stratum for
    the per-logger weights), the reward model, and the variance-minimizing
    control variates are each fit on the training part of every fold and
    shared across the estimators that need them.  A failing estimator is
    reported as NaN without aborting the others.

    Returns (values, wall_ms) keyed by estimator name.
    """
    n_actions = pi_e.n_actions
    feature_dim = data.strata[0].contexts.shape[1]
    qclass = QClass(n_actions, feature_dim)
    zero = ZeroControlVariate(n_actions)
    sums = {name: 0.0 for name in names}
    wall = {name: 0.0 for name in names}
    dead: set[str] = set()

    for eval_part, train_part in split_folds(data, n_folds, seed):
        if eval_part.total == 0:
            continue
        cache: dict[str, object] = {}

        def shared(key: str, fn: Callable[[], object]):
            if key not in cache:
                cache[key] = fn()
            return cache[key]

        def pi_star_hat():
            contexts, actions, _, _ = train_part.pooled()
            return shared("pi_star", lambda: fit_behavior(contexts, actions, n_actions, nuisance_fit))

        def per_logger_hat():
            return shared(
                "per_logger",
                lambda: tuple(
                    fit_behavior(st.contexts, st.actions, n_actions, nuisance_fit)
                    for st in train_part.strata
                ),
            )

        def q_hat():
            contexts, actions, rewards, _ = train_part.pooled()
            return shared("q", lambda: fit_q(contexts, actions, rewards, n_actions, nuisance_fit))

        def nuisances(name: str):
            if name == "is":
                return InverseMarginal(pi_star_hat(), propensity_floor), zero
            if name == "is_avg":
                return InversePerLogger(per_logger_hat(), propensity_floor), zero
            if name == "is_pw":
                scores = _per_stratum_is_scores(train_part, pi_e, per_logger_hat(), propensity_floor)
                lam = precision_weights([float(np.var(s)) for s in scores], train_part.sizes)
                return SimplexWeighted(per_logger_hat(), lam, eval_part.proportions, propensity_floor), zero
            if name == "dr":
                return InverseMarginal(pi_star_hat(), propensity_floor), q_hat()
            if name == "dr_avg":
                return InversePerLogger(per_logger_hat(), propensity_floor), q_hat()
            if name == "dr_pw":
                variances = _floored_dr_variances(
                    train_part, pi_e, per_logger_hat(), q_hat(), propensity_floor
                )
                lam = precision_weights(variances, train_part.sizes)
                return SimplexWeighted(per_logger_hat(), lam, eval_part.proportions, propensity_floor), q_hat()
            if name == "smrdr":
                g = shared(
                    "smrdr_g",
                    lambda: smrdr_fit(train_part, qclass, pi_e, pi_star_hat(), variance_fit, n_starts),
                )
                return InverseMarginal(pi_star_hat(), propensity_floor), g
            if name == "mrdr":
                g = shared(
                    "mrdr_g",
                    lambda: mrdr_fit(train_part, qclass, pi_e, pi_star_hat(), variance_fit, n_starts),
                )
                return InverseMarginal(pi_star_hat(), propensity_floor), g
            raise ConfigError(f"unknown estimator {name!r}")

        for name in names:
            if name in dead:
                continue
            start = time.perf_counter()
            try:
                h, g = nuisances(name)
                sums[name] += eval_part.total * gamma_estimate(eval_part, h, g, pi_e)
            except Exception:
                logger.exception("estimator %s failed on a fold", name)
                dead.add(name)
            finally:
                wall[name] += 1000.0 * (time.perf_counter() - start)

    values = {
        name: (float("nan") if name in dead else sums[name] / data.total) for name in names
    }
    return values, wall


def _floored_dr_variances(train, pi_e, models, g, floor) -> list[float]:
    variances = []
    for stratum, model in zip(train.strata, models):
        rows = np.arange(stratum.size)
        pe = pi_e.prob_matrix(stratum.contexts)
        pk = np.maximum(model.prob_matrix(stratum.contexts)[rows, stratum.actions], floor)
        pe_logged = pe[rows, stratum.actions]
        gvals = g.values(stratum.contexts)
        w = np.where(pe_logged > 0, pe_logged / pk, 0.0)
        phi = w * (stratum.rewards - gvals[rows, stratum.actions]) + (pe * gvals).sum(axis=1)
        variances.append(float(np.var(phi)) if stratum.size else 0.0)
    return variances


# ---------------------------------------------------------------------------
# Relative RMSE
# ---------------------------------------------------------------------------


def relative_rmse(true_j: float, estimates: Sequence[float]) -> float:
    """``sqrt(mean((J - Jhat_m)^2)) / J`` over the replications."""
    if true_j == 0:
        raise ValueError("relative RMSE is undefined for a zero true value")
    estimates = np.asarray(estimates, dtype=float)
    if estimates.size < 1:
        raise ValueError("at least one estimate required")
    return float(np.sqrt(np.mean((true_j - estimates) ** 2)) / true_j)


def relative_rmse_se(true_j: float, estimates: Sequence[float]) -> float:
    """Monte Carlo standard error of the relative RMSE (delta method)."""
    estimates = np.asarray(estimates, dtype=float)
    m = estimates.size
    if m < 2:
        return float("nan")
    sq = (true_j - estimates) ** 2
    mse = float(np.mean(sq))
    if mse == 0.0:
        return 0.0
    se_mse = float(np.std(sq, ddof=1)) / np.sqrt(m)
    return float(se_mse / (2.0 * np.sqrt(mse)) / true_j)


# ---------------------------------------------------------------------------
# Benchmark loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    estimator: str
    ratio: float
    relative_rmse: float
    rmse_se: float
    n_reps: int
    wall_ms: float


@dataclass(frozen=True)
class BenchmarkReport:
    rows: tuple[ResultRow, ...]
    true_value: float
    failures: dict[str, dict[float, int]]
    total_failures: tuple[str, ...]  # estimators that failed in every replication
    out_dir: str


def _prepare_fixture(config: ExperimentConfig):
    if config.dataset_path is not None:
        dataset = load_csv_dataset(config.dataset_path, config.label_column)
    else:
        spec = config.synthetic
        dataset = make_synthetic_multiclass(
            spec.rows, spec.classes, spec.features, seed=config.seed, separation=spec.separation
        )
    split = split_train_eval(dataset, config.train_fraction, seed=config.seed)
    det = train_det_policy(split.train, config.nuisance_fit)
    pi_e, pi_1, pi_2 = build_policy_suite(det)
    true_j = policy_accuracy(det, split.eval)
    return split, pi_e, pi_1, pi_2, true_j


def _replication(payload) -> tuple[int, int, dict[str, float], dict[str, float]]:
    (eval_ds, pi_e, pi_1, pi_2, config, ratio_index, m) = payload
    ss = np.random.SeedSequence([config.seed, ratio_index, m])
    rng_data, rng_folds = [np.random.default_rng(child) for child in ss.spawn(2)]
    data = partition_eval_by_ratio(eval_ds, config.ratios[ratio_index], pi_1, pi_2, rng_data)
    values, wall = evaluate_estimators(
        data,
        pi_e,
        names=config.estimators,
        n_folds=config.folds,
        nuisance_fit=config.nuisance_fit,
        variance_fit=config.variance_fit,
        n_starts=config.n_starts,
        propensity_floor=config.propensity_floor,
        seed=rng_folds,
    )
    return ratio_index, m, values, wall


def run_benchmark(config: ExperimentConfig) -> BenchmarkReport:
    """Run the full replication study and write results under ``out_dir``.

    Per-replication seeds are derived from (seed, ratio index, replication
    index), so results do not depend on the worker count.  A replication in
    which an estimator raises is recorded as a failed cell; the run aborts
    only on configuration errors.
    """
    split, pi_e, pi_1, pi_2, true_j = _prepare_fixture(config)
    payloads = [
        (split.eval, pi_e, pi_1, pi_2, config, ratio_index, m)
        for ratio_index in range(len(config.ratios))
        for m in range(1, config.replications + 1)
    ]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(_replication, payloads, chunksize=4))
    else:
        outcomes = [_replication(p) for p in payloads]

    estimates: dict[tuple[str, int], list[float]] = {}
    wall_total: dict[tuple[str, int], float] = {}
    for ratio_index, _m, values, wall in outcomes:
        for name in config.estimators:
            key = (name, ratio_index)
            estimates.setdefault(key, [])
            if np.isfinite(values[name]):
                estimates[key].append(values[name])
            wall_total[key] = wall_total.get(key, 0.0) + wall[name]

    rows = []
    failures: dict[str, dict[float, int]] = {}
    total_failures = []
    for name in config.estimators:
        for ratio_index, ratio in enumerate(config.ratios):
            ok = estimates[(name, ratio_index)]
            n_failed = config.replications - len(ok)
            if n_failed:
                failures.setdefault(name, {})[ratio] = n_failed
            rows.append(
                ResultRow(
                    estimator=name,
                    ratio=float(ratio),
                    relative_rmse=relative_rmse(true_j, ok) if ok else float("nan"),
                    rmse_se=relative_rmse_se(true_j, ok) if ok else float("nan"),
                    n_reps=len(ok),
                    wall_ms=wall_total[(name, ratio_index)],
                )
            )
        if all(not estimates[(name, i)] for i in range(len(config.ratios))):
            total_failures.append(name)

    report = BenchmarkReport(
        rows=tuple(rows),
        true_value=true_j,
        failures=failures,
        total_failures=tuple(total_failures),
        out_dir=config.out_dir,
    )
    _write_outputs(config, report)
    return report


def _format_row(row: ResultRow) -> list[str]:
    return [
        row.estimator,
        repr(float(row.ratio)),
        repr(float(row.relative_rmse)),
        repr(float(row.rmse_se)),
        str(row.n_reps),
        repr(float(row.wall_ms)),
    ]


def _write_csv(path: Path, rows: Sequence[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("estimator,ratio,relative_rmse,rmse_se,M,wall_ms\n")
        for row in rows:
            fh.write(",".join(_format_row(row)) + "\n")


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return f"stratope-{__version__}"


def _write_outputs(config: ExperimentConfig, report: BenchmarkReport) -> None:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / RESULTS_CSV, report.rows)
    for filename, names in FIGURE_CSVS.items():
        subset = [row for row in report.rows if row.estimator in names]
        if subset:
            _write_csv(out_dir / filename, subset)
    manifest = {
        "config": config.to_dict(),
        "config_sha256": config.sha256(),
        "seed_scheme": "numpy SeedSequence([seed, ratio_index, replication]), replication in 1..M",
        "true_policy_value": report.true_value,
        "failures": {k: {repr(r): c for r, c in v.items()} for k, v in report.failures.items()},
        "total_failures": list(report.total_failures),
        "version": __version__,
        "numpy_version": np.__version__,
        "git_describe": _git_describe(),
    }
    with open(out_dir / MANIFEST_JSON, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Random finite instances for the oracle checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomInstance:
    env: DiscreteEnvironment
    loggers: tuple[Policy, ...]
    sizes: tuple[int, ...]
    pi_e: Policy

    @property
    def rho(self) -> np.ndarray:
        sizes = np.asarray(self.sizes, dtype=float)
        return sizes / sizes.sum()

    @property
    def pi_star(self) -> Policy:
        return marginal_policy(self.loggers, self.rho)


def _random_table(rng: np.random.Generator, n_contexts: int, n_actions: int) -> np.ndarray:
    # strictly positive rows: whole weak overlap holds for any pi_e
    table = rng.dirichlet(np.ones(n_actions), size=n_contexts)
    return 0.85 * table + 0.15 / n_actions


def random_instance(
    rng: np.random.Generator,
    max_contexts: int = 3,
    max_actions: int = 3,
    max_loggers: int = 3,
) -> RandomInstance:
    """A small random environment with strictly positive tabular policies."""
    n_contexts = int(rng.integers(1, max_contexts + 1))
    n_actions = int(rng.integers(2, max_actions + 1))
    n_loggers = int(rng.integers(2, max_loggers + 1))
    env = DiscreteEnvironment(
        rng.dirichlet(np.ones(n_contexts)),
        rng.uniform(0.05, 0.95, size=(n_contexts, n_actions)),
    )
    loggers = tuple(TabularPolicy(_random_table(rng, n_contexts, n_actions)) for _ in range(n_loggers))
    sizes = tuple(int(s) for s in rng.integers(3, 9, size=n_loggers))
    pi_e = TabularPolicy(_random_table(rng, n_contexts, n_actions))
    return RandomInstance(env, loggers, sizes, pi_e)


def random_constraint_weights(
    rng: np.random.Generator, inst: RandomInstance, scale: float = 1.0
) -> np.ndarray:
    """Random (K, S, A) weight tables satisfying the unbiasedness constraint.

    The first K-1 tables are free draws; the last is solved so that
    ``sum_k rho_k pi_k h_k = scale`` holds cell-wise (``scale`` = 1 gives a
    constraint-satisfying h; other values deliberately break it).
    """
    rho = inst.rho
    tables = [policy_table(logger_k, inst.env) for logger_k in inst.loggers]
    h = np.empty((len(inst.loggers), inst.env.n_contexts, inst.env.n_actions))
    acc = np.zeros_like(tables[0])
    for k in range(len(inst.loggers) - 1):
        h[k] = rng.uniform(0.2, 2.0, size=tables[k].shape)
        acc += rho[k] * tables[k] * h[k]
    h[-1] = (scale - acc) / (rho[-1] * tables[-1])
    return h


def random_control_variate(rng: np.random.Generator, inst: RandomInstance) -> np.ndarray:
    return rng.uniform(-0.5, 1.5, size=inst.env.q_table.shape)


def marginal_table(inst: RandomInstance) -> np.ndarray:
    tables = [policy_table(logger_k, inst.env) for logger_k in inst.loggers]
    return sum(w * t for w, t in zip(inst.rho, tables))


def inverse_marginal_tables(inst: RandomInstance) -> np.ndarray:
    """h(k,.,.) = 1/pi_star as per-logger tables for the tabular score."""
    inv = 1.0 / marginal_table(inst)
    return np.repeat(inv[None, :, :], len(inst.loggers), axis=0)


# ---------------------------------------------------------------------------
# Theorem suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoremSuiteConfig:
    n_instances: int = 50
    n_lambda: int = 5
    n_hg: int = 20
    n_optimality_hg: int = 100
    n_g: int = 20
    mc_replications: int = 1_000_000
    seed: int = 0
    checks: tuple[str, ...] = (
        "unbiasedness",
        "orderings",
        "optimality",
        "stratified_vs_iid",
        "dilemma",
    )
    corrupt_h: bool = False  # negative control: break the weight constraint


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}"


@dataclass(frozen=True)
class TheoremReport:
    results: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def lines(self) -> list[str]:
        return [result.line() for result in self.results]


def _check_unbiasedness(cfg: TheoremSuiteConfig, instances, rng) -> CheckResult:
    tol = 1e-10
    worst = 0.0
    h_scale = 1.02 if cfg.corrupt_h else 1.0
    for inst in instances:
        j_true = policy_value_exact(inst.env, inst.pi_e)
        deviations = []
        pi_star = inst.pi_star
        mean, _ = exact_moments_stratified(inst.env, inst.loggers, inst.sizes, is_score(inst.pi_e, pi_star))
        deviations.append(abs(mean - j_true))
        mean, _ = exact_moments_stratified(
            inst.env, inst.loggers, inst.sizes, weighted_is_score(inst.pi_e, inst.loggers, inst.rho, inst.rho)
        )
        deviations.append(abs(mean - j_true))
        for _ in range(cfg.n_lambda):
            lam = rng.dirichlet(np.ones(len(inst.loggers)))
            f = weighted_is_score(inst.pi_e, inst.loggers, lam, inst.rho)
            mean, _ = exact_moments_stratified(inst.env, inst.loggers, inst.sizes, f)
            deviations.append(abs(mean - j_true))
        for _ in range(cfg.n_hg):
            h = random_constraint_weights(rng, inst) * h_scale
            g = random_control_variate(rng, inst)
            f = gamma_score(inst.pi_e, h, g)
            mean, _ = exact_moments_stratified(inst.env, inst.loggers, inst.sizes, f)
            deviations.append(abs(mean - j_true))
        worst = max(worst, max(deviations))
    return CheckResult(
        "unbiasedness",
        worst <= tol,
        worst,
        f"worst |oracle mean - J| = {worst:.3e} (tol {tol:.0e})",
    )


def _check_orderings(cfg: TheoremSuiteConfig, instances, rng) -> CheckResult:
    tol = -1e-12
    worst = np.inf
    for inst in instances:
        pi_star = inst.pi_star
        v_is = variance_is(inst.env, inst.loggers, inst.sizes, inst.pi_e, pi_star)
        v_avg = variance_weighted_is(inst.env, inst.loggers, inst.sizes, inst.pi_e, inst.rho)
        lam = oracle_lambda_star(inst.env, inst.loggers, inst.sizes, inst.pi_e)
        v_pw = variance_weighted_is(inst.env, inst.loggers, inst.sizes, inst.pi_e, lam)
        worst = min(worst, v_avg - v_is, v_avg - v_pw)
    return CheckResult(
        "orderings",
        worst >= tol,
        worst,
        f"min(var[IS-Avg] - var[IS], var[IS-Avg] - var[IS-PW]) = {worst:.3e} (>= {tol:.0e})",
    )


def _check_optimality(cfg: TheoremSuiteConfig, instances, rng) -> CheckResult:
    tol_eq = 1e-10
    tol_dom = -1e-12
    worst_eq = 0.0
    worst_dom = np.inf
    for inst in instances:
        n = sum(inst.sizes)
        h_opt = inverse_marginal_tables(inst)
        f_opt = gamma_score(inst.pi_e, h_opt, inst.env.q_table)
        _, v_opt = exact_moments_stratified(inst.env, inst.loggers, inst.sizes, f_opt)
        v_star = efficiency_bound(inst.env, inst.pi_e, inst.loggers, inst.rho)
        worst_eq = max(worst_eq, abs(v_opt - v_star / n))
        for _ in range(cfg.n_optimality_hg):
            h = random_constraint_weights(rng, inst)
            g = random_control_variate(rng, inst)
            _, v = exact_moments_stratified(inst.env, inst.loggers, inst.sizes, gamma_score(inst.pi_e, h, g))
            worst_dom = min(worst_dom, v - v_opt)
    passed = worst_eq <= tol_eq and worst_dom >= tol_dom
    return CheckResult(
        "optimality",
        passed,
        worst_eq,
        f"worst |var - V*/n| = {worst_eq:.3e} (tol {tol_eq:.0e}); "
        f"min(var(h,g) - var_opt) = {worst_dom:.3e} (>= {tol_dom:.0e})",
    )


def _check_stratified_vs_iid(cfg: TheoremSuiteConfig, instances, rng) -> CheckResult:
    tol_dom = -1e-12
    tol_eq = 1e-10
    strict_gap = 1e-6
    worst_dom = np.inf
    worst_eq = 0.0
    all_strict = True
    for inst in instances:
        n = sum(inst.sizes)
        pi_star = inst.pi_star
        found_strict = False
        for idx in range(cfg.n_g + 1):
            g = inst.env.q_table if idx == 0 else random_control_variate(rng, inst)
            f = phi_score(inst.pi_e, pi_star, g)
            _, v_strat = exact_moments_stratified(inst.env, inst.loggers, inst.sizes, f)
            _, v_iid = exact_moments_iid(inst.env, inst.loggers, inst.rho, n, f)
            worst_dom = min(worst_dom, v_iid - v_strat)
            if idx == 0:
                worst_eq = max(worst_eq, abs(v_iid - v_strat))
            elif v_iid - v_strat > strict_gap:
                found_strict = True
        all_strict = all_strict and found_strict
    passed = worst_dom >= tol_dom and worst_eq <= tol_eq and all_strict
    return CheckResult(
        "stratified_vs_iid",
        passed,
        worst_dom,
        f"min(var_iid - var_strat) = {worst_dom:.3e} (>= {tol_dom:.0e}); "
        f"worst |gap at g=q| = {worst_eq:.3e} (tol {tol_eq:.0e}); "
        f"strict case per instance: {all_strict}",
    )


def _check_dilemma(cfg: TheoremSuiteConfig, instances, rng) -> CheckResult:
    inst_is, inst_pw = find_dilemma_instances(DilemmaSearchConfig())
    ok = True
    details = []
    for label, inst in (("IS<PW", inst_is), ("PW<IS", inst_pw)):
        mc_is, mc_pw = monte_carlo_is_variances(inst, cfg.mc_replications, seed=rng)
        consistent = (mc_is < mc_pw) == (inst.var_is < inst.var_is_pw)
        ok = ok and consistent
        details.append(
            f"{label}: oracle ({inst.var_is:.4g}, {inst.var_is_pw:.4g}) "
            f"mc ({mc_is:.4g}, {mc_pw:.4g}) consistent={consistent}"
        )
    return CheckResult("dilemma", ok, 0.0, "; ".join(details))


_CHECKS = {
    "unbiasedness": _check_unbiasedness,
    "orderings": _check_orderings,
    "optimality": _check_optimality,
    "stratified_vs_iid": _check_stratified_vs_iid,
    "dilemma": _check_dilemma,
}


def run_theorem_suite(config: TheoremSuiteConfig = TheoremSuiteConfig()) -> TheoremReport:
    """Run the enumeration-based checks; an empty check list is a no-op success."""
    unknown = set(config.checks) - set(_CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks: {sorted(unknown)}")
    rng = as_generator(config.seed)
    instances = [random_instance(rng) for _ in range(config.n_instances)]
    results = []
    for name in config.checks:
        results.append(_CHECKS[name](config, instances, rng))
    return TheoremReport(tuple(results))
