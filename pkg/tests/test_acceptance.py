"""End-to-end acceptance checks.

Each test prints one PASS line with its margins; stated runtime budgets are
asserted with wall-clock timers.  The heavy Monte Carlo studies pin their
seeds so every run is reproducible.
"""

import json
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

import stratope as sp
from stratope import cli
from stratope.estimators import TableControlVariate, dr_estimated_propensity
from stratope.experiment import (
    ExperimentConfig,
    SyntheticSpec,
    TheoremSuiteConfig,
    run_theorem_suite,
)
from stratope.nuisance import (
    FitConfig,
    binary_logistic_loss_grad,
    logistic_q_fitter,
    multinomial_loss_grad,
    pooled_behavior_fitter,
    squared_loss_grad,
    _with_intercept,
)
from stratope.policies import TabularPolicy, marginal_policy
from stratope.variance import (
    QClass,
    _objective_and_grad,
    _prepare_parts,
    mrdr_estimate,
    mrdr_fit,
    smrdr_estimate,
    smrdr_fit,
    variance_objective,
)

SUITE_SEED = 424242


@pytest.fixture(scope="module")
def suite_report():
    config = TheoremSuiteConfig(
        n_instances=50,
        n_lambda=5,
        n_hg=20,
        n_optimality_hg=100,
        n_g=20,
        seed=SUITE_SEED,
        checks=("unbiasedness", "orderings", "optimality", "stratified_vs_iid"),
    )
    start = time.perf_counter()
    report = run_theorem_suite(config)
    elapsed = time.perf_counter() - start
    return report, elapsed


def _result(report, name):
    return next(r for r in report.results if r.name == name)


def test_criterion_1_oracle_unbiasedness(suite_report):
    start = time.perf_counter()
    solo = run_theorem_suite(
        TheoremSuiteConfig(n_instances=50, seed=SUITE_SEED, checks=("unbiasedness",))
    )
    elapsed = time.perf_counter() - start
    result = _result(solo, "unbiasedness")
    assert result.passed, result.detail
    assert result.margin <= 1e-10
    assert elapsed < 10.0
    # the combined suite sees the same instances and must agree
    assert _result(suite_report[0], "unbiasedness").passed
    print(f"PASS criterion 1 (oracle unbiasedness): {result.detail}; {elapsed:.1f}s")


def test_criterion_2_variance_orderings(suite_report):
    report, _ = suite_report
    result = _result(report, "orderings")
    assert result.passed, result.detail
    assert result.margin >= -1e-12
    print(f"PASS criterion 2 (variance orderings): {result.detail}")


def test_criterion_3_dilemma_reproduction(tmp_path):
    out = tmp_path / "dilemma.json"
    start = time.perf_counter()
    code = cli.main(
        ["dilemma", "--out", str(out), "--mc-reps", "1000000", "--seed", "7"]
    )
    elapsed = time.perf_counter() - start
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["is_wins"]["var_is"] < payload["is_wins"]["var_is_pw"]
    assert payload["pw_wins"]["var_is_pw"] < payload["pw_wins"]["var_is"]
    assert payload["is_wins"]["mc_consistent"] and payload["pw_wins"]["mc_consistent"]
    assert elapsed < 60.0
    print(
        "PASS criterion 3 (dilemma both ways, 1e6-rep confirmation): "
        f"is-wins ({payload['is_wins']['var_is']:.4g} < {payload['is_wins']['var_is_pw']:.4g}), "
        f"pw-wins ({payload['pw_wins']['var_is_pw']:.4g} < {payload['pw_wins']['var_is']:.4g}); "
        f"{elapsed:.1f}s"
    )


def test_criterion_4_minimal_variance(suite_report):
    report, _ = suite_report
    result = _result(report, "optimality")
    assert result.passed, result.detail
    assert result.margin <= 1e-10
    print(f"PASS criterion 4 (minimal variance attained): {result.detail}")


def test_criterion_5_stratified_vs_iid(suite_report):
    report, _ = suite_report
    result = _result(report, "stratified_vs_iid")
    assert result.passed, result.detail
    print(f"PASS criterion 5 (stratified dominates iid): {result.detail}")


# ---------------------------------------------------------------------------
# Monte Carlo criteria share one small well-specified environment: one-hot
# contexts make both logistic nuisance models exactly representable.
# ---------------------------------------------------------------------------

MC_ENV = sp.DiscreteEnvironment([0.6, 0.4], [[0.7, 0.3], [0.4, 0.6]])
MC_LOGGERS = (
    TabularPolicy([[0.65, 0.35], [0.35, 0.65]]),
    TabularPolicy([[0.35, 0.65], [0.55, 0.45]]),
)
MC_PI_E = TabularPolicy([[0.6, 0.4], [0.3, 0.7]])
MC_PI_STAR = marginal_policy(list(MC_LOGGERS), [0.5, 0.5])
MC_FIT = FitConfig(learning_rate=1.0, iterations=400, l2_penalty=1e-7)
WRONG_PI = TabularPolicy([[0.85, 0.15], [0.85, 0.15]])
WRONG_Q = np.full((2, 2), 0.9)


def _efficiency_rep(arg):
    base, m = arg
    data = sp.sample_stratified(MC_ENV, MC_LOGGERS, (10_000, 10_000), seed=base + m)
    return dr_estimated_propensity(
        data,
        MC_PI_E,
        pooled_behavior_fitter(2, MC_FIT),
        logistic_q_fitter(2, MC_FIT),
        n_folds=2,
        seed=base + 50_000 + m,
    )


def test_criterion_6_efficiency_convergence():
    n = 20_000
    reps = 500
    true_j = sp.policy_value_exact(MC_ENV, MC_PI_E)
    v_star = sp.efficiency_bound(MC_ENV, MC_PI_E, MC_LOGGERS, [0.5, 0.5])
    start = time.perf_counter()
    with ProcessPoolExecutor(max_workers=4) as pool:
        estimates = np.array(
            list(pool.map(_efficiency_rep, [(300_000, m) for m in range(reps)], chunksize=8))
        )
    elapsed = time.perf_counter() - start
    mse = float(np.mean((estimates - true_j) ** 2))
    ratio = n * mse / v_star
    assert elapsed < 600.0
    assert abs(ratio - 1.0) <= 0.15, f"n*MSE/V* = {ratio:.4f}"
    print(
        f"PASS criterion 6 (efficiency at n=20000, {reps} reps): "
        f"n*MSE={n * mse:.4f} vs V*={v_star:.4f} (ratio {ratio:.3f}); {elapsed:.0f}s"
    )


def _robustness_rep(arg):
    kind, base, m = arg
    data = sp.sample_stratified(MC_ENV, MC_LOGGERS, (2500, 2500), seed=base + m)
    wrong_q_fitter = lambda train: TableControlVariate(WRONG_Q)
    if kind == "wrong_q":
        return dr_estimated_propensity(
            data, MC_PI_E, lambda train: MC_PI_STAR, wrong_q_fitter, seed=m
        )
    if kind == "wrong_pi":
        return dr_estimated_propensity(
            data, MC_PI_E, lambda train: WRONG_PI, logistic_q_fitter(2, MC_FIT), seed=m
        )
    return dr_estimated_propensity(data, MC_PI_E, lambda train: WRONG_PI, wrong_q_fitter, seed=m)


def test_criterion_7_double_robustness():
    reps = 500
    true_j = sp.policy_value_exact(MC_ENV, MC_PI_E)
    outcomes = {}
    for kind, base in (("wrong_q", 210_000), ("wrong_pi", 220_000), ("both_wrong", 230_000)):
        with ProcessPoolExecutor(max_workers=4) as pool:
            values = np.array(
                list(pool.map(_robustness_rep, [(kind, base, m) for m in range(reps)], chunksize=10))
            )
        bias = values.mean() - true_j
        se = values.std(ddof=1) / np.sqrt(reps)
        outcomes[kind] = (bias, se, abs(bias) / se)
    assert outcomes["wrong_q"][2] < 3.0, outcomes["wrong_q"]
    assert outcomes["wrong_pi"][2] < 3.0, outcomes["wrong_pi"]
    assert outcomes["both_wrong"][2] > 5.0, outcomes["both_wrong"]
    print(
        "PASS criterion 7 (double robustness at n=5000): "
        f"wrong-q {outcomes['wrong_q'][2]:.2f} SE, wrong-propensity {outcomes['wrong_pi'][2]:.2f} SE, "
        f"negative control {outcomes['both_wrong'][2]:.0f} SE"
    )


# ---------------------------------------------------------------------------
# Variance-tailored control variates: misspecified per-action-constant class
# on an environment whose mean rewards vary strongly with the context.
# ---------------------------------------------------------------------------

CV_ENV = sp.DiscreteEnvironment([0.95, 0.05], [[0.99, 0.5], [0.01, 0.5]])
CV_PI_E = TabularPolicy([[1.0, 0.0], [1.0, 0.0]])
CV_LOGGERS = (
    TabularPolicy([[0.98, 0.02], [0.02, 0.98]]),
    TabularPolicy([[0.02, 0.98], [0.02, 0.98]]),
)
CV_CLASS = QClass(2, 2, feature_indices=())
CV_FIT = FitConfig(learning_rate=0.5, iterations=300, l2_penalty=1e-6, seed=0)


def _cv_rep(m):
    sizes = (500, 5000)  # stratum ratio 0.1
    rho = np.asarray(sizes) / sum(sizes)
    pi_star = marginal_policy(list(CV_LOGGERS), rho)
    data = sp.sample_stratified(CV_ENV, CV_LOGGERS, sizes, seed=5000 + m)
    s = smrdr_estimate(data, CV_CLASS, CV_PI_E, pi_star, CV_FIT, n_folds=2, seed=m, n_starts=2)
    p = mrdr_estimate(data, CV_CLASS, CV_PI_E, pi_star, CV_FIT, n_folds=2, seed=m, n_starts=2)
    return s, p


def test_criterion_8_stratified_objective_beats_pooled():
    sizes = (500, 5000)
    rho = np.asarray(sizes) / sum(sizes)
    pi_star = marginal_policy(list(CV_LOGGERS), rho)

    # (a) the stratified objective prefers its own optimizer on every fixture
    worst_gap = np.inf
    for seed in range(8):
        data = sp.sample_stratified(CV_ENV, CV_LOGGERS, sizes, seed=seed)
        g_s = smrdr_fit(data, CV_CLASS, CV_PI_E, pi_star, CV_FIT)
        g_p = mrdr_fit(data, CV_CLASS, CV_PI_E, pi_star, CV_FIT)
        o_s = variance_objective(data, g_s, CV_PI_E, pi_star, "stratified")
        o_p = variance_objective(data, g_p, CV_PI_E, pi_star, "stratified")
        worst_gap = min(worst_gap, o_p - o_s)
        assert o_s <= o_p + 1e-12

    # (b) replication error comparison at stratum ratio 0.1
    reps = 200
    true_j = sp.policy_value_exact(CV_ENV, CV_PI_E)
    with ProcessPoolExecutor(max_workers=4) as pool:
        pairs = np.array(list(pool.map(_cv_rep, range(reps), chunksize=10)))
    err_s = (true_j - pairs[:, 0]) ** 2
    err_p = (true_j - pairs[:, 1]) ** 2
    rmse_s = np.sqrt(err_s.mean()) / true_j
    rmse_p = np.sqrt(err_p.mean()) / true_j
    diff = err_p - err_s
    t_stat = diff.mean() / (diff.std(ddof=1) / np.sqrt(reps))
    assert rmse_s <= rmse_p
    assert t_stat >= 2.0, f"paired t = {t_stat:.2f}"
    print(
        "PASS criterion 8 (stratified objective wins): "
        f"worst objective gap {worst_gap:.4f}; rel-RMSE {rmse_s:.4f} vs {rmse_p:.4f}, "
        f"paired t = {t_stat:.1f} over {reps} replications"
    )


def test_criterion_9_gradient_checks():
    rng = np.random.default_rng(99)
    worst = 0.0

    def check(fn, theta0):
        nonlocal worst
        _, grad = fn(theta0)
        fd = np.zeros_like(theta0)
        eps = 1e-5
        for idx in np.ndindex(*theta0.shape):
            tp, tm = theta0.copy(), theta0.copy()
            tp[idx] += eps
            tm[idx] -= eps
            fd[idx] = (fn(tp)[0] - fn(tm)[0]) / (2 * eps)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
        assert rel < 1e-4

    design = _with_intercept(rng.normal(size=(80, 3)))
    y_bin = rng.integers(0, 2, size=80).astype(float)
    y_real = rng.normal(size=80)
    actions = rng.integers(0, 3, size=80)
    for _ in range(20):
        check(lambda w: binary_logistic_loss_grad(w, design, y_bin, 1e-3), rng.normal(size=4))
        check(lambda w: squared_loss_grad(w, design, y_real, 1e-3), rng.normal(size=4))
        check(lambda w: multinomial_loss_grad(w, design, actions, 1e-3), rng.normal(size=(3, 4)))

    data = sp.sample_stratified(MC_ENV, MC_LOGGERS, (120, 180), seed=1)
    qclass = QClass(2, 2)
    for pooled in (False, True):
        parts = _prepare_parts(data, MC_PI_E, MC_PI_STAR, pooled, qclass)
        for _ in range(20):
            check(
                lambda t: _objective_and_grad(t, qclass, parts, 1e-3),
                rng.normal(scale=0.8, size=qclass.shape),
            )
    print(f"PASS criterion 9 (gradient checks): worst relative error {worst:.2e}")


# ---------------------------------------------------------------------------
# Full benchmark pipeline
# ---------------------------------------------------------------------------

BENCH_BUDGET_S = 900.0
DR_FAMILY = ("dr", "smrdr")
IS_FAMILY = ("is", "is_avg", "is_pw")


def _bench_config(out_dir):
    return ExperimentConfig(
        synthetic=SyntheticSpec(rows=1500, classes=4, features=5),
        ratios=(0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0),
        replications=200,
        seed=20_240_101,
        threads=2,
        out_dir=str(out_dir),
        nuisance_fit=FitConfig(learning_rate=0.5, iterations=250, l2_penalty=1e-4),
        variance_fit=FitConfig(learning_rate=0.5, iterations=200, l2_penalty=1e-4),
        n_starts=2,
    )


def _strip_wall_column(path):
    lines = path.read_text().splitlines()
    return ["," .join(line.split(",")[:-1]) for line in lines]


def _read_results(path):
    rows = {}
    for line in path.read_text().splitlines()[1:]:
        name, ratio, rmse, se, m, _wall = line.split(",")
        rows[(name, float(ratio))] = (float(rmse), float(se), int(m))
    return rows


def test_criterion_10_benchmark_pipeline(tmp_path):
    cfg_path = tmp_path / "bench.json"
    run_a = tmp_path / "run_a"
    run_b = tmp_path / "run_b"
    config = _bench_config(run_a)
    cfg_path.write_text(
        json.dumps(
            {
                "dataset": {
                    "synthetic": {
                        "rows": config.synthetic.rows,
                        "classes": config.synthetic.classes,
                        "features": config.synthetic.features,
                    }
                },
                "ratios": list(config.ratios),
                "replications": config.replications,
                "seed": config.seed,
                "threads": config.threads,
                "nuisance_fit": {
                    "learning_rate": config.nuisance_fit.learning_rate,
                    "iterations": config.nuisance_fit.iterations,
                    "l2_penalty": config.nuisance_fit.l2_penalty,
                },
                "variance_fit": {
                    "learning_rate": config.variance_fit.learning_rate,
                    "iterations": config.variance_fit.iterations,
                    "l2_penalty": config.variance_fit.l2_penalty,
                },
                "n_starts": config.n_starts,
            }
        )
    )
    start = time.perf_counter()
    code = cli.main(["bench", "--config", str(cfg_path), "--out", str(run_a)])
    elapsed = time.perf_counter() - start
    assert code == 0
    assert elapsed < BENCH_BUDGET_S

    code = cli.main(["bench", "--config", str(cfg_path), "--out", str(run_b)])
    assert code == 0

    # deterministic output: every column except the wall-clock one
    for name in ("results.csv", "fig_dr_vs_is.csv", "fig_smrdr_vs_mrdr.csv"):
        assert _strip_wall_column(run_a / name) == _strip_wall_column(run_b / name)

    rows = _read_results(run_a / "results.csv")
    assert len(rows) == 7 * 8
    assert all(m == 200 for (_, _, m) in rows.values())

    # at the hardest ratio the efficient estimators dominate the weighting-only family
    lines = []
    for dr_name in DR_FAMILY:
        rmse_d, se_d, _ = rows[(dr_name, 0.1)]
        for is_name in IS_FAMILY:
            rmse_i, se_i, _ = rows[(is_name, 0.1)]
            margin = rmse_i - rmse_d
            needed = 2.0 * np.sqrt(se_d**2 + se_i**2)
            assert margin > needed, f"{dr_name} vs {is_name}: {margin:.4f} <= {needed:.4f}"
            lines.append(f"{dr_name}<{is_name} by {margin:.3f} (2SE {needed:.3f})")
    print(
        f"PASS criterion 10 (benchmark pipeline): deterministic, {elapsed:.0f}s/run, "
        + "; ".join(lines)
    )
