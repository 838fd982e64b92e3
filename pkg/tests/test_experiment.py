import json

import numpy as np
import pytest

import stratope as sp
from stratope import cli
from stratope.experiment import (
    ConfigError,
    ESTIMATOR_NAMES,
    ExperimentConfig,
    SyntheticSpec,
    TheoremSuiteConfig,
    evaluate_estimators,
    random_constraint_weights,
    random_instance,
    relative_rmse,
    relative_rmse_se,
    run_benchmark,
    run_theorem_suite,
)
from stratope.nuisance import FitConfig
from stratope.pipeline import load_csv_dataset


class TestRelativeRmse:
    def test_exact_estimates_give_zero(self):
        assert relative_rmse(0.5, [0.5, 0.5, 0.5]) == 0.0

    def test_single_estimate(self):
        assert relative_rmse(1.0, [0.9]) == pytest.approx(0.1)

    def test_two_estimates(self):
        # (1 / (J sqrt(M))) * sqrt(sum of squared errors) with J=0.5, M=2
        assert relative_rmse(0.5, [0.4, 0.6]) == pytest.approx(0.2)

    def test_zero_true_value_rejected(self):
        with pytest.raises(ValueError):
            relative_rmse(0.0, [0.1])

    def test_se_positive_for_spread_estimates(self):
        se = relative_rmse_se(0.5, [0.4, 0.45, 0.6, 0.52])
        assert se > 0
        assert np.isnan(relative_rmse_se(0.5, [0.4]))


class TestConfig:
    def test_dataset_block_with_synthetic(self):
        cfg = ExperimentConfig.from_dict(
            {"dataset": {"synthetic": {"rows": 100, "classes": 3, "features": 2}}, "replications": 2}
        )
        assert cfg.synthetic.rows == 100
        assert cfg.dataset_path is None

    def test_dataset_block_with_path(self):
        cfg = ExperimentConfig.from_dict(
            {"dataset": {"path": "x.csv", "label_column": 0}, "replications": 1}
        )
        assert cfg.dataset_path == "x.csv"
        assert cfg.synthetic is None

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"replication": 3})

    def test_unknown_estimator_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"estimators": ["is", "magic"]})

    def test_bad_ratio_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"ratios": [0.0, 1.0]})

    def test_json_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"replications": 3, "ratios": [0.5], "seed": 9}))
        cfg = ExperimentConfig.from_json(path)
        assert (cfg.replications, cfg.ratios, cfg.seed) == (3, (0.5,), 9)
        assert len(cfg.sha256()) == 64

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(tmp_path / "nope.json")


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    return ExperimentConfig(
        synthetic=SyntheticSpec(rows=400, classes=3, features=4),
        ratios=(0.5, 2.0),
        replications=3,
        seed=5,
        out_dir=str(tmp_path_factory.mktemp("bench")),
        nuisance_fit=FitConfig(learning_rate=0.5, iterations=80, l2_penalty=1e-4),
        variance_fit=FitConfig(learning_rate=0.5, iterations=60, l2_penalty=1e-4),
        n_starts=2,
    )


class TestRunBenchmark:
    def test_row_shape_contract(self, small_config):
        report = run_benchmark(small_config)
        assert len(report.rows) == len(small_config.ratios) * len(ESTIMATOR_NAMES)
        assert not report.total_failures
        assert all(row.n_reps == 3 for row in report.rows)

    def test_outputs_written(self, small_config):
        out = small_config.out_dir
        lines = open(f"{out}/results.csv").read().splitlines()
        assert lines[0] == "estimator,ratio,relative_rmse,rmse_se,M,wall_ms"
        assert len(lines) == 1 + len(ESTIMATOR_NAMES) * 2
        manifest = json.load(open(f"{out}/manifest.json"))
        assert manifest["config_sha256"] == small_config.sha256()
        assert 0 < manifest["true_policy_value"] < 1

    def test_injected_exact_estimator_gives_zero_rmse(self, small_config, monkeypatch, tmp_path):
        import stratope.experiment as ex

        def fake_evaluate(data, pi_e, names, **kwargs):
            return {name: 0.0 for name in names}, {name: 0.0 for name in names}

        monkeypatch.setattr(ex, "evaluate_estimators", fake_evaluate)
        cfg = ExperimentConfig(
            synthetic=SyntheticSpec(rows=200, classes=2, features=2),
            ratios=(1.0,),
            replications=1,
            estimators=("is",),
            seed=1,
            out_dir=str(tmp_path),
        )
        # make the injected value the exact true one
        split, pi_e, _, _, true_j = ex._prepare_fixture(cfg)

        def exact_evaluate(data, pi_e, names, **kwargs):
            return {name: true_j for name in names}, {name: 0.0 for name in names}

        monkeypatch.setattr(ex, "evaluate_estimators", exact_evaluate)
        report = ex.run_benchmark(cfg)
        assert report.rows[0].relative_rmse == 0.0

    def test_total_failure_recorded(self, monkeypatch, tmp_path):
        import stratope.experiment as ex

        def broken_evaluate(data, pi_e, names, **kwargs):
            return {name: float("nan") for name in names}, {name: 0.0 for name in names}

        monkeypatch.setattr(ex, "evaluate_estimators", broken_evaluate)
        cfg = ExperimentConfig(
            synthetic=SyntheticSpec(rows=200, classes=2, features=2),
            ratios=(1.0,),
            replications=2,
            estimators=("is",),
            seed=1,
            out_dir=str(tmp_path),
        )
        report = ex.run_benchmark(cfg)
        assert report.total_failures == ("is",)
        assert np.isnan(report.rows[0].relative_rmse)


class TestEvaluateEstimators:
    def test_all_names_finite_on_healthy_data(self, toy_env, toy_loggers, uniform2):
        data = sp.sample_stratified(toy_env, toy_loggers, [60, 90], seed=3)
        values, wall = evaluate_estimators(
            data,
            uniform2,
            names=ESTIMATOR_NAMES,
            nuisance_fit=FitConfig(learning_rate=0.5, iterations=80),
            variance_fit=FitConfig(learning_rate=0.5, iterations=60),
            n_starts=1,
            seed=7,
        )
        for name in ESTIMATOR_NAMES:
            assert np.isfinite(values[name]), name
            assert wall[name] >= 0.0

    def test_matches_public_estimator_with_same_folds(self, toy_env, toy_loggers, uniform2):
        # the shared-nuisance fast path must agree with the public function
        # when both see the same fold split and fitted models
        from stratope.estimators import dr_estimated_propensity
        from stratope.nuisance import logistic_q_fitter, pooled_behavior_fitter

        data = sp.sample_stratified(toy_env, toy_loggers, [80, 80], seed=9)
        fit = FitConfig(learning_rate=0.5, iterations=100)
        values, _ = evaluate_estimators(
            data, uniform2, names=("dr",), nuisance_fit=fit, seed=31
        )
        direct = dr_estimated_propensity(
            data,
            uniform2,
            pooled_behavior_fitter(2, fit),
            logistic_q_fitter(2, fit),
            n_folds=2,
            seed=31,
        )
        assert values["dr"] == pytest.approx(direct, abs=1e-12)


class TestTheoremSuite:
    def test_small_scale_suite_passes(self):
        report = run_theorem_suite(
            TheoremSuiteConfig(n_instances=6, n_optimality_hg=10, mc_replications=50_000, seed=3)
        )
        assert report.passed
        assert len(report.lines()) == 5

    def test_corrupted_weights_fail_unbiasedness(self):
        report = run_theorem_suite(
            TheoremSuiteConfig(n_instances=4, checks=("unbiasedness",), corrupt_h=True, seed=3)
        )
        assert not report.passed

    def test_empty_suite_is_noop_success(self):
        report = run_theorem_suite(TheoremSuiteConfig(checks=()))
        assert report.passed
        assert report.results == ()

    def test_unknown_check_rejected(self):
        with pytest.raises(ConfigError):
            run_theorem_suite(TheoremSuiteConfig(checks=("nonsense",)))

    def test_constraint_solver_produces_valid_weights(self, rng):
        from stratope.estimators import TableWeightFunction, check_constraint

        inst = random_instance(rng)
        h = random_constraint_weights(rng, inst)
        assert check_constraint(
            TableWeightFunction(h), inst.loggers, inst.sizes, inst.env, inst.pi_e
        )
        broken = random_constraint_weights(rng, inst, scale=1.1)
        assert not check_constraint(
            TableWeightFunction(broken), inst.loggers, inst.sizes, inst.env, inst.pi_e
        )


class TestCli:
    def test_gen_fixture_writes_loadable_csv(self, tmp_path, capsys):
        out = tmp_path / "fixture.csv"
        code = cli.main(["gen-fixture", "--out", str(out), "--rows", "60", "--classes", "3", "--features", "4"])
        assert code == 0
        ds = load_csv_dataset(out, "label")
        assert ds.n_rows == 60
        assert ds.n_classes == 3

    def test_dilemma_writes_consistent_report(self, tmp_path):
        out = tmp_path / "dilemma.json"
        code = cli.main(["dilemma", "--out", str(out), "--mc-reps", "50000", "--seed", "4"])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["is_wins"]["mc_consistent"]
        assert payload["pw_wins"]["mc_consistent"]

    def test_bench_missing_config_is_exit_2(self):
        assert cli.main(["bench", "--config", "/nonexistent/cfg.json"]) == 2

    def test_bench_bad_config_is_exit_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"estimators": ["warp"]}))
        assert cli.main(["bench", "--config", str(path)]) == 2

    def test_verify_small_config(self, tmp_path, capsys):
        cfg = tmp_path / "suite.json"
        cfg.write_text(
            json.dumps(
                {
                    "n_instances": 4,
                    "n_optimality_hg": 5,
                    "mc_replications": 20000,
                    "checks": ["unbiasedness", "orderings"],
                }
            )
        )
        out = tmp_path / "report.txt"
        code = cli.main(["verify", "--config", str(cfg), "--seed", "2", "--out", str(out)])
        assert code == 0
        text = out.read_text()
        assert text.count("PASS") == 2

    def test_bench_end_to_end_exit_zero(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "dataset": {"synthetic": {"rows": 300, "classes": 3, "features": 3}},
                    "ratios": [1.0],
                    "replications": 2,
                    "estimators": ["is", "dr"],
                    "seed": 3,
                    "nuisance_fit": {"learning_rate": 0.5, "iterations": 60},
                }
            )
        )
        code = cli.main(["bench", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "results.csv").exists()
