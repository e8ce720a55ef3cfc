import math

import numpy as np
import pytest

from app.models.errors import ConfigError, SingularJacobian
from app.models.models import BaselineMode, BenchOp, FitMethod, FrailtyKind, SeMethod, SweepParam
from app.schema.schema import FrailtySpec
from app.services.sim_service import (
    SCENARIOS,
    benchmark_config,
    derived_seed,
    scenario,
    sim_service,
    wilson_interval,
)


def test_derived_seed_is_deterministic_and_distinct():
    assert derived_seed(7, 0) == derived_seed(7, 0)
    seeds = {derived_seed(7, r) for r in range(50)}
    assert len(seeds) == 50
    assert derived_seed(7, 1) != derived_seed(8, 1)
    assert all(0 <= s < 2**63 for s in seeds)


def test_wilson_interval():
    low, high = wilson_interval(95, 100)
    assert low < 0.95 < high
    assert 0.88 < low < 0.90 and 0.97 < high < 0.99
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == pytest.approx(1.0)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenarios_build_valid_configs(name):
    config = scenario(name, seed=3)
    assert config.seed == 3
    assert config.beta == pytest.approx([math.log(2.0), math.log(3.0)])
    assert config.censoring.target_rate == 0.3


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        scenario("weibull")


def test_benchmark_config():
    config = benchmark_config(80, FrailtySpec(kind=FrailtyKind.gamma, theta=2.0), BaselineMode.cumulative, seed=4)
    assert config.n_clusters == 80
    assert config.baseline.mode == BaselineMode.cumulative
    assert config.censoring.params == [130.0, 15.0]


# ------------------------
# simulate
# ------------------------
def test_single_rep_without_standard_errors():
    config = scenario("gamma").model_copy(update={"n_clusters": 60})
    summary = sim_service.simulate(1, config, se_method=SeMethod.none, seed=5)
    assert summary.reps == 1 and summary.n_failed == 0
    names = [row.name for row in summary.rows]
    assert names == ["beta.1", "beta.2", "theta", "Lambda.30", "Lambda.60", "Lambda.90"]
    beta = summary.row("beta.1")
    assert beta.sd_hat is None and beta.mean_se is None and beta.cov_95ci is None
    assert beta.mean_hat == pytest.approx(float(summary.estimates.loc[0, "Z1"]))
    assert summary.row("Lambda.90").value == pytest.approx((0.01 * 90.0) ** 4.6)
    assert math.isnan(summary.runtime_sd)


def test_simulation_is_reproducible_and_worker_independent():
    config = scenario("gamma").model_copy(update={"n_clusters": 40})
    serial = sim_service.simulate(3, config, se_method=SeMethod.none, seed=11)
    parallel = sim_service.simulate(3, config, se_method=SeMethod.none, seed=11, workers=2)
    np.testing.assert_allclose(serial.estimates["Z1"], parallel.estimates["Z1"], rtol=1e-12)
    assert serial.estimates["seed"].tolist() == [derived_seed(11, r) for r in range(3)]


def test_simulation_with_sandwich_coverage():
    config = scenario("gamma").model_copy(update={"n_clusters": 60})
    summary = sim_service.simulate(4, config, seed=2)
    row = summary.row("theta")
    assert row.mean_se > 0
    assert 0.0 <= row.cov_ci_low <= row.cov_95ci <= row.cov_ci_high <= 1.0
    frame = summary.to_frame()
    assert list(frame.columns[:4]) == ["parameter", "value", "mean.hat", "sd.hat"]


def test_misspecified_fit_kind_has_no_true_theta():
    config = scenario("pvf").model_copy(update={"n_clusters": 40})
    summary = sim_service.simulate(1, config, fit_kind=FrailtyKind.gamma, se_method=SeMethod.none, seed=1)
    assert math.isnan(summary.row("theta").value)


def test_simulate_needs_reps():
    with pytest.raises(ConfigError):
        sim_service.simulate(0, scenario("gamma"))


def test_reps_without_standard_errors_leave_coverage(monkeypatch):
    from app.services.variance_service import variance_service

    real = variance_service.sandwich_cov
    calls = []

    def first_call_fails(*args, **kwargs):
        calls.append(1)
        if len(calls) == 1:
            raise SingularJacobian("score Jacobian is singular")
        return real(*args, **kwargs)

    monkeypatch.setattr(variance_service, "sandwich_cov", first_call_fails)
    config = scenario("gamma").model_copy(update={"n_clusters": 50})
    summary = sim_service.simulate(3, config, seed=9)
    assert summary.n_failed == 0 and summary.n_se_failed == 1
    assert summary.estimates["se_error"].notna().sum() == 1
    row = summary.row("beta.1")
    assert math.isfinite(row.mean_se)
    # coverage over the two reps that have standard errors
    assert row.cov_95ci in (0.0, 0.5, 1.0)
    assert math.isfinite(summary.row("theta").mean_hat)


def test_all_standard_errors_failing_gives_no_coverage(monkeypatch):
    from app.services.variance_service import variance_service

    def always_fails(*args, **kwargs):
        raise SingularJacobian("score Jacobian is singular")

    monkeypatch.setattr(variance_service, "sandwich_cov", always_fails)
    config = scenario("gamma").model_copy(update={"n_clusters": 40})
    summary = sim_service.simulate(2, config, seed=4)
    assert summary.n_failed == 0 and summary.n_se_failed == 2
    row = summary.row("theta")
    assert row.mean_se is None and row.cov_95ci is None


# ------------------------
# Benchmarks and sweeps
# ------------------------
def test_benchmark_needs_four_sizes():
    with pytest.raises(ConfigError):
        sim_service.benchmark(BenchOp.generate, [50, 100, 150])


def test_benchmark_generate_reports_timings():
    report = sim_service.benchmark(BenchOp.generate, [20, 40, 60, 80], reps=2, seed=1)
    assert len(report.timings) == 8
    assert (report.timings["seconds"] > 0).all()
    slope = report.slope("gamma")
    assert slope.ci_low <= slope.slope <= slope.ci_high
    assert list(report.slopes_frame().columns) == ["op", "frailty", "slope", "ci_low", "ci_high"]


def test_tolerance_sweep_table():
    report = sim_service.tolerance_sweep(SweepParam.rel_tol, [1e-6, 1e-2], n_clusters=40, reps=2, seed=3)
    assert report.param == "rel_tol"
    assert report.table["value"].tolist() == [1e-6, 1e-2]
    assert {"runtime", "resid_beta", "resid_theta", "runtime_ci_low"} <= set(report.table.columns)
    assert len(report.runs) == 4


def test_tolerance_sweep_rejects_non_positive_values():
    with pytest.raises(ConfigError):
        sim_service.tolerance_sweep(SweepParam.abs_tol, [0.0, 1e-3])


# ------------------------
# Replication-scale checks
# ------------------------
@pytest.mark.slow
def test_gamma_replication_recovers_truth():
    summary = sim_service.simulate(100, scenario("gamma"), seed=2015, workers=4)
    beta1, beta2, theta = summary.row("beta.1"), summary.row("beta.2"), summary.row("theta")
    assert abs(beta1.mean_hat - math.log(2.0)) <= 0.08
    assert abs(beta2.mean_hat - math.log(3.0)) <= 0.08
    assert abs(theta.mean_hat - 2.0) <= 0.20
    assert 0.18 <= beta1.sd_hat <= 0.32
    assert beta1.cov_95ci >= 0.93 and beta2.cov_95ci >= 0.93


@pytest.mark.slow
def test_large_cluster_replication():
    summary = sim_service.simulate(100, scenario("large-clusters"), seed=6, workers=4)
    theta = summary.row("theta")
    assert abs(theta.mean_hat - 2.0) <= 0.20
    assert theta.cov_95ci >= 0.90


@pytest.mark.slow
def test_runtime_scaling_slopes():
    sizes = [50, 100, 150, 200]
    generate = sim_service.benchmark(BenchOp.generate, sizes, reps=5).slope("gamma")
    fit = sim_service.benchmark(BenchOp.fit, sizes, reps=5).slope("gamma")
    assert 0.5 <= generate.slope <= 1.5
    assert 1.5 <= fit.slope <= 2.5


@pytest.mark.slow
def test_loose_relative_tolerance_biases_theta():
    report = sim_service.tolerance_sweep(
        SweepParam.rel_tol, [1e-6, 1.0], n_clusters=100, reps=20, seed=4, fit_method=FitMethod.loglik
    )
    table = report.table.set_index("value")
    assert abs(table.loc[1.0, "resid_theta"]) > abs(table.loc[1e-6, "resid_theta"])


@pytest.mark.slow
def test_lognormal_fit_is_slower_than_gamma():
    report = sim_service.benchmark(BenchOp.fit, [50, 100, 150, 200], kinds=[FrailtyKind.gamma, FrailtyKind.lognormal], reps=2)
    at_largest = report.timings[report.timings["n"] == 200].groupby("frailty")["seconds"].mean()
    assert at_largest["lognormal"] > at_largest["gamma"]


@pytest.mark.slow
def test_pvf_replication_recovers_theta():
    summary = sim_service.simulate(100, scenario("pvf"), se_method=SeMethod.none, seed=2016, workers=4)
    assert abs(summary.row("theta").mean_hat - 0.30) <= 0.06


@pytest.mark.slow
def test_lognormal_integration_tolerance_trades_speed_only():
    report = sim_service.tolerance_sweep(
        SweepParam.int_rel_tol, [1e-9, 1e-7, 1e-5, 1e-3, 1e-1], kind=FrailtyKind.lognormal, n_clusters=100, reps=10, seed=8, workers=4
    )
    rho, p_value = report.runtime_trend()
    assert rho < 0 and p_value < 0.05
    assert report.residual_shift("resid_beta") > 0.05
    assert report.residual_shift("resid_theta") > 0.05
