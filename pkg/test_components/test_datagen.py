import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from app.models.errors import ConfigError
from app.models.models import BaselineMode, CensorKind, ClusterSizeKind, CovariateKind, FrailtyKind
from app.schema.schema import BaselineSpec, CensoringSpec, ClusterSizeSpec, CovariateSpec, FrailtySpec
from app.services.datagen_service import datagen_service
from app.services.expression_service import preset_baseline
from app.services.frailty_service import NONE_SPEC, kendall_tau
from test_components.conftest import late_onset_config

WEIBULL_TIME = math.log(2.0) ** (1 / 4.6) / 0.01


# ------------------------
# Cluster sizes
# ------------------------
def test_expected_cluster_size():
    assert datagen_service.expected_cluster_size(ClusterSizeSpec(kind=ClusterSizeKind.poisson, lam=2.0, k=0)) == pytest.approx(2.313, abs=1e-3)
    assert datagen_service.expected_cluster_size(ClusterSizeSpec.fixed(2)) == 2.0
    assert datagen_service.expected_cluster_size(ClusterSizeSpec(kind=ClusterSizeKind.uniform, l=1, u=3)) == 2.5


def test_fixed_sizes(rng):
    np.testing.assert_array_equal(datagen_service.sample_cluster_sizes(ClusterSizeSpec.fixed(2), 3, rng), [2, 2, 2])


def test_truncated_poisson_sizes(rng):
    sizes = datagen_service.sample_cluster_sizes(ClusterSizeSpec(kind=ClusterSizeKind.poisson, lam=2.0, k=0), 100_000, rng)
    assert sizes.min() >= 1
    assert sizes.mean() == pytest.approx(2.313, abs=0.02)


def test_truncated_zeta_sizes_follow_pmf(rng):
    spec = ClusterSizeSpec(kind=ClusterSizeKind.pareto, s=3.0, l=1, u=10)
    sizes = datagen_service.sample_cluster_sizes(spec, 100_000, rng)
    support, pmf = datagen_service.zeta_pmf(spec)
    observed = np.array([np.sum(sizes == k) for k in support])
    assert observed.sum() == sizes.size
    assert stats.chisquare(observed, pmf * sizes.size).pvalue > 0.01


def test_cluster_size_validation():
    with pytest.raises(ValidationError):
        ClusterSizeSpec(kind=ClusterSizeKind.pareto, s=0.5, l=1, u=10)


# ------------------------
# Failure times
# ------------------------
@pytest.mark.parametrize(
    "preset,tol",
    [("weibull-inverse", 1e-9), ("weibull-cumulative", 1e-4), ("weibull-hazard", 1e-3)],
)
def test_failure_time_modes_agree(preset, tol):
    assert datagen_service.failure_time(preset_baseline(preset), 0.5, 1.0, 0.0) == pytest.approx(WEIBULL_TIME, abs=tol)


def test_cumulative_hazard_from_each_mode():
    for preset in ("weibull-inverse", "weibull-cumulative", "weibull-hazard"):
        assert datagen_service.cumulative_hazard(preset_baseline(preset), 90.0) == pytest.approx(0.6159, abs=1e-4)


# ------------------------
# Censoring
# ------------------------
def test_censor_location_normal():
    location = datagen_service.solve_censor_param([10.0] * 5, CensorKind.normal, 1.0, 0.5)
    assert location == pytest.approx(10.0, abs=1e-8)


def test_censor_upper_uniform():
    upper = datagen_service.solve_censor_param([1.0, 2.0, 3.0, 4.0], CensorKind.uniform, 0.0, 0.5)
    assert upper == pytest.approx(5.0, abs=1e-8)


@pytest.mark.parametrize("times,expected", [(87.95447, 90.0), (2.4, 2.0), (2.5, 3.0)])
def test_round_times(times, expected):
    B = 10.0 if times > 10 else 1.0
    assert datagen_service.round_times(times, B) == expected


def test_censoring_validation():
    with pytest.raises(ValidationError):
        CensoringSpec(kind=CensorKind.normal, params=[130.0])
    with pytest.raises(ValidationError):
        CensoringSpec(kind=CensorKind.none, target_rate=0.3)


# ------------------------
# generate
# ------------------------
def test_generate_late_onset_configuration():
    data = datagen_service.generate(late_onset_config())
    assert data.n_obs == 600
    assert data.n_clusters == 300
    assert data.censor_rate == pytest.approx(0.40, abs=0.05)
    assert data.covariate_names == ["Z1", "Z2"]
    np.testing.assert_array_equal(data.member[:4], [1, 2, 1, 2])


def test_generate_is_reproducible():
    first = datagen_service.generate(late_onset_config(n_clusters=30, seed=7))
    second = datagen_service.generate(late_onset_config(n_clusters=30, seed=7))
    np.testing.assert_array_equal(first.time, second.time)
    assert first.digest() == second.digest()


def test_generate_without_frailty_matches_baseline_survival():
    config = late_onset_config(
        n_clusters=5000,
        beta=[0.0],
        frailty=NONE_SPEC,
        baseline=preset_baseline("weibull-inverse"),
        censoring=CensoringSpec(kind=CensorKind.none),
        seed=11,
    )
    data = datagen_service.generate(config)
    assert data.status.all()
    assert stats.kstest(data.time, lambda t: 1.0 - np.exp(-((0.01 * t) ** 4.6))).pvalue > 0.01


def test_baseline_modes_give_the_same_dataset():
    times = []
    for preset in ("weibull-inverse", "weibull-cumulative", "weibull-hazard"):
        config = late_onset_config(n_clusters=15, seed=3, baseline=preset_baseline(preset))
        times.append(datagen_service.generate(config).time)
    np.testing.assert_allclose(times[1], times[0], atol=1e-3)
    np.testing.assert_allclose(times[2], times[0], atol=1e-3)


def test_generate_targets_censoring_rate():
    config = late_onset_config(
        n_clusters=600,
        covariates=CovariateSpec(kind=CovariateKind.uniform, params=[0.0, 1.0]),
        censoring=CensoringSpec(kind=CensorKind.normal, params=[15.0], target_rate=0.3),
        seed=5,
    )
    data = datagen_service.generate(config)
    assert data.censor_rate == pytest.approx(0.30, abs=0.04)
    assert data.metadata["censor_location"] > 0


def test_generate_rounds_and_reports_zero_times():
    config = late_onset_config(n_clusters=50, round_base=500.0, seed=9)
    data = datagen_service.generate(config)
    assert np.all(np.isin(data.time, [0.0, 500.0]))
    assert data.metadata["n_zero_times"] == int(np.sum(data.time == 0))


def test_generate_oscillating_hazard_completes():
    config = late_onset_config(n_clusters=10, baseline=preset_baseline("oscillating-hazard"), seed=4)
    data = datagen_service.generate(config)
    assert np.all(np.isfinite(data.time))
    assert data.metadata["baseline_mode"] == BaselineMode.hazard.value


def test_generate_keeps_latent_variables():
    data = datagen_service.generate(late_onset_config(n_clusters=20), keep_latent=True)
    omega = data.metadata["latent_frailty"]
    assert omega.shape == (40,)
    np.testing.assert_array_equal(omega[0::2], omega[1::2])


def test_explicit_covariates_need_matching_rows():
    with pytest.raises(ValidationError):
        late_onset_config(n_clusters=3, covariates=CovariateSpec(kind=CovariateKind.explicit, matrix=[[0.0, 1.0]] * 5))


def test_variable_sizes_with_pvf_frailty():
    config = late_onset_config(
        n_clusters=200,
        size_spec=ClusterSizeSpec(kind=ClusterSizeKind.poisson, lam=2.0, k=0),
        frailty=FrailtySpec(kind=FrailtyKind.pvf, theta=0.3),
    )
    data = datagen_service.generate(config)
    assert data.n_clusters == 200
    assert data.avg_cluster_size == pytest.approx(2.313, abs=0.25)


def test_generate_rejects_all_infinite_failures_without_censoring():
    never = BaselineSpec(inverse_cumulative=lambda h: np.full(np.shape(h), np.inf), label="never fails")
    config = late_onset_config(n_clusters=5, baseline=never, censoring=CensoringSpec(kind=CensorKind.none))
    with pytest.raises(ConfigError):
        datagen_service.generate(config)


def test_generate_censors_infinite_failures_at_latest_finite_time():
    def half_never(h):
        h = np.asarray(h, dtype=float)
        return np.where(h > 1.0, np.inf, h)

    config = late_onset_config(
        n_clusters=40, beta=[0.0], baseline=BaselineSpec(inverse_cumulative=half_never), censoring=CensoringSpec(kind=CensorKind.none)
    )
    data = datagen_service.generate(config)
    n_infinite = data.metadata["n_infinite_failures"]
    assert 0 < n_infinite < data.n_obs
    assert np.all(np.isfinite(data.time))
    assert int(np.sum(data.status == 0)) == n_infinite


@pytest.mark.parametrize(
    "frailty",
    [
        FrailtySpec(kind=FrailtyKind.gamma, theta=2.0),
        FrailtySpec(kind=FrailtyKind.pvf, theta=0.3),
        FrailtySpec(kind=FrailtyKind.invgauss, theta=1.0),
        FrailtySpec(kind=FrailtyKind.lognormal, theta=1.0),
        FrailtySpec(kind=FrailtyKind.posstab, theta=0.5),
    ],
)
def test_pairs_reproduce_kendall_tau(frailty):
    config = late_onset_config(
        n_clusters=3000,
        beta=[0.0],
        frailty=frailty,
        baseline=preset_baseline("weibull-inverse"),
        censoring=CensoringSpec(kind=CensorKind.none),
        seed=23,
    )
    pairs = datagen_service.generate(config).time.reshape(-1, 2)
    empirical = stats.kendalltau(pairs[:, 0], pairs[:, 1])[0]
    assert empirical == pytest.approx(kendall_tau(frailty), abs=0.035)
