import numpy as np
import pytest

from app.models.errors import ConfigError, SingularJacobian, TooFewConverged
from app.models.models import FrailtyKind
from app.schema.schema import FrailtySpec
from app.services import frailty_service as frailty
from app.services import variance_service as variance_module
from app.services.coxinit_service import coxinit_service
from app.services.datagen_service import datagen_service
from app.services.fit_service import fit_service
from app.services.variance_service import (
    SANDWICH_LABEL,
    exponential_weights,
    lambda_label,
    replicate_seed,
    unit_weights,
    variance_service,
)
from test_components.conftest import late_onset_config

GAMMA = FrailtySpec(kind=FrailtyKind.gamma, theta=0.857)


@pytest.fixture(scope="module")
def small_data():
    return datagen_service.generate(late_onset_config(n_clusters=40, seed=8))


@pytest.fixture(autouse=True)
def fresh_cache():
    variance_service.clear_cache()
    yield
    variance_service.clear_cache()


def test_exponential_weights_have_unit_mean(rng):
    weights = exponential_weights(rng, 500)
    assert weights.mean() == pytest.approx(1.0)
    assert weights.min() > 0 and weights.std() > 0.5


def test_replicate_seed_depends_only_on_seed_and_index():
    a = np.random.default_rng(replicate_seed(11, 3)).random(4)
    b = np.random.default_rng(replicate_seed(11, 3)).random(4)
    c = np.random.default_rng(replicate_seed(11, 4)).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_lambda_label():
    assert lambda_label(60) == "Lambda.60.00000"


# ------------------------
# Bootstrap
# ------------------------
def test_unit_weights_give_zero_covariance(small_data):
    cov = variance_service.bootstrap_cov(
        small_data, GAMMA, B=3, lambda_times=[60.0], seed=1, weight_sampler=unit_weights
    )
    assert cov.labels == ("Z1", "Z2", "theta", "Lambda.60.00000")
    np.testing.assert_allclose(cov.matrix, 0.0, atol=1e-20)
    assert cov.n_converged == 3


def test_bootstrap_covariance_shape_and_symmetry(small_data):
    cov = variance_service.bootstrap_cov(small_data, GAMMA, B=8, lambda_times=[0.0, 90.0], seed=5)
    assert cov.matrix.shape == (5, 5)
    np.testing.assert_array_equal(cov.matrix, cov.matrix.T)
    assert cov.method == "bootstrap(8)"
    se = cov.standard_errors()
    assert se["Lambda.0.00000"] == 0.0
    assert se["Z1"] > 0 and se["theta"] > 0 and se["Lambda.90.00000"] > 0


def test_bootstrap_without_frailty_has_no_theta(small_data):
    cov = variance_service.bootstrap_cov(small_data, frailty.NONE_SPEC, B=4, seed=2)
    assert cov.labels == ("Z1", "Z2")


def test_bootstrap_is_cached_per_seed(small_data):
    before = variance_service.refits
    first = variance_service.bootstrap_cov(small_data, GAMMA, B=4, seed=3)
    second = variance_service.bootstrap_cov(small_data, GAMMA, B=4, seed=3)
    assert first is second
    assert variance_service.refits == before + 4
    variance_service.bootstrap_cov(small_data, GAMMA, B=4, seed=4)
    assert variance_service.refits == before + 8


def test_bootstrap_is_reproducible_across_worker_counts(small_data):
    serial = variance_service.bootstrap_cov(small_data, GAMMA, B=4, seed=9)
    variance_service.clear_cache()
    parallel = variance_service.bootstrap_cov(small_data, GAMMA, B=4, seed=9, workers=2)
    np.testing.assert_allclose(serial.matrix, parallel.matrix, rtol=1e-12)


def test_bootstrap_needs_two_replicates(small_data):
    with pytest.raises(ConfigError):
        variance_service.bootstrap_cov(small_data, GAMMA, B=1, seed=1)


def test_bootstrap_with_failing_replicates(small_data):
    def broken_weights(rng, n):
        return np.ones(n + 1)

    with pytest.raises(TooFewConverged):
        variance_service.bootstrap_cov(small_data, GAMMA, B=4, seed=1, weight_sampler=broken_weights)


def test_cumhaz_band(small_data):
    fit = fit_service.fit_model(small_data, GAMMA)
    band = variance_service.cumhaz_band(small_data, GAMMA, fit, times=[30.0, 60.0, 90.0], B=6, seed=2)
    assert list(band.columns) == ["time", "cumhaz", "lower", "upper"]
    assert (band["lower"] >= 0).all()
    assert (band["lower"] <= band["cumhaz"]).all() and (band["cumhaz"] <= band["upper"]).all()


# ------------------------
# Sandwich
# ------------------------
def test_sandwich_without_frailty_is_close_to_inverse_information():
    data = datagen_service.generate(late_onset_config(n_clusters=200, frailty=frailty.NONE_SPEC, seed=41))
    fit = fit_service.fit_model(data, frailty.NONE_SPEC)
    cov = variance_service.sandwich_cov(data, frailty.NONE_SPEC, fit)
    info = coxinit_service.cox_fit(data).information
    assert cov.method == SANDWICH_LABEL
    np.testing.assert_allclose(np.diag(cov.matrix), np.diag(np.linalg.inv(info)), rtol=0.3)


def test_sandwich_for_gamma_fit(late_onset_data, gamma_fit):
    cov = variance_service.sandwich_cov(late_onset_data, gamma_fit.frailty, gamma_fit)
    assert cov.labels == ("Z1", "Z2", "theta")
    assert np.all(np.linalg.eigvalsh(cov.matrix) > 0)
    assert variance_service.sandwich_cov(late_onset_data, gamma_fit.frailty, gamma_fit) is cov


def test_sandwich_singular_jacobian(small_data, monkeypatch):
    fit = fit_service.fit_model(small_data, GAMMA)
    monkeypatch.setattr(variance_module, "numeric_gradient", lambda *args, **kwargs: np.zeros((3, 3)))
    with pytest.raises(SingularJacobian):
        variance_service.sandwich_cov(small_data, GAMMA, fit)


def test_wald_table(late_onset_data, gamma_fit):
    cov = variance_service.sandwich_cov(late_onset_data, gamma_fit.frailty, gamma_fit)
    table = gamma_fit.wald_table(cov)
    assert table["parameter"].tolist() == ["Z1", "Z2", "theta"]
    np.testing.assert_allclose(table["z"], table["estimate"] / table["se"])
    assert table.loc[table["parameter"] == "Z2", "p"].iloc[0] < 0.01


@pytest.mark.slow
def test_bootstrap_standard_errors_settle_as_replicates_double():
    data = datagen_service.generate(late_onset_config(n_clusters=100, seed=21))
    half = variance_service.bootstrap_cov(data, GAMMA, B=100, seed=3, workers=4).standard_errors()
    full = variance_service.bootstrap_cov(data, GAMMA, B=200, seed=3, workers=4).standard_errors()
    for label in ("Z1", "Z2", "theta"):
        assert abs(full[label] / half[label] - 1.0) <= 3.0 / np.sqrt(100)
