import math

import numpy as np
import pytest

from app.models.dataset import ClusteredDataset
from app.models.models import CensorKind, CovariateKind, FrailtyKind
from app.schema.schema import CensoringSpec, ClusterSizeSpec, CovariateSpec, FrailtySpec, GenerationConfig
from app.services.expression_service import preset_baseline
from config.config import SLOW_TESTS


def pytest_collection_modifyitems(config, items):
    if SLOW_TESTS:
        return
    skip = pytest.mark.skip(reason="replication-scale check, set FRAILTY_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def late_onset_config(n_clusters: int = 300, seed: int = 2015, frailty: FrailtySpec | None = None, **overrides) -> GenerationConfig:
    """Clusters of two, standard normal covariates, Gamma(2), (0.01 t)^4.6 and N(130, 15^2) censoring."""
    values = dict(
        n_clusters=n_clusters,
        size_spec=ClusterSizeSpec.fixed(2),
        beta=[math.log(2.0), math.log(3.0)],
        covariates=CovariateSpec(kind=CovariateKind.normal, params=[0.0, 1.0]),
        frailty=frailty or FrailtySpec(kind=FrailtyKind.gamma, theta=2.0),
        baseline=preset_baseline("weibull-cumulative"),
        censoring=CensoringSpec(kind=CensorKind.normal, params=[130.0, 15.0]),
        seed=seed,
    )
    values.update(overrides)
    return GenerationConfig(**values)


def make_dataset(cluster, time, status, covariates=None, names=None) -> ClusteredDataset:
    n = len(time)
    if covariates is None:
        covariates = np.zeros((n, 0))
        names = []
    covariates = np.asarray(covariates, dtype=float).reshape(n, -1)
    names = names or [f"Z{j + 1}" for j in range(covariates.shape[1])]
    member = np.ones(n, dtype=int)
    seen = {}
    for i, c in enumerate(cluster):
        seen[c] = seen.get(c, 0) + 1
        member[i] = seen[c]
    return ClusteredDataset(
        cluster=np.asarray(cluster), member=member, time=np.asarray(time, dtype=float),
        status=np.asarray(status), covariates=covariates, covariate_names=names,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20150815)


@pytest.fixture(scope="session")
def late_onset_data():
    from app.services.datagen_service import datagen_service

    return datagen_service.generate(late_onset_config(n_clusters=150))


@pytest.fixture(scope="session")
def gamma_fit(late_onset_data):
    from app.services.fit_service import fit_service

    return fit_service.fit_model(late_onset_data, FrailtySpec(kind=FrailtyKind.gamma, theta=0.857))
