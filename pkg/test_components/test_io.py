from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from app.models.errors import ConfigError
from app.models.models import FrailtyKind
from app.schema.schema import FrailtySpec
from app.services.datagen_service import datagen_service
from app.services.dataset_io_service import DatasetIOService, file_digest
from app.services.fit_service import fit_service
from config.config import RAW_DATA_DIR
from datasets import fetch_drs, fetch_hdfail
from test_components.conftest import late_onset_config


@pytest.fixture
def io_service(tmp_path):
    return DatasetIOService(output_dir=str(tmp_path))


def test_dataset_write_then_read_keeps_values(io_service, tmp_path):
    data = datagen_service.generate(late_onset_config(n_clusters=20, seed=3))
    path = io_service.write_dataset(data, "sim.csv")
    assert path == tmp_path / "sim.csv"
    assert pd.read_csv(path).columns.tolist() == ["family", "rep", "time", "status", "Z1", "Z2"]
    back = io_service.read_dataset(path)
    np.testing.assert_array_equal(back.time, data.time)
    np.testing.assert_array_equal(back.covariates, data.covariates)
    np.testing.assert_array_equal(back.member, data.member)
    assert back.digest() == data.digest()
    assert back.metadata["source_digest"] == file_digest(path)


def test_same_seed_gives_identical_files(io_service):
    config = late_onset_config(n_clusters=15, seed=21)
    a = io_service.write_dataset(datagen_service.generate(config), "a.csv")
    b = io_service.write_dataset(datagen_service.generate(config), "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_read_dataset_with_named_columns(tmp_path, io_service):
    path = tmp_path / "custom.csv"
    pd.DataFrame(
        {"id": ["a", "a", "b"], "t": [1.0, 2.0, 3.0], "d": [1, 0, 1], "x": [0.5, None, 1.5], "y": [0, 1, 0]}
    ).to_csv(path, index=False)
    data = io_service.read_dataset(path, time="t", status="d", cluster="id", covariates=["x"])
    assert data.n_obs == 2 and data.n_clusters == 2
    assert data.covariate_names == ["x"]
    assert data.metadata["n_dropped"] == 1


def test_read_dataset_errors(tmp_path, io_service):
    with pytest.raises(ConfigError):
        io_service.read_dataset(tmp_path / "missing.csv")
    path = tmp_path / "bad.csv"
    pd.DataFrame({"family": [1], "time": [1.0], "status": [1]}).to_csv(path, index=False)
    with pytest.raises(ConfigError):
        io_service.read_dataset(path, covariates=["Z1"])
    pd.DataFrame({"family": [1], "time": [1.0], "status": [0.5]}).to_csv(path, index=False)
    with pytest.raises(ConfigError):
        io_service.read_dataset(path)


def test_read_dataset_rejects_fractional_cluster_ids(tmp_path, io_service):
    path = tmp_path / "fractional.csv"
    pd.DataFrame({"family": [1.0, 1.5, 2.0], "time": [1.0, 2.0, 3.0], "status": [1, 0, 1]}).to_csv(path, index=False)
    with pytest.raises(ConfigError):
        io_service.read_dataset(path)


def test_read_dataset_accepts_whole_float_cluster_ids(tmp_path, io_service):
    path = tmp_path / "whole.csv"
    pd.DataFrame({"family": [3.0, 3.0, None, 7.0], "time": [1.0, 2.0, 2.5, 3.0], "status": [1, 0, 1, 1]}).to_csv(path, index=False)
    data = io_service.read_dataset(path)
    assert data.n_clusters == 2
    np.testing.assert_array_equal(data.cluster, [3, 3, 7])


def test_manifest_roundtrip(io_service, tmp_path):
    data_path = io_service.write_dataset(datagen_service.generate(late_onset_config(n_clusters=5)), "d.csv")
    manifest = io_service.write_manifest(
        "d.manifest", "generate", {"n_clusters": 5, "frailty": "gamma"}, seed=2015, outputs=[data_path]
    )
    values = io_service.read_manifest(manifest)
    assert values["command"] == "generate"
    assert values["seed"] == "2015"
    assert values["option.n_clusters"] == "5"
    assert values["output.d.csv"] == file_digest(data_path)
    assert values["tool"].startswith("frailtyfit ")
    with pytest.raises(ConfigError):
        io_service.read_manifest(tmp_path / "none.manifest")


# ------------------------
# Case-study data
# ------------------------
def test_drs_convert_layout():
    raw = pd.DataFrame(
        {"subject_id": [5, 5, 14, 14], "eye": [1, 2, 1, 2], "time": [46.23, 46.23, 42.5, 31.3], "status": [0, 0, 0, 1], "treated": [1, 0, 0, 1]}
    )
    frame = fetch_drs.convert(raw)
    assert frame.columns.tolist() == ["family", "rep", "time", "status", "treated"]
    assert frame["rep"].tolist() == [1, 2, 1, 2]
    assert frame["treated"].tolist() == [0, 1, 0, 1]


def test_hdfail_western_digital_subset():
    raw = pd.DataFrame(
        {
            "serial_number": ["s1", "s2", "s3"],
            "model": ["WDC WD1", "ST4000", "WDC WD2"],
            "time": [10.0, 20.0, 30.0],
            "status": [1, 0, 0],
            **{name: [0.1, 0.2, 0.3] for name in fetch_hdfail.COVARIATES},
        }
    )
    subset = fetch_hdfail.western_digital(fetch_hdfail.convert(raw))
    assert subset["model"].tolist() == ["WDC WD1", "WDC WD2"]
    assert subset["family"].tolist() == [1, 2]


@pytest.mark.slow
def test_drs_case_study():
    path = Path(RAW_DATA_DIR) / "drs.csv"
    if not path.exists():
        pytest.skip("run python -m datasets.fetch_drs first")
    data = DatasetIOService().read_dataset(path, covariates=["treated"])
    fit = fit_service.fit_model(data, FrailtySpec(kind=FrailtyKind.gamma, theta=0.857), se=True)
    assert fit.beta[0] == pytest.approx(-0.918, abs=0.02)
    assert fit.theta == pytest.approx(0.876, abs=0.02)
    assert fit.loglik == pytest.approx(-1005.805, abs=0.5)
    np.testing.assert_allclose([fit.se_beta[0], fit.se_theta], [0.198, 0.378], rtol=0.1)
