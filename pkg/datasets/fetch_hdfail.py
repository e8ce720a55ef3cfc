"""
Hard drive failure case-study data.

Downloads the public CSV mirror (``HDFAIL_URL``) and writes two files in the
dataset layout the ``fit`` command reads:

    hdfail.csv      every drive
    hdfail_wdc.csv  Western Digital drives only (model name contains "WDC")

Columns:

    family   drive model, recoded to 1..n_models in order of first appearance
    rep      index of the drive within its model
    time     years until failure or the end of observation
    status   1 failed, 0 censored
    temp     operating temperature
    rer      1 if any read errors were recorded
    rsc      1 if any sectors were reallocated
    psc      1 if any sectors are pending reallocation
    model    the drive model name (pass ``--covariates temp,rer,rsc,psc`` to fit)

Run once:

    python -m datasets.fetch_hdfail
"""

import io
import logging
from pathlib import Path

import httpx
import pandas as pd

from config.config import HDFAIL_URL, RAW_DATA_DIR
from app.services.dataset_io_service import FLOAT_FORMAT

logging.basicConfig(level=logging.INFO, format="%(asctime)s | %(levelname)s | %(name)s | %(message)s")
logger = logging.getLogger(__name__)

COVARIATES = ("temp", "rer", "rsc", "psc")


def download(url: str) -> pd.DataFrame:
    response = httpx.get(url, follow_redirects=True, timeout=120.0)
    response.raise_for_status()
    return pd.read_csv(io.StringIO(response.text))


def convert(raw: pd.DataFrame) -> pd.DataFrame:
    raw = raw.dropna(subset=["time", "status", "model", *COVARIATES])
    family = pd.factorize(raw["model"])[0] + 1
    frame = pd.DataFrame({"family": family, "time": raw["time"].to_numpy(dtype=float), "status": raw["status"].to_numpy(dtype=int)})
    for name in COVARIATES:
        frame[name] = raw[name].to_numpy(dtype=float)
    frame["model"] = raw["model"].to_numpy()
    frame.insert(1, "rep", frame.groupby("family").cumcount() + 1)
    return frame


def western_digital(frame: pd.DataFrame) -> pd.DataFrame:
    subset = frame[frame["model"].str.contains("WDC", regex=False)].copy()
    subset["family"] = pd.factorize(subset["model"])[0] + 1
    subset["rep"] = subset.groupby("family").cumcount() + 1
    return subset.reset_index(drop=True)


def fetch(out_dir: str = RAW_DATA_DIR) -> tuple[Path, Path]:
    try:
        logger.info(f"Downloading {HDFAIL_URL}")
        frame = convert(download(HDFAIL_URL))
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        full, wdc = out / "hdfail.csv", out / "hdfail_wdc.csv"
        frame.to_csv(full, index=False, float_format=FLOAT_FORMAT)
        subset = western_digital(frame)
        subset.to_csv(wdc, index=False, float_format=FLOAT_FORMAT)
        logger.info(
            f"Wrote {len(frame)} drives to {full} and {len(subset)} Western Digital drives "
            f"({subset['family'].nunique()} models, {int(subset['status'].sum())} failures) to {wdc}"
        )
        return full, wdc
    except Exception as e:
        logger.error(f"Error fetching hard drive data: {e}")
        raise


if __name__ == "__main__":
    fetch()
