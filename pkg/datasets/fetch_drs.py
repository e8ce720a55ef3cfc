"""
Diabetic retinopathy case-study data.

Downloads the public CSV mirror (``DRS_URL``) and writes ``drs.csv`` in the
dataset layout the ``fit`` command reads:

    family   patient id, one cluster per patient
    rep      1 or 2, the eye within the patient
    time     months to blindness or censoring
    status   1 blindness, 0 censored
    treated  1 for the laser-treated eye

197 patients, 394 rows. Run once:

    python -m datasets.fetch_drs
"""

import io
import logging
from pathlib import Path

import httpx
import pandas as pd

from config.config import DRS_URL, RAW_DATA_DIR
from app.services.dataset_io_service import FLOAT_FORMAT

logging.basicConfig(level=logging.INFO, format="%(asctime)s | %(levelname)s | %(name)s | %(message)s")
logger = logging.getLogger(__name__)


def download(url: str) -> pd.DataFrame:
    response = httpx.get(url, follow_redirects=True, timeout=60.0)
    response.raise_for_status()
    return pd.read_csv(io.StringIO(response.text))


def convert(raw: pd.DataFrame) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "family": raw["subject_id"].astype(int),
            "time": raw["time"].astype(float),
            "status": raw["status"].astype(int),
            "treated": raw["treated"].astype(int),
        }
    ).sort_values(["family", "treated"], kind="stable")
    frame.insert(1, "rep", frame.groupby("family").cumcount() + 1)
    return frame.reset_index(drop=True)


def fetch(out_dir: str = RAW_DATA_DIR) -> Path:
    try:
        logger.info(f"Downloading {DRS_URL}")
        frame = convert(download(DRS_URL))
        target = Path(out_dir) / "drs.csv"
        target.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"Wrote {len(frame)} rows in {frame['family'].nunique()} clusters to {target}")
        return target
    except Exception as e:
        logger.error(f"Error fetching DRS data: {e}")
        raise


if __name__ == "__main__":
    fetch()
