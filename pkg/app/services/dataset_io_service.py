import datetime
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import pandas as pd

from app.models.dataset import ClusteredDataset
from app.models.errors import ConfigError
from config.config import OUTPUT_DIR, TOOL_NAME, TOOL_VERSION

logger = logging.getLogger("frailty.io")

FLOAT_FORMAT = "%.17g"
DATASET_COLUMNS = ("family", "rep", "time", "status")


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class DatasetIOService:
    def __init__(self, output_dir: str = OUTPUT_DIR):
        self.output_dir = Path(output_dir)

    def resolve(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.is_absolute() and path.parent == Path("."):
            path = self.output_dir / path
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    # ------------------------
    # Datasets
    # ------------------------
    def write_dataset(self, data: ClusteredDataset, path: str | Path) -> Path:
        target = self.resolve(path)
        data.to_frame().to_csv(target, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
        logger.info(f"Wrote {data.n_obs} rows to {target}")
        return target

    def read_dataset(
        self,
        path: str | Path,
        time: str = "time",
        status: str = "status",
        cluster: str = "family",
        covariates: Optional[Sequence[str]] = None,
    ) -> ClusteredDataset:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"data file not found: {path}")
        try:
            frame = pd.read_csv(path, encoding="utf-8")
        except Exception as e:
            raise ConfigError(f"could not read {path}: {e}")
        data = ClusteredDataset.from_frame(frame, time=time, status=status, cluster=cluster, covariates=covariates)
        data.metadata["source"] = str(path)
        data.metadata["source_digest"] = file_digest(path)
        return data

    def write_frame(self, frame: pd.DataFrame, path: str | Path, index: bool = False) -> Path:
        target = self.resolve(path)
        frame.to_csv(target, index=index, float_format=FLOAT_FORMAT, encoding="utf-8")
        return target

    # ------------------------
    # Run manifests
    # ------------------------
    def write_manifest(
        self,
        path: str | Path,
        command: str,
        options: Dict[str, Any],
        seed: Optional[int] = None,
        inputs: Sequence[Path] = (),
        outputs: Sequence[Path] = (),
        started: Optional[datetime.datetime] = None,
    ) -> Path:
        """Key-value text file: one ``key = value`` per line."""
        now = datetime.datetime.now(datetime.timezone.utc)
        lines = {
            "command": command,
            "tool": f"{TOOL_NAME} {TOOL_VERSION}",
            "seed": "" if seed is None else str(seed),
            "started": (started or now).isoformat(timespec="seconds"),
            "finished": now.isoformat(timespec="seconds"),
        }
        for key, value in sorted(options.items()):
            lines[f"option.{key}"] = str(value)
        for p in inputs:
            lines[f"input.{Path(p).name}"] = file_digest(Path(p))
        for p in outputs:
            lines[f"output.{Path(p).name}"] = file_digest(Path(p))
        target = self.resolve(path)
        target.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()), encoding="utf-8")
        return target

    @staticmethod
    def read_manifest(path: str | Path) -> Dict[str, str]:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"manifest not found: {path}")
        out = {}
        for line in path.read_text(encoding="utf-8").splitlines():
            if " = " in line:
                key, value = line.split(" = ", 1)
                out[key] = value
        return out


dataset_io_service = DatasetIOService()
