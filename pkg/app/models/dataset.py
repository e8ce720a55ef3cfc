import datetime
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app.models.errors import ConfigError

logger = logging.getLogger("frailty.dataset")


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous nondecreasing step function, 0 before the first time."""

    times: np.ndarray
    cum_values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.cum_values, dtype=float)
        if times.shape != values.shape:
            raise ValueError("step function needs as many values as times")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("step function times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "cum_values", values)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.cum_values, prepend=0.0)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            out = np.zeros(t.shape)
        else:
            idx = np.searchsorted(self.times, t, side="right") - 1
            out = np.where(idx >= 0, self.cum_values[np.maximum(idx, 0)], 0.0)
        return out if out.ndim else float(out)

    __call__ = value

    def jump_at(self, t):
        """Increment at exactly t, 0 where t is not a jump time."""
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            out = np.zeros(t.shape)
        else:
            idx = np.minimum(np.searchsorted(self.times, t), self.times.size - 1)
            out = np.where(self.times[idx] == t, self.increments[idx], 0.0)
        return out if out.ndim else float(out)

    @classmethod
    def zero(cls) -> "StepFunction":
        return cls(np.empty(0), np.empty(0))


@dataclass
class ClusteredDataset:
    """
    One row per subject. ``cluster`` holds the family id as read or generated,
    ``member`` the 1-based index within the cluster.
    """

    cluster: np.ndarray
    member: np.ndarray
    time: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    covariate_names: list[str]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cluster = np.asarray(self.cluster, dtype=np.int64)
        self.member = np.asarray(self.member, dtype=np.int64)
        self.time = np.asarray(self.time, dtype=float)
        self.status = np.asarray(self.status, dtype=np.int64)
        n = self.time.size
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim != 2:
            cov = cov.reshape(n, -1) if n else np.zeros((0, len(self.covariate_names)))
        self.covariates = cov
        if not (self.cluster.size == self.member.size == self.status.size == self.covariates.shape[0] == n):
            raise ConfigError("dataset columns differ in length")
        if self.covariates.shape[1] != len(self.covariate_names):
            raise ConfigError("dataset covariate names do not match the covariate matrix")
        if np.any(~np.isin(self.status, (0, 1))):
            raise ConfigError("status must be 0 or 1")
        if np.any(self.time < 0) or not np.all(np.isfinite(self.time)):
            raise ConfigError("observed times must be finite and nonnegative")

    # ------------------------
    # Shape
    # ------------------------
    @property
    def n_obs(self) -> int:
        return int(self.time.size)

    @property
    def n_covariates(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def cluster_codes(self) -> np.ndarray:
        """Cluster ids recoded to 0..n_clusters-1 in order of first appearance."""
        _, first, codes = np.unique(self.cluster, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        return order[codes]

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.cluster).size)

    @property
    def n_failures(self) -> int:
        return int(self.status.sum())

    @property
    def censor_rate(self) -> float:
        return float(1.0 - self.status.mean()) if self.n_obs else 0.0

    @property
    def avg_cluster_size(self) -> float:
        return self.n_obs / self.n_clusters if self.n_obs else 0.0

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.cluster, self.time, self.status, self.covariates):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(",".join(self.covariate_names).encode())
        return h.hexdigest()

    # ------------------------
    # Frames
    # ------------------------
    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {"family": self.cluster, "rep": self.member, "time": self.time, "status": self.status}
        )
        for j, name in enumerate(self.covariate_names):
            frame[name] = self.covariates[:, j]
        return frame

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        time: str = "time",
        status: str = "status",
        cluster: str = "family",
        covariates: Optional[Sequence[str]] = None,
    ) -> "ClusteredDataset":
        if covariates is None:
            covariates = [c for c in frame.columns if c not in (time, status, cluster, "rep")]
        covariates = list(covariates)
        missing = [c for c in [time, status, cluster, *covariates] if c not in frame.columns]
        if missing:
            raise ConfigError(f"columns not found: {', '.join(missing)}")
        used = frame[[cluster, time, status, *covariates]]
        complete = used.dropna()
        n_dropped = len(used) - len(complete)
        if n_dropped:
            logger.warning(f"Dropped {n_dropped} rows with missing values")
        try:
            if pd.api.types.is_integer_dtype(complete[cluster]):
                cluster_ids = complete[cluster].to_numpy().astype(np.int64)
            elif pd.api.types.is_numeric_dtype(complete[cluster]):
                raw = complete[cluster].to_numpy(dtype=float)
                if np.any(raw != np.round(raw)):
                    raise ConfigError(f"cluster column '{cluster}' holds non-integer ids")
                cluster_ids = raw.astype(np.int64)
            else:
                cluster_ids = pd.factorize(complete[cluster])[0] + 1
            cov = complete[covariates].to_numpy(dtype=float)
            status_col = complete[status].to_numpy()
            if np.any(status_col != np.round(status_col)):
                raise ConfigError(f"status column '{status}' must hold 0/1 values")
        except ConfigError:
            raise
        except Exception as e:
            raise ConfigError(f"could not read dataset columns: {e}")
        member = pd.Series(cluster_ids).groupby(cluster_ids).cumcount().to_numpy() + 1
        return cls(
            cluster=cluster_ids,
            member=member,
            time=complete[time].to_numpy(dtype=float),
            status=status_col.astype(np.int64),
            covariates=cov,
            covariate_names=covariates,
            metadata={"n_dropped": n_dropped},
        )

    def subset(self, mask: np.ndarray) -> "ClusteredDataset":
        mask = np.asarray(mask, dtype=bool)
        return ClusteredDataset(
            cluster=self.cluster[mask],
            member=self.member[mask],
            time=self.time[mask],
            status=self.status[mask],
            covariates=self.covariates[mask],
            covariate_names=list(self.covariate_names),
            metadata=dict(self.metadata),
        )

    def summary(self) -> str:
        meta = self.metadata
        lines = [
            f"created           : {meta.get('created', datetime.datetime.now(datetime.timezone.utc).isoformat(timespec='seconds'))}",
            f"Observations      : {self.n_obs}",
            f"Clusters          : {self.n_clusters}",
            f"Avg. cluster size : {self.avg_cluster_size:.2f}",
            f"Right censoring rate : {self.censor_rate:.2f}",
            f"Covariates        : {', '.join(self.covariate_names)}",
        ]
        for key, label in (
            ("beta", "Coefficients"),
            ("frailty", "Frailty"),
            ("baseline_mode", "Baseline mode"),
            ("baseline_label", "Baseline"),
            ("seed", "Seed"),
            ("n_infinite_failures", "Infinite failure times"),
            ("n_zero_times", "Zero times after rounding"),
        ):
            if key in meta:
                lines.append(f"{label:<18}: {meta[key]}")
        return "\n".join(lines)
