import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from app.models.dataset import StepFunction
from app.models.models import FitMethod
from app.schema.schema import FitControl, FrailtySpec


@dataclass(frozen=True)
class CoxFit:
    beta: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    information: Optional[np.ndarray] = None
    singular: bool = False


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    gamma: tuple
    loglik: float


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    theta: Optional[float]
    loglik: float
    baseline: StepFunction
    baseline_all: StepFunction
    iterations: int
    trace: tuple
    converged: bool
    method: FitMethod
    reason: str
    frailty: FrailtySpec
    control: FitControl
    covariate_names: tuple
    boundary: bool = False
    runtime: float = 0.0
    data_digest: str = ""
    se_beta: Optional[np.ndarray] = None
    se_theta: Optional[float] = None
    obs_time: Optional[np.ndarray] = None
    obs_status: Optional[np.ndarray] = None

    @property
    def has_theta(self) -> bool:
        return self.theta is not None

    @property
    def gamma(self) -> np.ndarray:
        if self.theta is None:
            return np.asarray(self.beta, dtype=float)
        return np.append(self.beta, self.theta)

    @property
    def labels(self) -> list[str]:
        return list(self.covariate_names) + (["theta"] if self.has_theta else [])

    def cumhaz(self, t):
        return self.baseline(t)

    def trace_frame(self) -> pd.DataFrame:
        rows = [
            {"iter": r.iteration, **dict(zip(self.labels, r.gamma)), "loglik": r.loglik} for r in self.trace
        ]
        return pd.DataFrame(rows, columns=["iter", *self.labels, "loglik"])

    def wald_table(self, cov: "CovarianceEstimate") -> pd.DataFrame:
        se = cov.standard_errors()
        estimates = dict(zip(self.labels, self.gamma))
        rows = []
        for label in self.labels:
            est, s = estimates[label], se.get(label, math.nan)
            z = est / s if s > 0 else math.nan
            rows.append({"parameter": label, "estimate": est, "se": s, "z": z, "p": 2.0 * stats.norm.sf(abs(z))})
        return pd.DataFrame(rows)


@dataclass(frozen=True)
class CovarianceEstimate:
    labels: tuple
    matrix: np.ndarray
    method: str
    cache_key: str = ""
    n_replicates: int = 0
    n_converged: int = 0

    def standard_errors(self) -> dict:
        return dict(zip(self.labels, np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.matrix, index=list(self.labels), columns=list(self.labels))
        frame["SE"] = np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))
        frame.index.name = "parameter"
        return frame


@dataclass(frozen=True)
class SummaryRow:
    name: str
    value: float
    mean_hat: float
    sd_hat: Optional[float]
    mean_se: Optional[float]
    cov_95ci: Optional[float]
    cov_ci_low: Optional[float] = None
    cov_ci_high: Optional[float] = None


@dataclass(frozen=True)
class SimulationSummary:
    reps: int
    n_failed: int
    rows: tuple
    lambda_times: tuple
    runtime_total: float
    runtime_mean: float
    runtime_sd: float
    estimates: Optional[pd.DataFrame] = None
    n_se_failed: int = 0

    def row(self, name: str) -> SummaryRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            [
                {
                    "parameter": r.name,
                    "value": r.value,
                    "mean.hat": r.mean_hat,
                    "sd.hat": r.sd_hat,
                    "mean.se": r.mean_se,
                    "cov.95CI": r.cov_95ci,
                    "cov.95CI.lower": r.cov_ci_low,
                    "cov.95CI.upper": r.cov_ci_high,
                }
                for r in self.rows
            ]
        )
        return frame


@dataclass(frozen=True)
class SlopeFit:
    op: str
    frailty: str
    slope: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class BenchmarkReport:
    op: str
    sizes: tuple
    timings: pd.DataFrame
    slopes: tuple = field(default_factory=tuple)

    def slope(self, frailty: str) -> SlopeFit:
        for s in self.slopes:
            if s.frailty == frailty:
                return s
        raise KeyError(frailty)

    def slopes_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s.__dict__ for s in self.slopes])


@dataclass(frozen=True)
class SweepReport:
    """Speed and accuracy over one tolerance parameter; ``runs`` holds one row per (value, rep)."""

    param: str
    table: pd.DataFrame
    runs: pd.DataFrame

    def runtime_trend(self) -> tuple[float, float]:
        """Spearman correlation of runtime with the tolerance value, and its p-value."""
        res = stats.spearmanr(self.runs["value"], self.runs["runtime"])
        return float(res.statistic), float(res.pvalue)

    def residual_shift(self, column: str = "resid_theta") -> float:
        """Welch t-test p-value between the residuals at the smallest and largest values."""
        lo, hi = self.runs["value"].min(), self.runs["value"].max()
        a = self.runs.loc[self.runs["value"] == lo, column].dropna()
        b = self.runs.loc[self.runs["value"] == hi, column].dropna()
        return float(stats.ttest_ind(a, b, equal_var=False).pvalue)
