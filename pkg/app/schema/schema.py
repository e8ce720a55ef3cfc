import math
from typing import Any, Callable, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.models import (
    BaselineMode,
    CensorKind,
    ClusterSizeKind,
    CovariateKind,
    FitMethod,
    FrailtyKind,
    SeMethod,
)


# ------------------------
# Numerical controls
# ------------------------
class QuadratureControl(BaseModel):
    model_config = ConfigDict(frozen=True)

    abs_tol: float = Field(0.0, ge=0)
    rel_tol: float = Field(1.0, ge=0)
    max_evals: int = Field(1000, ge=1)


TIGHT_QUADRATURE = QuadratureControl(abs_tol=1e-10, rel_tol=1e-10, max_evals=100_000)


class RootBracket(BaseModel):
    model_config = ConfigDict(frozen=True)

    lo: float
    hi: float

    @model_validator(mode="after")
    def check_order(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket needs lo < hi, got [{self.lo}, {self.hi}]")
        return self


# ------------------------
# Frailty
# ------------------------
class FrailtySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: FrailtyKind
    theta: float = 0.0

    @model_validator(mode="after")
    def check_theta(self):
        k, th = self.kind, self.theta
        if k == FrailtyKind.none:
            return self
        if not math.isfinite(th):
            raise ValueError("theta must be finite")
        if k in (FrailtyKind.gamma, FrailtyKind.lognormal, FrailtyKind.invgauss) and th < 0:
            raise ValueError(f"{k.value} frailty needs theta >= 0")
        if k == FrailtyKind.pvf and not 0 < th <= 1:
            raise ValueError("pvf frailty needs 0 < theta <= 1")
        if k == FrailtyKind.posstab and not 0 < th < 1:
            raise ValueError("posstab frailty needs 0 < theta < 1")
        return self


class LtQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    m: int = Field(..., ge=0)
    s: float = Field(..., ge=0)


# ------------------------
# Data generation
# ------------------------
class BaselineSpec(BaseModel):
    """Exactly one of the three ways to give the baseline hazard."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    inverse_cumulative: Optional[Callable[[Any], Any]] = None
    cumulative: Optional[Callable[[Any], Any]] = None
    hazard: Optional[Callable[[Any], Any]] = None
    label: str = ""

    @model_validator(mode="after")
    def check_exactly_one(self):
        given = [f is not None for f in (self.inverse_cumulative, self.cumulative, self.hazard)]
        if sum(given) != 1:
            raise ValueError("baseline needs exactly one of inverse_cumulative, cumulative, hazard")
        return self

    @property
    def mode(self) -> BaselineMode:
        if self.inverse_cumulative is not None:
            return BaselineMode.inverse_cumulative
        if self.cumulative is not None:
            return BaselineMode.cumulative
        return BaselineMode.hazard

    @property
    def function(self) -> Callable:
        return self.inverse_cumulative or self.cumulative or self.hazard


class ClusterSizeSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ClusterSizeKind
    k: int = 0
    sizes: Optional[List[int]] = None
    lam: float = 0.0
    s: float = 0.0
    l: int = 0
    u: int = 0

    @model_validator(mode="after")
    def check_law(self):
        if self.kind == ClusterSizeKind.fixed and self.k < 1:
            raise ValueError("fixed cluster size needs k >= 1")
        if self.kind == ClusterSizeKind.explicit:
            if not self.sizes or min(self.sizes) < 1:
                raise ValueError("explicit cluster sizes must be positive")
        if self.kind == ClusterSizeKind.poisson and (self.lam <= 0 or self.k < 0):
            raise ValueError("truncated poisson needs lambda > 0 and k >= 0")
        if self.kind == ClusterSizeKind.pareto and (self.s <= 1 or self.u <= self.l or self.l < 0):
            raise ValueError("truncated zeta needs s > 1 and 0 <= l < u")
        if self.kind == ClusterSizeKind.uniform and (self.l < 0 or self.u <= self.l):
            raise ValueError("discrete uniform sizes need 0 <= l < u")
        return self

    @classmethod
    def fixed(cls, k: int) -> "ClusterSizeSpec":
        return cls(kind=ClusterSizeKind.fixed, k=k)


class CovariateSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: CovariateKind = CovariateKind.normal
    params: List[float] = [0.0, 1.0]
    matrix: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def check_params(self):
        if self.kind == CovariateKind.explicit:
            if not self.matrix:
                raise ValueError("explicit covariates need a matrix")
            return self
        if len(self.params) != 2:
            raise ValueError("covariate distribution takes two parameters")
        a, b = self.params
        if self.kind == CovariateKind.normal and b <= 0:
            raise ValueError("normal covariates need sd > 0")
        if self.kind in (CovariateKind.uniform, CovariateKind.discrete) and b <= a:
            raise ValueError("uniform covariates need a < b")
        return self


class CensoringSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: CensorKind = CensorKind.none
    params: List[float] = []
    target_rate: Optional[float] = None
    times: Optional[List[float]] = None

    @model_validator(mode="after")
    def check_form(self):
        if self.kind == CensorKind.explicit:
            if not self.times:
                raise ValueError("explicit censoring needs times")
            if self.target_rate is not None:
                raise ValueError("censor rate targeting needs a censoring distribution")
            return self
        if self.kind == CensorKind.none:
            if self.target_rate is not None:
                raise ValueError("censor rate targeting needs a censoring distribution")
            return self
        if self.target_rate is not None and not 0 < self.target_rate < 1:
            raise ValueError("censor rate must lie in (0, 1)")
        # normal/lognormal: (location, scale); uniform: (lower, upper)
        needed = 1 if self.target_rate is not None else 2
        if len(self.params) < needed:
            raise ValueError(f"{self.kind.value} censoring needs {needed} parameter(s)")
        if self.kind in (CensorKind.normal, CensorKind.lognormal) and self.params[-1] <= 0:
            raise ValueError("censoring sd must be > 0")
        if self.kind == CensorKind.uniform and needed == 2 and self.params[1] <= self.params[0]:
            raise ValueError("uniform censoring needs lower < upper")
        return self

    @property
    def fixed_param(self) -> float:
        """The parameter held fixed when the rate is targeted."""
        if self.kind == CensorKind.uniform:
            return self.params[0]
        return self.params[-1]


class GenerationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n_clusters: int = Field(..., ge=1)
    size_spec: ClusterSizeSpec
    beta: List[float]
    covariates: CovariateSpec = CovariateSpec()
    frailty: FrailtySpec
    baseline: BaselineSpec
    censoring: CensoringSpec = CensoringSpec()
    round_base: Optional[float] = Field(None, gt=0)
    seed: int = 0
    quadrature: QuadratureControl = QuadratureControl(abs_tol=0.0, rel_tol=1e-10, max_evals=10_000)
    root_tol: float = Field(1e-10, gt=0)

    @model_validator(mode="after")
    def check_shapes(self):
        if self.covariates.kind == CovariateKind.explicit:
            ncol = {len(r) for r in self.covariates.matrix}
            if ncol != {len(self.beta)}:
                raise ValueError("explicit covariate matrix needs dim(beta) columns")
            total = self.known_total()
            if total is not None and len(self.covariates.matrix) != total:
                raise ValueError(f"explicit covariate matrix needs {total} rows")
        if self.censoring.kind == CensorKind.explicit:
            total = self.known_total()
            if total is None:
                raise ValueError("explicit censoring times cannot be used with variable-sized clusters")
            if len(self.censoring.times) != total:
                raise ValueError(f"explicit censoring needs {total} times")
        if self.size_spec.kind == ClusterSizeKind.explicit and len(self.size_spec.sizes) != self.n_clusters:
            raise ValueError("explicit cluster sizes need one entry per cluster")
        return self

    def known_total(self) -> Optional[int]:
        if self.size_spec.kind == ClusterSizeKind.fixed:
            return self.n_clusters * self.size_spec.k
        if self.size_spec.kind == ClusterSizeKind.explicit:
            return sum(self.size_spec.sizes)
        return None


# ------------------------
# Estimation
# ------------------------
class FitControl(BaseModel):
    model_config = ConfigDict(frozen=True)

    fit_method: FitMethod = FitMethod.loglik
    abs_tol: float = Field(0.0, ge=0)
    rel_tol: float = Field(1e-6, ge=0)
    max_iter: int = Field(100, ge=1)
    int_abs_tol: float = Field(0.0, ge=0)
    int_rel_tol: float = Field(1.0, ge=0)
    int_max_evals: int = Field(1000, ge=1)
    int_table_nodes: int = Field(96, ge=0)
    verbose: bool = False
    inner_maximize: bool = False
    theta_init: Optional[float] = Field(None, gt=0)

    @property
    def quadrature(self) -> QuadratureControl:
        return QuadratureControl(
            abs_tol=self.int_abs_tol, rel_tol=self.int_rel_tol, max_evals=self.int_max_evals
        )


# ------------------------
# HTTP DTOs
# ------------------------
class GenerateRequest(BaseModel):
    n_clusters: int = Field(..., ge=1)
    cluster_size: int = Field(2, ge=1)
    beta: List[float] = [math.log(2), math.log(3)]
    covariates: CovariateSpec = CovariateSpec(kind=CovariateKind.uniform, params=[0.0, 1.0])
    frailty: FrailtyKind = FrailtyKind.gamma
    theta: float = 2.0
    baseline_mode: BaselineMode = BaselineMode.cumulative
    baseline_expression: str = "(0.01*t)**4.6"
    censoring: CensoringSpec = CensoringSpec(kind=CensorKind.normal, params=[130.0, 15.0])
    round_base: Optional[float] = None
    seed: int = 0


class DatasetRow(BaseModel):
    family: int
    rep: int
    time: float
    status: int
    covariates: List[float] = []


class DatasetPayload(BaseModel):
    covariate_names: List[str]
    rows: List[DatasetRow]


class FitRequest(BaseModel):
    data: DatasetPayload
    frailty: FrailtyKind = FrailtyKind.gamma
    control: FitControl = FitControl()


class CovarianceRequest(FitRequest):
    method: SeMethod = SeMethod.sandwich
    B: int = Field(100, ge=2)
    lambda_times: List[float] = []
    seed: int = 0

    @field_validator("method")
    @classmethod
    def check_method(cls, v):
        if v == SeMethod.none:
            raise ValueError("covariance method must be sandwich or bootstrap")
        return v


class FitSummary(BaseModel):
    beta: dict
    theta: Optional[float] = None
    frailty_variance: Optional[float] = None
    loglik: float
    iterations: int
    converged: bool
    reason: str
    boundary: bool = False
    baseline: List[List[float]] = []
