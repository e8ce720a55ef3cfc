import enum


class FrailtyKind(str, enum.Enum):
    gamma = "gamma"
    pvf = "pvf"
    lognormal = "lognormal"
    invgauss = "invgauss"
    posstab = "posstab"
    none = "none"


class FitMethod(str, enum.Enum):
    loglik = "loglik"
    score = "score"


class BaselineMode(str, enum.Enum):
    inverse_cumulative = "inverse_cumulative"
    cumulative = "cumulative"
    hazard = "hazard"


class ClusterSizeKind(str, enum.Enum):
    fixed = "fixed"
    explicit = "explicit"
    poisson = "poisson"
    pareto = "pareto"
    uniform = "uniform"


class CovariateKind(str, enum.Enum):
    normal = "normal"
    uniform = "uniform"
    discrete = "discrete"
    explicit = "explicit"


class CensorKind(str, enum.Enum):
    none = "none"
    normal = "normal"
    lognormal = "lognormal"
    uniform = "uniform"
    explicit = "explicit"


class CurveType(str, enum.Enum):
    surv = "surv"
    cumhaz = "cumhaz"


class SeMethod(str, enum.Enum):
    sandwich = "sandwich"
    bootstrap = "bootstrap"
    none = "none"


class BenchOp(str, enum.Enum):
    generate = "generate"
    fit = "fit"
    sandwich_cov = "sandwich_cov"


class SweepParam(str, enum.Enum):
    abs_tol = "abs_tol"
    rel_tol = "rel_tol"
    int_abs_tol = "int_abs_tol"
    int_rel_tol = "int_rel_tol"


ESTIMABLE_KINDS = (
    FrailtyKind.gamma,
    FrailtyKind.pvf,
    FrailtyKind.lognormal,
    FrailtyKind.invgauss,
    FrailtyKind.none,
)

# Open box for theta during estimation
THETA_BOUNDS = {
    FrailtyKind.gamma: (1e-6, 1e4),
    FrailtyKind.lognormal: (1e-6, 50.0),
    FrailtyKind.invgauss: (1e-6, 1e4),
    FrailtyKind.pvf: (1e-6, 1.0 - 1e-6),
}

# theta giving Kendall's tau of about 0.3
THETA_INIT = {
    FrailtyKind.gamma: 0.857,
    FrailtyKind.lognormal: 1.172,
    FrailtyKind.invgauss: 2.035,
    FrailtyKind.pvf: 0.083,
}

DEGENERATE_TOL = 1e-8
BOUNDARY_TOL = 1e-6
