"""
Numerical kernels shared by every other service.

Root finding, quadrature and special functions delegate to scipy. This module
adds the error semantics the estimator relies on: bracket checks,
non-convergence flags instead of exceptions for quadrature, and finite checks
on Jacobian evaluations.
"""

import logging
import math
import warnings
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize, special as sp_special

from app.models.errors import DomainError, MaxIterations, NoSignChange, NonFiniteValue
from app.schema.schema import QuadratureControl, RootBracket

logger = logging.getLogger("frailty.numerics")

EPS = float(np.finfo(float).eps)
# QUADPACK refuses epsrel below this when epsabs is 0
MIN_REL_TOL = 50.0 * EPS
# evaluations of one 21-point Gauss-Kronrod panel
GK_POINTS = 21
# interior break points of the (0, 1) map stay strictly inside the interval
LAST_BELOW_ONE = 1.0 - EPS


class QuadratureResult(NamedTuple):
    value: float
    abs_err: float
    converged: bool
    n_evals: int


# ------------------------
# Root finding
# ------------------------
def solve_root(
    f: Callable[[float], float],
    bracket: RootBracket | Sequence[float],
    tol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    if not isinstance(bracket, RootBracket):
        bracket = RootBracket(lo=bracket[0], hi=bracket[1])
    lo, hi = bracket.lo, bracket.hi
    f_lo, f_hi = f(lo), f(hi)
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        raise NonFiniteValue(f"root function not finite on bracket [{lo}, {hi}]")
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0:
        raise NoSignChange(f"no sign change on [{lo}, {hi}]: f(lo)={f_lo:.6g}, f(hi)={f_hi:.6g}")

    root, info = optimize.brentq(
        f, lo, hi, xtol=tol, rtol=4 * EPS, maxiter=max_iter, full_output=True, disp=False
    )
    if not info.converged:
        raise MaxIterations(f"Brent solver stopped after {info.iterations} iterations: {info.flag}")
    return float(root)


def expand_bracket(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    grow_lo: bool = False,
    max_doublings: int = 64,
) -> Optional[tuple[float, float]]:
    """Double the width of [lo, hi] until f changes sign. None if it never does."""
    f_lo, f_hi = f(lo), f(hi)
    for _ in range(max_doublings):
        if f_lo * f_hi <= 0:
            return lo, hi
        width = hi - lo
        hi = hi + width
        f_hi = f(hi)
        if grow_lo:
            lo = lo - width
            f_lo = f(lo)
    return (lo, hi) if f_lo * f_hi <= 0 else None


# ------------------------
# Quadrature
# ------------------------
def _panel_limit(max_evals: int) -> int:
    # first panel costs 21 evaluations, every bisection 42 more
    return max(1, (max_evals - GK_POINTS) // (2 * GK_POINTS) + 1)


def integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    ctrl: QuadratureControl = QuadratureControl(),
    points: Optional[Sequence[float]] = None,
) -> QuadratureResult:
    """
    Adaptive Gauss-Kronrod quadrature of f over (a, b).

    An infinite upper limit is mapped to (0, 1) with w = a + t/(1-t) and
    Jacobian 1/(1-t)^2. Interior ``points`` are given on the original scale.
    Running out of evaluations is reported through ``converged`` and never
    raised.
    """
    if math.isinf(b):
        def g(t):
            one_minus = 1.0 - t
            if one_minus <= 0.0:
                return 0.0
            return f(a + t / one_minus) / (one_minus * one_minus)

        lo, hi = 0.0, 1.0
        mapped = [min((p - a) / (1.0 + p - a), LAST_BELOW_ONE) for p in points or () if p > a]
    else:
        g, lo, hi = f, a, b
        mapped = [p for p in points or () if a < p < b]

    epsabs = ctrl.abs_tol
    epsrel = ctrl.rel_tol if epsabs > 0 else max(ctrl.rel_tol, MIN_REL_TOL)
    limit = _panel_limit(ctrl.max_evals)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sp_integrate.IntegrationWarning)
        out = sp_integrate.quad(
            g,
            lo,
            hi,
            epsabs=epsabs,
            epsrel=epsrel,
            limit=max(limit, len(mapped) + 1),
            points=mapped or None,
            full_output=1,
        )
    value, abs_err, info = out[0], out[1], out[2]
    converged = len(out) == 3
    if not converged:
        logger.debug(f"quadrature flagged on ({a}, {b}): {out[3]}")
    return QuadratureResult(float(value), float(abs_err), converged, int(info.get("neval", 0)))


# ------------------------
# Finite differences
# ------------------------
def default_step(x: np.ndarray) -> np.ndarray:
    return EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(x))


def numeric_gradient(
    F: Callable[[np.ndarray], np.ndarray | float],
    x: Sequence[float] | float,
    step: Optional[float] = None,
    lower: Optional[Sequence[float]] = None,
    upper: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    Central-difference Jacobian of F at x, shape (len(F(x)), len(x)).

    Points that would leave [lower, upper] fall back to a one-sided difference.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = default_step(x) if step is None else np.full_like(x, float(step))
    if np.any(h <= 0):
        raise DomainError("finite-difference step must be > 0")
    lo = np.full_like(x, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full_like(x, np.inf) if upper is None else np.asarray(upper, dtype=float)

    def evaluate(point):
        value = np.atleast_1d(np.asarray(F(point), dtype=float))
        if not np.all(np.isfinite(value)):
            raise NonFiniteValue(f"function not finite at {point.tolist()}")
        return value

    columns = []
    center = None
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h[i]
        down[i] -= h[i]
        if up[i] > hi[i]:
            center = evaluate(x) if center is None else center
            columns.append((center - evaluate(down)) / h[i])
        elif down[i] < lo[i]:
            center = evaluate(x) if center is None else center
            columns.append((evaluate(up) - center) / h[i])
        else:
            columns.append((evaluate(up) - evaluate(down)) / (2.0 * h[i]))
    return np.column_stack(columns)


# ------------------------
# Special functions
# ------------------------
def log_gamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("log_gamma needs x > 0")
    return sp_special.gammaln(x) if x.ndim else float(sp_special.gammaln(x))


def digamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("digamma needs x > 0")
    return sp_special.digamma(x) if x.ndim else float(sp_special.digamma(x))


def truncated_zeta_sum(s: float, terms: int) -> float:
    """sum_{j=1}^{terms} j^(-s), accumulated from the smallest term."""
    if terms < 1:
        raise DomainError("truncated zeta sum needs at least one term")
    j = np.arange(terms, 0, -1, dtype=float)
    return float(np.sum(j ** (-float(s))))


def special(kind: str, x: float, terms: Optional[int] = None) -> float:
    if kind == "log_gamma":
        return log_gamma(x)
    if kind == "digamma":
        return digamma(x)
    if kind == "truncated_zeta_sum":
        if terms is None:
            raise DomainError("truncated_zeta_sum needs terms")
        return truncated_zeta_sum(x, terms)
    raise DomainError(f"unknown special function '{kind}'")
