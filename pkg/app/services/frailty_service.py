"""
Frailty distributions: densities, Laplace transforms and their derivatives,
the psi ratio of the baseline recursion, Kendall's tau and variate sampling.

Laplace transform derivatives are handled in log space. For a cluster with
N events and cumulative hazard H the estimator needs the nonnegative moment
integral

    phi(N, H) = int w^N exp(-H w) f(w) dw = (-1)^N L^(N)(H)

so ``log_phi`` returns log phi together with d log phi / d theta. Gamma and
PVF have closed forms, lognormal and inverse Gaussian are integrated
numerically.
"""

import functools
import logging
import math
from typing import Optional, Sequence

import mpmath
import numpy as np
from scipy import optimize, special as sp_special
from scipy.interpolate import CubicSpline

from app.models.errors import DomainError, FrailtyError, NoSignChange, NoSolution, NumericalUnderflow, Unsupported
from app.models.models import DEGENERATE_TOL, THETA_BOUNDS, THETA_INIT, FrailtyKind
from app.schema.schema import TIGHT_QUADRATURE, FrailtySpec, LtQuery, QuadratureControl
from app.services.numerics_service import integrate, solve_root

logger = logging.getLogger("frailty.frailty")

NONE_SPEC = FrailtySpec(kind=FrailtyKind.none)
QUADRATURE_KINDS = (FrailtyKind.lognormal, FrailtyKind.invgauss)
# grid in log w for locating the peak of a moment integrand
LOG_PEAK_GRID = np.linspace(-700.0, 700.0, 1401)
# below this the series density needs too many terms; its mass there is negligible
PVF_SERIES_MAX_ARG = 40.0
INIT_TAU = 0.3


# ------------------------
# Spec helpers
# ------------------------
@functools.lru_cache(maxsize=256)
def _warn_degenerate(kind: FrailtyKind, theta: float):
    logger.warning(f"{kind.value} frailty with theta={theta:g} treated as degenerate (no frailty)")


def effective_spec(spec: FrailtySpec) -> FrailtySpec:
    """Clamp parameter values at the degenerate limit to the no-frailty spec."""
    kind, theta = spec.kind, spec.theta
    if kind in (FrailtyKind.gamma, FrailtyKind.lognormal, FrailtyKind.invgauss) and theta < DEGENERATE_TOL:
        _warn_degenerate(kind, theta)
        return NONE_SPEC
    if kind == FrailtyKind.pvf and theta > 1.0 - DEGENERATE_TOL:
        _warn_degenerate(kind, theta)
        return NONE_SPEC
    return spec


def is_degenerate(spec: FrailtySpec) -> bool:
    return effective_spec(spec).kind == FrailtyKind.none


def frailty_mean(spec: FrailtySpec) -> float:
    if spec.kind == FrailtyKind.lognormal:
        return math.exp(spec.theta / 2.0)
    if spec.kind == FrailtyKind.posstab:
        return math.inf
    return 1.0


def frailty_variance(spec: FrailtySpec) -> float:
    kind, theta = spec.kind, spec.theta
    if kind in (FrailtyKind.gamma, FrailtyKind.invgauss):
        return theta
    if kind == FrailtyKind.pvf:
        return 1.0 - theta
    if kind == FrailtyKind.lognormal:
        return math.exp(2.0 * theta) - math.exp(theta)
    if kind == FrailtyKind.posstab:
        return math.inf
    return 0.0


def theta_bounds(kind: FrailtyKind) -> tuple[float, float]:
    if kind not in THETA_BOUNDS:
        raise Unsupported(f"{kind.value} frailty cannot be estimated")
    return THETA_BOUNDS[kind]


def _as_query(q) -> LtQuery:
    if isinstance(q, LtQuery):
        return q
    m, s = q
    return LtQuery(m=m, s=s)


# ------------------------
# Densities
# ------------------------
def _log_density(kind: FrailtyKind, theta: float, w):
    w = np.asarray(w, dtype=float)
    if kind == FrailtyKind.gamma:
        a = 1.0 / theta
        return (a - 1.0) * np.log(w) - a * w + a * math.log(a) - sp_special.gammaln(a)
    if kind == FrailtyKind.lognormal:
        lw = np.log(w)
        return -lw - 0.5 * math.log(2.0 * math.pi * theta) - lw * lw / (2.0 * theta)
    if kind == FrailtyKind.invgauss:
        return -0.5 * np.log(2.0 * math.pi * theta * w**3) - (w - 1.0) ** 2 / (2.0 * theta * w)
    raise Unsupported(f"no closed-form density for {kind.value} frailty")


def _dlog_density_dtheta(kind: FrailtyKind, theta: float, w):
    w = np.asarray(w, dtype=float)
    if kind == FrailtyKind.lognormal:
        lw = np.log(w)
        return lw * lw / (2.0 * theta * theta) - 0.5 / theta
    if kind == FrailtyKind.invgauss:
        return (w - 1.0) ** 2 / (2.0 * theta * theta * w) - 0.5 / theta
    raise Unsupported(f"density theta-derivative is only used for lognormal and invgauss, not {kind.value}")


def _check_omega(omega):
    if np.any(np.asarray(omega) <= 0):
        raise DomainError("frailty density needs omega > 0")


def density(spec: FrailtySpec, omega):
    _check_omega(omega)
    if spec.kind in (FrailtyKind.posstab, FrailtyKind.none):
        raise Unsupported(f"no density for {spec.kind.value} frailty")
    if is_degenerate(spec):
        raise Unsupported("degenerate frailty has no density")
    if spec.kind == FrailtyKind.pvf:
        if np.ndim(omega):
            return np.array([pvf_density_series(float(w), spec.theta) for w in np.ravel(omega)]).reshape(np.shape(omega))
        return pvf_density_series(float(omega), spec.theta)
    out = np.exp(_log_density(spec.kind, spec.theta, omega))
    return out if np.ndim(omega) else float(out)


def density_dtheta(spec: FrailtySpec, omega):
    _check_omega(omega)
    if spec.kind not in QUADRATURE_KINDS:
        raise Unsupported(f"density theta-derivative is only used for lognormal and invgauss, not {spec.kind.value}")
    out = np.exp(_log_density(spec.kind, spec.theta, omega)) * _dlog_density_dtheta(spec.kind, spec.theta, omega)
    return out if np.ndim(omega) else float(out)


def pvf_density_series(omega: float, theta: float, rel_tol: float = 1e-25, max_terms: int = 5000) -> float:
    """
    PVF density from its alternating series, evaluated in multiprecision.

    Used as a test oracle only. Arguments where omega^-theta/theta exceeds
    PVF_SERIES_MAX_ARG return 0.
    """
    if omega <= 0:
        raise DomainError("frailty density needs omega > 0")
    x = omega ** (-theta) / theta
    if x > PVF_SERIES_MAX_ARG:
        return 0.0
    k = np.arange(1, max_terms + 1, dtype=float)
    log_mag = sp_special.gammaln(k * theta + 1.0) - sp_special.gammaln(k + 1.0) + k * math.log(x)
    peak_k = int(np.argmax(log_mag)) + 1
    digits = int(30 + max(0.0, log_mag.max()) / math.log(10.0))

    with mpmath.workdps(digits):
        w, th = mpmath.mpf(omega), mpmath.mpf(theta)
        xm = w ** (-th) / th
        total = mpmath.mpf(0)
        for j in range(1, max_terms + 1):
            mag = mpmath.gamma(j * th + 1) / mpmath.factorial(j) * xm**j
            total += (-1) ** (j + 1) * mag * mpmath.sinpi(j * th)
            if j > peak_k and mag < rel_tol * abs(total):
                break
        value = mpmath.exp(-w + 1 / th) * total / (mpmath.pi * w)
        return float(value)


# ------------------------
# Laplace transform derivatives (log space)
# ------------------------
class LtCache:
    """Memo of quadrature-based moment integrals, owned by a single fit."""

    def __init__(self):
        self._store = {}
        self.hits = 0
        self.misses = 0

    def get(self, key):
        value = self._store.get(key)
        if value is not None:
            self.hits += 1
        return value

    def put(self, key, value):
        self.misses += 1
        self._store[key] = value

    def clear(self):
        self._store.clear()


def _gamma_log_phi(theta, m, s):
    a = 1.0 / theta
    ratio = np.log1p(s / a)
    log_v = -a * ratio - m * np.log(a + s) + sp_special.gammaln(a + m) - sp_special.gammaln(a)
    d_da = -ratio + (s - m) / (a + s) + sp_special.digamma(a + m) - sp_special.digamma(a)
    return log_v, -a * a * d_da


def pvf_coefficients(theta: float, m: int) -> np.ndarray:
    """c_{m,j} for j = 0..m (c_{m,0} = 0), from c_{1,1} = 1."""
    c = np.zeros(m + 1)
    if m == 0:
        return c
    c[1] = 1.0
    j = np.arange(m + 1)
    for order in range(2, m + 1):
        new = np.zeros(m + 1)
        new[1:] = c[:-1]
        new += c * ((order - 1) - j * theta)
        c = new
    return c


def _pvf_log_phi(theta, m, s):
    x = 1.0 + s
    lx = np.log(x)
    xt = x**theta
    log_l0 = -(xt - 1.0) / theta
    dlog_l0 = (xt - 1.0) / theta**2 - xt * lx / theta
    log_v, dlog = log_l0.copy(), dlog_l0.copy()
    top = int(m.max()) if m.size else 0
    if top == 0:
        return log_v, dlog

    # a_j = c_{m,j} x^(j theta - m) and b_j = dc_{m,j}/dtheta x^(j theta - m),
    # rescaled by their row maximum after every order
    n = s.size
    up = (x ** (theta - 1.0))[:, None]
    down = (1.0 / x)[:, None]
    j = np.arange(top + 1, dtype=float)
    a = np.zeros((n, top + 1))
    b = np.zeros((n, top + 1))
    a[:, 1] = up[:, 0]
    log_scale = np.zeros(n)
    for order in range(1, top + 1):
        if order > 1:
            coef = (order - 1) - j * theta
            a_new = np.zeros_like(a)
            b_new = np.zeros_like(b)
            a_new[:, 1:] = a[:, :-1] * up
            b_new[:, 1:] = b[:, :-1] * up
            a_new += a * coef * down
            b_new += (b * coef - j * a) * down
            peak = a_new.max(axis=1)
            peak[peak <= 0] = 1.0
            a = a_new / peak[:, None]
            b = b_new / peak[:, None]
            log_scale += np.log(peak)
        hit = m == order
        if hit.any():
            total = a[hit].sum(axis=1)
            d_total = (b[hit] + j * lx[hit][:, None] * a[hit]).sum(axis=1)
            log_v[hit] = log_l0[hit] + np.log(total) + log_scale[hit]
            dlog[hit] = dlog_l0[hit] + d_total / total
    return log_v, dlog


def _moment_integral(kind, theta, m, s, ctrl, with_dtheta):
    """log phi(m, s) and its theta-derivative by quadrature over u = log w, centred on the integrand's peak."""

    def log_integrand(u):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            w = np.exp(u)
            return (m + 1) * u - s * w + _log_density(kind, theta, w)

    on_grid = log_integrand(LOG_PEAK_GRID)
    if not np.any(np.isfinite(on_grid)):
        raise NumericalUnderflow(f"moment integrand not finite for {kind.value}(theta={theta:g}) m={m} s={s:g}")
    top = int(np.nanargmax(np.where(np.isfinite(on_grid), on_grid, -np.inf)))
    step = LOG_PEAK_GRID[1] - LOG_PEAK_GRID[0]
    refined = optimize.minimize_scalar(
        lambda u: -float(log_integrand(u)),
        bounds=(LOG_PEAK_GRID[top] - step, LOG_PEAK_GRID[top] + step),
        method="bounded",
    )
    center = float(refined.x) if refined.success and -refined.fun >= on_grid[top] else float(LOG_PEAK_GRID[top])
    shift = float(log_integrand(center))

    def scaled(u):
        v = float(log_integrand(center + u)) - shift
        return math.exp(v) if math.isfinite(v) and v > -745.0 else 0.0

    def both_sides(h):
        right = integrate(h, 0.0, math.inf, ctrl)
        left = integrate(lambda v: h(-v), 0.0, math.inf, ctrl)
        return right.value + left.value, right.converged and left.converged

    value, converged = both_sides(scaled)
    if not value > 0.0:
        raise NumericalUnderflow(f"moment integral underflow for {kind.value}(theta={theta:g}) m={m} s={s:g}")
    log_v = shift + math.log(value)
    if not with_dtheta:
        return log_v, math.nan, converged

    def weighted(u):
        base = scaled(u)
        return base * float(_dlog_density_dtheta(kind, theta, math.exp(center + u))) if base > 0.0 else 0.0

    d_value, d_converged = both_sides(weighted)
    return log_v, d_value / value, converged and d_converged


def _quadrature_log_phi(spec, m, s, ctrl, with_dtheta, cache):
    log_v = np.empty(s.size)
    dlog = np.full(s.size, np.nan)
    for i, (mi, si) in enumerate(zip(m.tolist(), s.tolist())):
        key = (spec.kind, spec.theta, mi, si, ctrl, with_dtheta)
        hit = cache.get(key) if cache is not None else None
        if hit is None:
            hit = _moment_integral(spec.kind, spec.theta, mi, si, ctrl, with_dtheta)
            if cache is not None:
                cache.put(key, hit)
        log_v[i], dlog[i] = hit[0], hit[1]
    return log_v, dlog


class MomentTable:
    """
    Interpolated log phi(m, .) for one quadrature-based spec.

    Each order m gets a cubic spline in log1p(s) over ``nodes`` quadrature
    evaluations on [0, s_max]; s_max grows fourfold whenever a query exceeds it.
    """

    def __init__(self, spec: FrailtySpec, ctrl: QuadratureControl, nodes: int = 96, s_max: float = 64.0):
        if spec.kind not in QUADRATURE_KINDS:
            raise Unsupported(f"moment tables are only built for quadrature kinds, not {spec.kind.value}")
        self.spec = spec
        self.ctrl = ctrl
        self.nodes = nodes
        self.initial_s_max = s_max
        self._log = {}
        self._dlog = {}
        self.builds = 0

    def _build(self, m: int, s_needed: float, with_dtheta: bool):
        store = self._dlog if with_dtheta else self._log
        entry = store.get(m)
        if entry is not None and entry[0] >= s_needed:
            return entry[1]
        s_max = entry[0] if entry is not None else self.initial_s_max
        while s_max < s_needed:
            s_max *= 4.0
        u = np.linspace(0.0, math.log1p(s_max), self.nodes)
        values = [_moment_integral(self.spec.kind, self.spec.theta, m, si, self.ctrl, with_dtheta) for si in np.expm1(u)]
        self.builds += 1
        log_spline = CubicSpline(u, [v[0] for v in values])
        self._log[m] = (s_max, log_spline)
        if with_dtheta:
            self._dlog[m] = (s_max, CubicSpline(u, [v[1] for v in values]))
            return self._dlog[m][1]
        return log_spline

    def evaluate(self, m: np.ndarray, s: np.ndarray, with_dtheta: bool):
        log_v = np.empty(s.size)
        dlog = np.full(s.size, np.nan)
        u = np.log1p(s)
        for order in np.unique(m).tolist():
            sel = m == order
            s_needed = float(s[sel].max())
            if with_dtheta:
                dlog[sel] = self._build(order, s_needed, True)(u[sel])
            log_v[sel] = self._build(order, s_needed, False)(u[sel])
        return log_v, dlog


def log_phi(
    spec: FrailtySpec,
    m,
    s,
    ctrl: QuadratureControl = QuadratureControl(),
    with_dtheta: bool = False,
    cache: Optional[LtCache | MomentTable] = None,
):
    """
    log of (-1)^m L^(m)(s) and its theta-derivative, elementwise over (m, s).

    The derivative is NaN for quadrature kinds unless ``with_dtheta`` is set.
    A ``MomentTable`` built for the same spec replaces direct quadrature.
    """
    m_arr, s_arr = np.broadcast_arrays(np.asarray(m, dtype=np.int64), np.asarray(s, dtype=float))
    shape = m_arr.shape
    m_arr, s_arr = m_arr.ravel(), s_arr.ravel().copy()
    if np.any(m_arr < 0) or np.any(s_arr < 0):
        raise DomainError("Laplace transform query needs m >= 0 and s >= 0")

    spec = effective_spec(spec)
    if spec.kind == FrailtyKind.none:
        log_v, dlog = -s_arr, np.zeros_like(s_arr)
    elif spec.kind == FrailtyKind.gamma:
        log_v, dlog = _gamma_log_phi(spec.theta, m_arr, s_arr)
    elif spec.kind == FrailtyKind.pvf:
        log_v, dlog = _pvf_log_phi(spec.theta, m_arr, s_arr)
    elif spec.kind in QUADRATURE_KINDS and isinstance(cache, MomentTable) and cache.spec == spec:
        log_v, dlog = cache.evaluate(m_arr, s_arr, with_dtheta)
    elif spec.kind in QUADRATURE_KINDS:
        memo = cache if isinstance(cache, LtCache) else None
        log_v, dlog = _quadrature_log_phi(spec, m_arr, s_arr, ctrl, with_dtheta, memo)
    else:
        raise Unsupported(f"{spec.kind.value} frailty is not supported in estimation")
    return log_v.reshape(shape), dlog.reshape(shape)


def _posstab_lt(alpha: float, m: int, s: float) -> float:
    base = math.exp(-(s**alpha)) if s > 0 else 1.0
    if m == 0:
        return base
    if s == 0:
        return -math.inf if m == 1 else math.inf
    if m == 1:
        return -alpha * s ** (alpha - 1.0) * base
    if m == 2:
        return base * (alpha * alpha * s ** (2.0 * alpha - 2.0) - alpha * (alpha - 1.0) * s ** (alpha - 2.0))
    raise Unsupported("positive stable Laplace transform derivatives above order 2 are not supported")


def lt(spec: FrailtySpec, q, ctrl: QuadratureControl = QuadratureControl()) -> float:
    q = _as_query(q)
    if spec.kind == FrailtyKind.posstab:
        return _posstab_lt(spec.theta, q.m, q.s)
    log_v, _ = log_phi(spec, q.m, q.s, ctrl)
    sign = -1.0 if q.m % 2 else 1.0
    return sign * math.exp(float(log_v))


def lt_dtheta(spec: FrailtySpec, q, ctrl: QuadratureControl = QuadratureControl()) -> float:
    q = _as_query(q)
    if spec.kind == FrailtyKind.posstab:
        raise Unsupported("positive stable frailty is sampling only")
    log_v, dlog = log_phi(spec, q.m, q.s, ctrl, with_dtheta=True)
    sign = -1.0 if q.m % 2 else 1.0
    return sign * math.exp(float(log_v)) * float(dlog)


def psi(
    spec: FrailtySpec,
    n_events,
    H,
    ctrl: QuadratureControl = QuadratureControl(),
    cache: Optional[LtCache | MomentTable] = None,
):
    """Conditional frailty mean phi(N+1, H) / phi(N, H)."""
    n_events = np.asarray(n_events, dtype=np.int64)
    H = np.asarray(H, dtype=float)
    spec = effective_spec(spec)
    if spec.kind == FrailtyKind.none:
        out = np.ones(np.broadcast(n_events, H).shape)
        return out if out.ndim else 1.0
    if spec.kind == FrailtyKind.gamma:
        a = 1.0 / spec.theta
        out = (a + n_events) / (a + H)
        return out if out.ndim else float(out)
    n_events, H = np.broadcast_arrays(n_events, H)
    both, _ = log_phi(spec, np.concatenate([n_events.ravel() + 1, n_events.ravel()]), np.tile(H.ravel(), 2), ctrl, cache=cache)
    upper, lower = both[: H.size].reshape(H.shape), both[H.size :].reshape(H.shape)
    if np.any(np.isneginf(upper) & np.isneginf(lower)):
        raise NumericalUnderflow("both moment integrals of psi underflowed")
    out = np.exp(upper - lower)
    return out if out.ndim else float(out)


# ------------------------
# Kendall's tau
# ------------------------
def _invgauss_lt_pair(theta: float, s: float) -> tuple[float, float]:
    r = math.sqrt(1.0 + 2.0 * theta * s)
    value = math.exp((1.0 - r) / theta)
    return value, value / (r * r) + theta * value / r**3


def kendall_tau(spec: FrailtySpec, ctrl: QuadratureControl = TIGHT_QUADRATURE) -> float:
    """4 int_0^inf s L(s) L''(s) ds - 1."""
    spec = effective_spec(spec)
    if spec.kind == FrailtyKind.none:
        return 0.0
    if spec.kind == FrailtyKind.invgauss:
        def pair(s):
            return _invgauss_lt_pair(spec.theta, s)
    elif spec.kind == FrailtyKind.lognormal:
        inner = QuadratureControl(abs_tol=0.0, rel_tol=1e-9, max_evals=5000)

        def pair(s):
            return lt(spec, (0, s), inner), lt(spec, (2, s), inner)
    else:
        def pair(s):
            return lt(spec, (0, s)), lt(spec, (2, s))

    def integrand(s):
        value, second = pair(s)
        return s * value * second

    scale = [1.0 / spec.theta] if spec.kind in (FrailtyKind.gamma, FrailtyKind.invgauss) else [1.0]
    res = integrate(integrand, 0.0, math.inf, ctrl, points=scale)
    if not res.converged:
        logger.warning(f"Kendall's tau quadrature for {spec.kind.value}(theta={spec.theta:g}) did not converge")
    kappa = 4.0 * res.value - 1.0
    return max(kappa, 0.0) if kappa > -1e-8 else kappa


def theta_for_tau(kind: FrailtyKind, tau: float) -> float:
    """Inverse of kendall_tau in theta for an estimable kind."""
    if not 0 < tau < 1:
        raise DomainError("Kendall's tau must lie in (0, 1)")
    if kind == FrailtyKind.gamma:
        return 2.0 * tau / (1.0 - tau)
    if kind == FrailtyKind.posstab:
        return 1.0 - tau
    lo, hi = theta_bounds(kind)
    lo, hi = max(lo, 1e-4), min(hi, 1e3)
    try:
        return solve_root(lambda th: kendall_tau(FrailtySpec(kind=kind, theta=th)) - tau, (lo, hi), tol=1e-8)
    except NoSignChange as e:
        raise NoSolution(f"Kendall's tau {tau} is out of reach for {kind.value} frailty: {e}")


@functools.lru_cache(maxsize=None)
def initial_theta(kind: FrailtyKind) -> float:
    """Theta giving a Kendall's tau of INIT_TAU, the tabulated start when that cannot be solved."""
    try:
        return theta_for_tau(kind, INIT_TAU)
    except FrailtyError as e:
        logger.warning(f"No theta with tau={INIT_TAU} for {kind.value} frailty ({e}); starting at {THETA_INIT[kind]}")
        return THETA_INIT[kind]


# ------------------------
# Sampling
# ------------------------
def _positive_stable(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Variates with Laplace transform exp(-s^alpha), by the Kanter representation."""
    u = rng.uniform(0.0, math.pi, size=n)
    e = rng.exponential(1.0, size=n)
    left = np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
    right = (np.sin((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha)
    return left * right


def _pvf_variates(theta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    # sum of `pieces` exponentially tilted stable variates, each drawn by rejection
    pieces = max(1, math.ceil(1.0 / theta))
    scale = (1.0 / (pieces * theta)) ** (1.0 / theta)
    total = np.zeros(n)
    for _ in range(pieces):
        out = np.empty(n)
        pending = np.arange(n)
        while pending.size:
            x = scale * _positive_stable(theta, pending.size, rng)
            keep = rng.random(pending.size) <= np.exp(-x)
            out[pending[keep]] = x[keep]
            pending = pending[~keep]
        total += out
    return total


def sample(spec: FrailtySpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise DomainError("sample size must be >= 1")
    kind = spec.kind
    if kind != FrailtyKind.posstab:
        spec = effective_spec(spec)
        kind = spec.kind
    theta = spec.theta
    if kind == FrailtyKind.none:
        return np.ones(n)
    if kind == FrailtyKind.gamma:
        return rng.gamma(shape=1.0 / theta, scale=theta, size=n)
    if kind == FrailtyKind.lognormal:
        return np.exp(rng.normal(0.0, math.sqrt(theta), size=n))
    if kind == FrailtyKind.invgauss:
        return rng.wald(1.0, 1.0 / theta, size=n)
    if kind == FrailtyKind.pvf:
        return _pvf_variates(theta, n, rng)
    return _positive_stable(theta, n, rng)


def sample_laplace(samples: np.ndarray, s: Sequence[float]) -> np.ndarray:
    """Empirical Laplace transform mean(exp(-s w)) of frailty draws."""
    samples = np.asarray(samples, dtype=float)
    return np.array([np.mean(np.exp(-si * samples)) for si in s])
