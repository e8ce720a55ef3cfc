"""
Semiparametric shared frailty estimation.

The cumulative baseline hazard is profiled out by a forward recursion over the
distinct failure times: each increment is the (weighted) number of failures
divided by the at-risk sum of exp(beta'Z) scaled by the conditional frailty
mean psi of every cluster, evaluated on the history before that time. The
regression coefficients and the frailty parameter gamma = (beta, theta) are then
estimated either by maximizing the profiled log-likelihood (``loglik``) or by
solving the profiled score equations (``score``).
"""

import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from app.models.dataset import ClusteredDataset, StepFunction
from app.models.errors import ConfigError, FrailtyError, NonFiniteValue, Unsupported
from app.models.models import BOUNDARY_TOL, ESTIMABLE_KINDS, CurveType, FitMethod, FrailtyKind
from app.models.results import FitResult, TraceRecord
from app.schema.schema import FitControl, FrailtySpec
from app.services import frailty_service as frailty
from app.services.coxinit_service import coxinit_service
from app.services.numerics_service import numeric_gradient

logger = logging.getLogger("frailty.fit")

MAX_DAMPING = 10
POLISH_TOL = 1e-6
STATIONARY_TOL = 1e-3
TABLE_MEMO_SIZE = 4


# ------------------------
# Prepared problem
# ------------------------
@dataclass
class FitProblem:
    """A dataset laid out for repeated baseline, likelihood and score evaluations."""

    data: ClusteredDataset
    kind: FrailtyKind
    control: FitControl
    weights: np.ndarray
    codes: np.ndarray
    n: int
    order: np.ndarray
    sorted_codes: np.ndarray
    tau: np.ndarray
    starts: np.ndarray
    fail_index: np.ndarray
    fail_codes_by_tau: np.ndarray
    fail_bounds: np.ndarray
    weighted_failures: np.ndarray

    def __post_init__(self):
        self._tables = OrderedDict()

    @property
    def has_theta(self) -> bool:
        return self.kind != FrailtyKind.none

    @property
    def labels(self) -> list[str]:
        return list(self.data.covariate_names) + (["theta"] if self.has_theta else [])

    def bounds(self) -> list[tuple]:
        out = [(None, None)] * self.data.n_covariates
        if self.has_theta:
            out.append(frailty.theta_bounds(self.kind))
        return out

    def split(self, gamma) -> tuple[np.ndarray, FrailtySpec]:
        gamma = np.asarray(gamma, dtype=float)
        p = self.data.n_covariates
        if gamma.size != p + int(self.has_theta):
            raise ConfigError(f"expected {p + int(self.has_theta)} parameters, got {gamma.size}")
        if not self.has_theta:
            return gamma, frailty.NONE_SPEC
        return gamma[:p], frailty.effective_spec(FrailtySpec(kind=self.kind, theta=float(gamma[p])))

    def memo(self, spec: FrailtySpec):
        """Moment-integral memo for the current theta; lognormal and inverse Gaussian only."""
        if spec.kind not in frailty.QUADRATURE_KINDS:
            return None
        key = spec.theta
        if key in self._tables:
            self._tables.move_to_end(key)
            return self._tables[key]
        if self.control.int_table_nodes > 0:
            memo = frailty.MomentTable(spec, self.control.quadrature, nodes=self.control.int_table_nodes)
        else:
            memo = frailty.LtCache()
        self._tables[key] = memo
        while len(self._tables) > TABLE_MEMO_SIZE:
            self._tables.popitem(last=False)
        return memo


def prepare(
    data: ClusteredDataset,
    kind: FrailtyKind,
    control: Optional[FitControl] = None,
    weights: Optional[np.ndarray] = None,
) -> FitProblem:
    control = control or FitControl()
    codes = data.cluster_codes
    n = data.n_clusters
    v = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if v.shape != (n,):
        raise ConfigError(f"expected {n} cluster weights, got shape {v.shape}")

    order = np.argsort(data.time, kind="stable")
    sorted_time = data.time[order]
    fail_index = np.flatnonzero(data.status == 1)
    tau = np.unique(data.time[fail_index])
    fail_tau = np.searchsorted(tau, data.time[fail_index])
    by_tau = np.argsort(fail_tau, kind="stable")
    return FitProblem(
        data=data,
        kind=kind,
        control=control,
        weights=v,
        codes=codes,
        n=n,
        order=order,
        sorted_codes=codes[order],
        tau=tau,
        starts=np.searchsorted(sorted_time, tau, side="left"),
        fail_index=fail_index,
        fail_codes_by_tau=codes[fail_index][by_tau],
        fail_bounds=np.searchsorted(fail_tau[by_tau], np.arange(tau.size + 1)),
        weighted_failures=np.bincount(fail_tau, weights=v[codes[fail_index]], minlength=tau.size),
    )


# ------------------------
# Profile pieces
# ------------------------
def estimate_profile_baseline(problem: FitProblem, gamma) -> StepFunction:
    beta, spec = problem.split(gamma)
    if problem.tau.size == 0:
        return StepFunction.zero()
    ctrl = problem.control.quadrature
    memo = problem.memo(spec)
    v = problem.weights
    r_sorted = np.exp(problem.data.covariates @ beta)[problem.order]
    codes = problem.sorted_codes

    risk = np.bincount(codes, weights=r_sorted, minlength=problem.n)
    at_risk = np.bincount(codes, minlength=problem.n)
    H = np.zeros(problem.n)
    N = np.zeros(problem.n, dtype=np.int64)
    increments = np.empty(problem.tau.size)
    left = 0
    for k, start in enumerate(problem.starts):
        if start > left:
            np.subtract.at(risk, codes[left:start], r_sorted[left:start])
            np.subtract.at(at_risk, codes[left:start], 1)
            risk[at_risk == 0] = 0.0
            left = start
        live = at_risk > 0
        if spec.kind == FrailtyKind.none:
            denom = np.dot(v[live], risk[live])
        else:
            ps = frailty.psi(spec, N[live], H[live], ctrl, cache=memo)
            denom = np.dot(v[live] * ps, risk[live])
        increments[k] = problem.weighted_failures[k] / denom
        H[live] += increments[k] * risk[live]
        np.add.at(N, problem.fail_codes_by_tau[problem.fail_bounds[k] : problem.fail_bounds[k + 1]], 1)
    return StepFunction(problem.tau, np.cumsum(increments))


def _cluster_totals(problem: FitProblem, beta, baseline: StepFunction):
    eta = problem.data.covariates @ beta
    h_obs = baseline(problem.data.time) * np.exp(eta)
    H = np.bincount(problem.codes, weights=h_obs, minlength=problem.n)
    N = np.bincount(problem.codes, weights=problem.data.status, minlength=problem.n).astype(np.int64)
    return eta, h_obs, H, N


def profile_loglik(problem: FitProblem, gamma, baseline: StepFunction) -> float:
    beta, spec = problem.split(gamma)
    eta, _, H, N = _cluster_totals(problem, beta, baseline)
    fails = problem.fail_index
    jumps = baseline.jump_at(problem.data.time[fails])
    if np.any(jumps <= 0):
        raise NonFiniteValue("baseline has no increment at an observed failure time")
    log_v, _ = frailty.log_phi(spec, N, H, problem.control.quadrature, cache=problem.memo(spec))
    v = problem.weights
    event_part = np.sum(v[problem.codes[fails]] * (np.log(jumps) + eta[fails]))
    value = float(event_part + np.dot(v, log_v))
    if not math.isfinite(value):
        raise NonFiniteValue(f"log-likelihood is not finite at gamma={np.asarray(gamma).tolist()}")
    return value


def cluster_score_matrix(problem: FitProblem, gamma, baseline: StepFunction) -> np.ndarray:
    beta, spec = problem.split(gamma)
    _, h_obs, H, N = _cluster_totals(problem, beta, baseline)
    data, codes = problem.data, problem.codes
    ctrl, memo = problem.control.quadrature, problem.memo(spec)

    if spec.kind == FrailtyKind.none:
        ps, dlog = np.ones(problem.n), np.zeros(problem.n)
    else:
        upper, _ = frailty.log_phi(spec, N + 1, H, ctrl, cache=memo)
        lower, dlog = frailty.log_phi(spec, N, H, ctrl, with_dtheta=True, cache=memo)
        ps = np.exp(upper - lower)

    per_obs = data.status[:, None] * data.covariates - (ps[codes] * h_obs)[:, None] * data.covariates
    columns = [np.bincount(codes, weights=per_obs[:, j], minlength=problem.n) for j in range(data.n_covariates)]
    if problem.has_theta:
        # a clamped (degenerate) theta has no derivative information left
        columns.append(dlog if spec.kind != FrailtyKind.none else np.zeros(problem.n))
    if not columns:
        return np.zeros((problem.n, 0))
    return np.column_stack(columns) * problem.weights[:, None]


def _reflect(value: float, lo: float, hi: float, previous: float) -> float:
    if value < lo:
        value = 2.0 * lo - value
    if value > hi:
        value = 2.0 * hi - value
    if not lo < value < hi:
        value = 0.5 * (previous + (lo if value <= lo else hi))
    return value


class FitService:
    # ------------------------
    # Public profile operations
    # ------------------------
    def estimate_baseline(self, data, spec: FrailtySpec, gamma, ctrl: Optional[FitControl] = None, weights=None) -> StepFunction:
        if data.n_failures < 1:
            raise ConfigError("baseline estimation needs at least one failure")
        return estimate_profile_baseline(prepare(data, spec.kind, ctrl, weights), gamma)

    def loglik(self, data, spec: FrailtySpec, gamma, baseline: StepFunction, ctrl: Optional[FitControl] = None, weights=None) -> float:
        return profile_loglik(prepare(data, spec.kind, ctrl, weights), gamma, baseline)

    def score(self, data, spec: FrailtySpec, gamma, baseline: StepFunction, ctrl: Optional[FitControl] = None, weights=None) -> np.ndarray:
        return self.cluster_scores(data, spec, gamma, baseline, ctrl, weights).sum(axis=0)

    def cluster_scores(self, data, spec: FrailtySpec, gamma, baseline: StepFunction, ctrl: Optional[FitControl] = None, weights=None) -> np.ndarray:
        """Per-cluster score contributions, one row per cluster in order of first appearance."""
        return cluster_score_matrix(prepare(data, spec.kind, ctrl, weights), gamma, baseline)

    def profile_score(self, problem: FitProblem, gamma) -> np.ndarray:
        """Mean score with the baseline re-estimated at gamma."""
        baseline = estimate_profile_baseline(problem, gamma)
        return cluster_score_matrix(problem, gamma, baseline).sum(axis=0) / problem.weights.sum()

    # ------------------------
    # Fitting
    # ------------------------
    def fit_model(
        self,
        data: ClusteredDataset,
        spec: FrailtySpec,
        control: Optional[FitControl] = None,
        weights: Optional[np.ndarray] = None,
        se: bool = False,
    ) -> FitResult:
        control = control or FitControl()
        started = time.perf_counter()
        if spec.kind not in ESTIMABLE_KINDS:
            raise Unsupported(f"{spec.kind.value} frailty cannot be estimated")

        complete = np.all(np.isfinite(data.covariates), axis=1)
        if not complete.all():
            logger.warning(f"Dropped {int((~complete).sum())} rows with missing covariates")
            if weights is not None:
                kept = np.unique(data.cluster_codes[complete])
                weights = np.asarray(weights, dtype=float)[kept]
            data = data.subset(complete)
        if data.n_clusters < 2:
            raise ConfigError("fitting needs at least 2 clusters")
        if data.n_failures < 1:
            raise ConfigError("fitting needs at least one failure")

        try:
            kind = spec.kind
            problem = prepare(data, kind, control, weights)

            cox = coxinit_service.cox_fit(data, weights=weights)
            gamma0 = np.array(cox.beta, dtype=float)
            if problem.has_theta:
                theta0 = control.theta_init if control.theta_init is not None else frailty.initial_theta(kind)
                lo, hi = frailty.theta_bounds(kind)
                gamma0 = np.append(gamma0, min(max(theta0, lo), hi))

            if control.fit_method == FitMethod.score:
                gamma, trace, converged, reason = self._fit_score(problem, gamma0)
            elif control.inner_maximize:
                gamma, trace, converged, reason = self._fit_inner(problem, gamma0)
            else:
                gamma, trace, converged, reason = self._fit_loglik(problem, gamma0)

            baseline = estimate_profile_baseline(problem, gamma)
            value = profile_loglik(problem, gamma, baseline)
        except FrailtyError:
            raise
        except Exception as e:
            raise FrailtyError(f"fit failed: {e}")

        if not converged:
            logger.warning(f"Fit did not converge: {reason}")
        p = data.n_covariates
        theta = float(gamma[p]) if problem.has_theta else None
        boundary = False
        if theta is not None:
            lo, hi = frailty.theta_bounds(kind)
            boundary = theta - lo <= BOUNDARY_TOL or hi - theta <= BOUNDARY_TOL

        observed = np.unique(data.time)
        result = FitResult(
            beta=np.asarray(gamma[:p]),
            theta=theta,
            loglik=value,
            baseline=baseline,
            baseline_all=StepFunction(observed, baseline(observed)),
            iterations=len(trace),
            trace=tuple(trace),
            converged=converged,
            method=control.fit_method,
            reason=reason,
            frailty=FrailtySpec(kind=kind, theta=theta) if theta is not None else frailty.NONE_SPEC,
            control=control,
            covariate_names=tuple(data.covariate_names),
            boundary=boundary,
            runtime=time.perf_counter() - started,
            data_digest=data.digest(),
            obs_time=data.time,
            obs_status=data.status,
        )
        if se:
            from app.services.variance_service import variance_service

            cov = variance_service.sandwich_cov(data, result.frailty, result, weights=weights)
            errors = np.sqrt(np.clip(np.diag(cov.matrix), 0.0, None))
            result = _with_errors(result, errors)
        return result

    def _record(self, problem: FitProblem, trace: list, gamma, value: float):
        trace.append(TraceRecord(len(trace) + 1, tuple(float(g) for g in gamma), float(value)))
        if problem.control.verbose:
            params = ", ".join(f"{k}={g:.6g}" for k, g in zip(problem.labels, gamma))
            logger.info(f"iter {len(trace)}: {params} loglik={value:.6f}")

    @staticmethod
    def _loglik_converged(control: FitControl, previous: float, current: float) -> bool:
        change = abs(current - previous)
        if control.abs_tol > 0 and change <= control.abs_tol:
            return True
        return control.rel_tol > 0 and change <= control.rel_tol * abs(current)

    def _fit_loglik(self, problem: FitProblem, gamma0):
        """One L-BFGS-B run on the profile log-likelihood, the baseline refreshed at every evaluation."""
        control = problem.control
        scale = problem.weights.sum()
        state = {"previous": None, "converged": False}
        trace = []

        def objective(gamma):
            baseline = estimate_profile_baseline(problem, gamma)
            value = profile_loglik(problem, gamma, baseline)
            grad = cluster_score_matrix(problem, gamma, baseline).sum(axis=0)
            return -value / scale, -grad / scale

        def callback(intermediate_result):
            value = -float(intermediate_result.fun) * scale
            self._record(problem, trace, intermediate_result.x, value)
            if self._loglik_converged(control, state["previous"], value):
                state["converged"] = True
                raise StopIteration
            state["previous"] = value

        state["previous"] = -objective(gamma0)[0] * scale
        res = minimize(
            objective,
            gamma0,
            jac=True,
            method="L-BFGS-B",
            bounds=problem.bounds(),
            callback=callback,
            options={"maxiter": control.max_iter, "ftol": 0.0, "gtol": 0.0},
        )
        gamma = np.asarray(res.x, dtype=float)
        if state["converged"]:
            reason = "log-likelihood change within tolerance"
        elif len(trace) >= control.max_iter:
            return gamma, trace, False, f"max_iter ({control.max_iter}) reached"
        else:
            reason = f"optimizer stopped ({res.message})"
        # the fixed-baseline score only approximates the profile gradient, so the
        # optimizer can stop short of the profile score root
        polished, converged, detail, current = self._newton(problem, gamma, trace, POLISH_TOL, 0.0, control.max_iter)
        if converged:
            return polished, trace, True, f"{reason}; profile score polished"
        if current.size and self._score_norm(problem, polished, current) <= STATIONARY_TOL:
            return polished, trace, True, f"{reason}; stationary within {STATIONARY_TOL:g} ({detail})"
        return polished, trace, False, detail

    def _fit_inner(self, problem: FitProblem, gamma0):
        """Alternate a full bounded maximization at fixed baseline with a baseline refresh."""
        control = problem.control
        scale = problem.weights.sum()
        trace = []
        gamma = np.asarray(gamma0, dtype=float)
        baseline = estimate_profile_baseline(problem, gamma)
        previous = profile_loglik(problem, gamma, baseline)
        for _ in range(control.max_iter):
            fixed = baseline

            def objective(g):
                return (
                    -profile_loglik(problem, g, fixed) / scale,
                    -cluster_score_matrix(problem, g, fixed).sum(axis=0) / scale,
                )

            res = minimize(objective, gamma, jac=True, method="L-BFGS-B", bounds=problem.bounds())
            gamma = np.asarray(res.x, dtype=float)
            baseline = estimate_profile_baseline(problem, gamma)
            value = profile_loglik(problem, gamma, baseline)
            self._record(problem, trace, gamma, value)
            if self._loglik_converged(control, previous, value):
                return gamma, trace, True, "log-likelihood change within tolerance"
            previous = value
        return gamma, trace, False, f"max_iter ({control.max_iter}) reached"

    def _fit_score(self, problem: FitProblem, gamma0):
        """Damped Newton on the profile score, steps reflected off the theta box."""
        control = problem.control
        trace = []
        gamma, converged, reason, _ = self._newton(problem, gamma0, trace, control.abs_tol, control.rel_tol, control.max_iter)
        return gamma, trace, converged, reason

    @staticmethod
    def _free_mask(problem: FitProblem, gamma, score) -> np.ndarray:
        """Coordinates still solved for; theta held at a bound its score pushes against."""
        free = np.ones(gamma.size, dtype=bool)
        if problem.has_theta:
            lo, hi = frailty.theta_bounds(problem.kind)
            if gamma[-1] - lo <= BOUNDARY_TOL and score[-1] < 0:
                free[-1] = False
            elif hi - gamma[-1] <= BOUNDARY_TOL and score[-1] > 0:
                free[-1] = False
        return free

    def _score_norm(self, problem: FitProblem, gamma, score) -> float:
        free = self._free_mask(problem, gamma, score)
        return float(np.max(np.abs(score[free]))) if free.any() else 0.0

    def _newton(self, problem: FitProblem, gamma0, trace: list, abs_tol: float, rel_tol: float, max_iter: int):
        """Returns (gamma, converged, reason, score at gamma); iterates are appended to ``trace``."""
        bounds = problem.bounds()
        lower = [b[0] if b[0] is not None else -np.inf for b in bounds]
        upper = [b[1] if b[1] is not None else np.inf for b in bounds]
        gamma = np.asarray(gamma0, dtype=float)
        current = self.profile_score(problem, gamma)

        for _ in range(max_iter):
            if abs_tol > 0 and self._score_norm(problem, gamma, current) <= abs_tol:
                return gamma, True, "normalized score within tolerance", current
            free = self._free_mask(problem, gamma, current)
            jacobian = numeric_gradient(lambda g: self.profile_score(problem, g), gamma, lower=lower, upper=upper)
            block = jacobian[np.ix_(free, free)]
            direction = np.zeros_like(gamma)
            try:
                direction[free] = np.linalg.solve(block, -current[free])
            except np.linalg.LinAlgError:
                direction[free] = np.linalg.lstsq(block, -current[free], rcond=None)[0]

            step = 1.0
            norm = float(current[free] @ current[free])
            accepted = False
            for _ in range(MAX_DAMPING + 1):
                candidate = gamma + step * direction
                if problem.has_theta and free[-1]:
                    lo, hi = bounds[-1]
                    candidate[-1] = _reflect(candidate[-1], lo, hi, gamma[-1])
                new_score = self.profile_score(problem, candidate)
                if np.all(np.isfinite(new_score)) and float(new_score[free] @ new_score[free]) < norm:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                return gamma, False, "line search failed", current

            change = float(np.max(np.abs(candidate - gamma) / np.maximum(np.abs(candidate), 1.0))) if gamma.size else 0.0
            gamma, current = candidate, new_score
            self._record(problem, trace, gamma, profile_loglik(problem, gamma, estimate_profile_baseline(problem, gamma)))
            if abs_tol > 0 and self._score_norm(problem, gamma, current) <= abs_tol:
                return gamma, True, "normalized score within tolerance", current
            if rel_tol > 0 and change <= rel_tol:
                return gamma, True, "relative parameter change within tolerance", current
        return gamma, False, f"max_iter ({max_iter}) reached", current

    # ------------------------
    # Curves
    # ------------------------
    @staticmethod
    def summarize_curve(
        fit: FitResult,
        type: CurveType = CurveType.cumhaz,
        at_times=None,
        include_censored: bool = False,
    ) -> pd.DataFrame:
        type = CurveType(type)
        times_obs, status = fit.obs_time, fit.obs_status
        if at_times is not None:
            times = np.sort(np.asarray(at_times, dtype=float))
        elif include_censored:
            times = np.unique(times_obs)
        else:
            times = fit.baseline.times
        failures = np.sort(times_obs[status == 1])
        n_risk = times_obs.size - np.searchsorted(np.sort(times_obs), times, side="left")
        through = np.searchsorted(failures, times, side="right")
        n_event = np.diff(through, prepend=0)
        cumhaz = fit.baseline(times)
        value = np.exp(-cumhaz) if type == CurveType.surv else cumhaz
        return pd.DataFrame({"time": times, "n_risk": n_risk, "n_event": n_event, type.value: value})


def _with_errors(result: FitResult, errors: np.ndarray) -> FitResult:
    p = result.beta.size
    return replace(result, se_beta=errors[:p], se_theta=float(errors[p]) if result.has_theta else None)


fit_service = FitService()
