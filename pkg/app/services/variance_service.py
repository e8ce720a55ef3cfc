"""
Covariance of the fitted parameters.

* ``bootstrap_cov``: weighted bootstrap. Every replicate draws unit-mean
  exponential cluster weights, standardizes them to mean one and refits with
  each per-cluster sum weighted. Also covers the baseline at requested times.
* ``sandwich_cov``: numerical profile sandwich J^-1 B J^-T / n, J being the
  finite-difference Jacobian of the mean profile score and B the mean outer
  product of the per-cluster profile scores.

Results are cached on a digest of (data, frailty, control, method, arguments).
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from app.models.dataset import ClusteredDataset
from app.models.errors import ConfigError, FrailtyError, SingularJacobian, TooFewConverged
from app.models.models import FrailtyKind
from app.models.results import CovarianceEstimate, FitResult
from app.schema.schema import FitControl, FrailtySpec
from app.services.fit_service import cluster_score_matrix, estimate_profile_baseline, fit_service, prepare
from app.services.numerics_service import numeric_gradient

logger = logging.getLogger("frailty.variance")

SANDWICH_LABEL = "numerical profile sandwich"
SINGULAR_COND = 1e12


# ------------------------
# Replicate workers (module level so the process pool can pickle them)
# ------------------------
def exponential_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.exponential(1.0, size=n)
    return v / v.mean()


def unit_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.ones(n)


def replicate_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Seed of replicate ``index``; independent of the order replicates run in."""
    return np.random.SeedSequence([seed, index])


def _bootstrap_replicate(args) -> Optional[np.ndarray]:
    data, spec, control, seed, index, lambda_times, weight_sampler = args
    rng = np.random.default_rng(replicate_seed(seed, index))
    weights = weight_sampler(rng, data.n_clusters)
    try:
        fit = fit_service.fit_model(data, spec, control, weights=weights)
    except FrailtyError as e:
        logger.debug(f"bootstrap replicate {index} failed: {e}")
        return None
    if not fit.converged:
        return None
    return np.concatenate([fit.gamma, fit.baseline(np.asarray(lambda_times, dtype=float))])


def lambda_label(t: float) -> str:
    return f"Lambda.{t:.5f}"


class VarianceService:
    def __init__(self):
        self._cache = {}
        self.refits = 0

    def clear_cache(self):
        self._cache.clear()

    @staticmethod
    def _cache_key(data: ClusteredDataset, spec: FrailtySpec, control: FitControl, method: str, **args) -> str:
        payload = {
            "data": data.digest(),
            "frailty": spec.model_dump(mode="json"),
            "control": control.model_dump(mode="json"),
            "method": method,
            **{k: v for k, v in args.items()},
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()

    # ------------------------
    # Weighted bootstrap
    # ------------------------
    def bootstrap_cov(
        self,
        data: ClusteredDataset,
        spec: FrailtySpec,
        control: Optional[FitControl] = None,
        B: int = 100,
        lambda_times: Optional[Sequence[float]] = None,
        seed: Optional[int] = None,
        workers: int = 1,
        weight_sampler: Callable[[np.random.Generator, int], np.ndarray] = exponential_weights,
    ) -> CovarianceEstimate:
        if B < 2:
            raise ConfigError("bootstrap needs B >= 2")
        control = control or FitControl()
        lambda_times = [float(t) for t in lambda_times] if lambda_times is not None else []
        cacheable = seed is not None
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
        key = self._cache_key(
            data, spec, control, "bootstrap", B=B, lambda_times=lambda_times, seed=seed, sampler=weight_sampler.__name__
        )
        if cacheable and key in self._cache:
            return self._cache[key]

        tasks = [(data, spec, control, seed, b, lambda_times, weight_sampler) for b in range(B)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                outcomes = list(executor.map(_bootstrap_replicate, tasks))
        else:
            outcomes = [_bootstrap_replicate(task) for task in tasks]
        self.refits += B

        kept = [o for o in outcomes if o is not None]
        dropped = B - len(kept)
        if dropped:
            logger.warning(f"Dropped {dropped} of {B} bootstrap replicates that did not converge")
        if len(kept) < max(2, B / 2):
            raise TooFewConverged(f"only {len(kept)} of {B} bootstrap replicates converged")

        estimates = np.vstack(kept)
        matrix = np.atleast_2d(np.cov(estimates, rowvar=False, ddof=1))
        labels = list(data.covariate_names)
        if spec.kind != FrailtyKind.none:
            labels.append("theta")
        labels += [lambda_label(t) for t in lambda_times]
        result = CovarianceEstimate(
            labels=tuple(labels),
            matrix=0.5 * (matrix + matrix.T),
            method=f"bootstrap({B})",
            cache_key=key,
            n_replicates=B,
            n_converged=len(kept),
        )
        if cacheable:
            self._cache[key] = result
        return result

    # ------------------------
    # Sandwich
    # ------------------------
    def sandwich_cov(
        self,
        data: ClusteredDataset,
        spec: FrailtySpec,
        fit: FitResult,
        ctrl: Optional[FitControl] = None,
        weights: Optional[np.ndarray] = None,
    ) -> CovarianceEstimate:
        control = ctrl or fit.control
        key = self._cache_key(data, fit.frailty, control, "sandwich", gamma=fit.gamma.tolist())
        if weights is None and key in self._cache:
            return self._cache[key]

        problem = prepare(data, fit.frailty.kind, control, weights)
        gamma = fit.gamma
        lower = [b[0] if b[0] is not None else -np.inf for b in problem.bounds()]
        upper = [b[1] if b[1] is not None else np.inf for b in problem.bounds()]
        jacobian = numeric_gradient(lambda g: fit_service.profile_score(problem, g), gamma, lower=lower, upper=upper)
        if not np.all(np.isfinite(jacobian)) or np.linalg.cond(jacobian) > SINGULAR_COND:
            raise SingularJacobian("profile score Jacobian is singular; use the bootstrap covariance instead")

        scores = cluster_score_matrix(problem, gamma, estimate_profile_baseline(problem, gamma))
        n = problem.n
        meat = scores.T @ scores / n
        inverse = np.linalg.inv(jacobian)
        matrix = inverse @ meat @ inverse.T / n
        result = CovarianceEstimate(
            labels=tuple(problem.labels),
            matrix=0.5 * (matrix + matrix.T),
            method=SANDWICH_LABEL,
            cache_key=key,
        )
        if weights is None:
            self._cache[key] = result
        return result

    def cumhaz_band(
        self,
        data: ClusteredDataset,
        spec: FrailtySpec,
        fit: FitResult,
        times: Sequence[float],
        B: int = 100,
        level: float = 0.95,
        seed: Optional[int] = None,
        workers: int = 1,
    ) -> pd.DataFrame:
        """Pointwise normal-approximation band for the cumulative baseline hazard."""
        cov = self.bootstrap_cov(data, spec, fit.control, B=B, lambda_times=times, seed=seed, workers=workers)
        se = cov.standard_errors()
        z = stats.norm.ppf(0.5 + level / 2.0)
        times = np.asarray(times, dtype=float)
        cumhaz = fit.baseline(times)
        spread = z * np.array([se[lambda_label(t)] for t in times])
        return pd.DataFrame(
            {"time": times, "cumhaz": cumhaz, "lower": np.maximum(cumhaz - spread, 0.0), "upper": cumhaz + spread}
        )


variance_service = VarianceService()
