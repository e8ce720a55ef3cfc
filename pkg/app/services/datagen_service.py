import datetime
import hashlib
import json
import logging
import math
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from app.models.dataset import ClusteredDataset
from app.models.errors import BracketExpansionFailure, ConfigError, FrailtyError, NoSignChange, NoSolution
from app.models.models import BaselineMode, CensorKind, ClusterSizeKind, CovariateKind
from app.schema.schema import BaselineSpec, CensoringSpec, ClusterSizeSpec, GenerationConfig, QuadratureControl
from app.services import frailty_service
from app.services.numerics_service import expand_bracket, integrate, solve_root, truncated_zeta_sum

logger = logging.getLogger("frailty.datagen")

# bracket for the failure-time root starts at [0, 1] and doubles up to 2^64
MAX_DOUBLINGS = 64
# censoring location search starts this many scale units beyond the failure times
SEARCH_SD = 20.0


def lognormal_log_params(mean: float, sd: float) -> tuple[float, float]:
    """(mu, sigma) of log C for a lognormal C with the given mean and sd."""
    sigma2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - 0.5 * sigma2, math.sqrt(sigma2)


class DatagenService:
    # ------------------------
    # Cluster sizes
    # ------------------------
    @staticmethod
    def expected_cluster_size(spec: ClusterSizeSpec) -> float:
        if spec.kind == ClusterSizeKind.fixed:
            return float(spec.k)
        if spec.kind == ClusterSizeKind.explicit:
            return float(np.mean(spec.sizes))
        if spec.kind == ClusterSizeKind.uniform:
            return (1 + spec.l + spec.u) / 2.0
        if spec.kind == ClusterSizeKind.poisson:
            dist = stats.poisson(spec.lam)
            j = np.arange(spec.k + 1)
            return float((spec.lam - np.sum(j * dist.pmf(j))) / dist.sf(spec.k))
        # truncated zeta over {l+1, ..., u}
        span = spec.u - spec.l
        return spec.l + truncated_zeta_sum(spec.s - 1.0, span) / truncated_zeta_sum(spec.s, span)

    @staticmethod
    def zeta_pmf(spec: ClusterSizeSpec) -> tuple[np.ndarray, np.ndarray]:
        support = np.arange(spec.l + 1, spec.u + 1)
        weights = (support - spec.l).astype(float) ** (-spec.s)
        return support, weights / weights.sum()

    def sample_cluster_sizes(self, spec: ClusterSizeSpec, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ConfigError("number of clusters must be >= 1")
        if spec.kind == ClusterSizeKind.fixed:
            return np.full(n, spec.k, dtype=np.int64)
        if spec.kind == ClusterSizeKind.explicit:
            return np.asarray(spec.sizes[:n], dtype=np.int64)
        if spec.kind == ClusterSizeKind.uniform:
            return rng.integers(spec.l + 1, spec.u + 1, size=n)
        if spec.kind == ClusterSizeKind.poisson:
            sizes = rng.poisson(spec.lam, size=n)
            redraw = sizes <= spec.k
            while redraw.any():
                sizes[redraw] = rng.poisson(spec.lam, size=int(redraw.sum()))
                redraw = sizes <= spec.k
            return sizes.astype(np.int64)
        support, pmf = self.zeta_pmf(spec)
        cdf = np.cumsum(pmf)
        cdf[-1] = 1.0
        return support[np.searchsorted(cdf, rng.random(n), side="right")].astype(np.int64)

    # ------------------------
    # Baseline hazard
    # ------------------------
    @staticmethod
    def cumulative_hazard(baseline: BaselineSpec, t: float, ctrl: QuadratureControl = QuadratureControl(rel_tol=1e-12, max_evals=20_000)) -> float:
        """Lambda_0(t) from whichever of the three forms the baseline is given in."""
        if t <= 0:
            return 0.0
        if baseline.mode == BaselineMode.cumulative:
            return float(baseline.cumulative(t))
        if baseline.mode == BaselineMode.hazard:
            return integrate(baseline.hazard, 0.0, t, ctrl).value
        inverse = baseline.inverse_cumulative
        bracket = expand_bracket(lambda x: float(inverse(x)) - t, 0.0, 1.0, max_doublings=MAX_DOUBLINGS)
        if bracket is None:
            return math.inf
        return solve_root(lambda x: float(inverse(x)) - t, bracket, tol=1e-15)

    def failure_time(
        self,
        baseline: BaselineSpec,
        u: float,
        omega: float,
        linpred: float,
        ctrl: QuadratureControl = QuadratureControl(rel_tol=1e-10, max_evals=10_000),
        tol: float = 1e-10,
    ) -> float:
        """Failure time solving Lambda_0(T) omega exp(linpred) = -log(u)."""
        target = -math.log(u) * math.exp(-linpred) / omega
        if baseline.mode == BaselineMode.inverse_cumulative:
            return float(baseline.inverse_cumulative(target))
        if baseline.mode == BaselineMode.cumulative:
            cumulative = baseline.cumulative
        else:
            def cumulative(t):
                return integrate(baseline.hazard, 0.0, t, ctrl).value if t > 0 else 0.0

        def residual(t):
            return float(cumulative(t)) - target

        bracket = expand_bracket(residual, 0.0, 1.0, max_doublings=MAX_DOUBLINGS)
        if bracket is None:
            logger.warning(f"Cumulative hazard never reaches {target:.6g}; failure time set to +inf")
            return math.inf
        return solve_root(residual, bracket, tol=tol)

    # ------------------------
    # Censoring
    # ------------------------
    @staticmethod
    def censor_cdf(kind: CensorKind, location: float, fixed_param: float, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if kind == CensorKind.normal:
            return stats.norm.cdf(t, loc=location, scale=fixed_param)
        if kind == CensorKind.lognormal:
            mu, sigma = lognormal_log_params(location, fixed_param)
            with np.errstate(divide="ignore"):
                return stats.norm.cdf((np.log(np.maximum(t, 0.0)) - mu) / sigma)
        lower, upper = fixed_param, location
        return np.clip((t - lower) / (upper - lower), 0.0, 1.0)

    def solve_censor_param(self, failure_times: Sequence[float], kind: CensorKind, fixed_param: float, target_rate: float) -> float:
        """Free location parameter giving mean G(T_i) = target_rate."""
        times = np.asarray(failure_times, dtype=float)
        if times.size == 0 or not 0 < target_rate < 1:
            raise ConfigError("censor rate targeting needs failure times and a rate in (0, 1)")
        finite = times[np.isfinite(times)]
        if finite.size == 0:
            raise NoSolution("no finite failure times to target a censoring rate on")

        def gap(location):
            return float(np.mean(self.censor_cdf(kind, location, fixed_param, times))) - target_rate

        if kind == CensorKind.normal:
            lo, hi = finite.min() - SEARCH_SD * fixed_param, finite.max() + SEARCH_SD * fixed_param
        elif kind == CensorKind.lognormal:
            lo, hi = max(finite.min(), 1e-12) * 1e-3, finite.max() * 10.0 + SEARCH_SD * fixed_param
        elif kind == CensorKind.uniform:
            lower = fixed_param
            lo = lower + 1e-12 * max(1.0, abs(lower))
            hi = max(finite.max(), lower) + (finite.max() - lower) / target_rate + 1.0
        else:
            raise ConfigError(f"censor rate targeting is not available for {kind.value} censoring")

        bracket = expand_bracket(gap, lo, hi, grow_lo=kind == CensorKind.normal, max_doublings=8)
        if bracket is None:
            raise NoSolution(f"censoring rate {target_rate} is not reachable with {kind.value} censoring")
        try:
            return solve_root(gap, bracket, tol=1e-12)
        except NoSignChange as e:
            raise NoSolution(f"censoring rate {target_rate} is not reachable: {e}")

    @staticmethod
    def draw_censor_times(spec: CensoringSpec, location: Optional[float], n: int, rng: np.random.Generator) -> np.ndarray:
        if spec.kind == CensorKind.none:
            return np.full(n, np.inf)
        if spec.kind == CensorKind.explicit:
            return np.asarray(spec.times, dtype=float)
        if location is None:
            location = spec.params[0] if spec.kind != CensorKind.uniform else spec.params[1]
        scale = spec.fixed_param
        if spec.kind == CensorKind.normal:
            return rng.normal(location, scale, size=n)
        if spec.kind == CensorKind.lognormal:
            mu, sigma = lognormal_log_params(location, scale)
            return rng.lognormal(mu, sigma, size=n)
        return rng.uniform(scale, location, size=n)

    @staticmethod
    def round_times(times, B: float) -> np.ndarray:
        if B <= 0:
            raise ConfigError("rounding base must be > 0")
        return B * np.floor(np.asarray(times, dtype=float) / B + 0.5)

    # ------------------------
    # Pipeline
    # ------------------------
    @staticmethod
    def draw_covariates(config: GenerationConfig, n_obs: int, rng: np.random.Generator) -> np.ndarray:
        spec, p = config.covariates, len(config.beta)
        if spec.kind == CovariateKind.explicit:
            matrix = np.asarray(spec.matrix, dtype=float)
            if matrix.shape != (n_obs, p):
                raise ConfigError(f"explicit covariate matrix must be {n_obs} x {p}")
            return matrix
        a, b = spec.params
        if spec.kind == CovariateKind.normal:
            return rng.normal(a, b, size=(n_obs, p))
        if spec.kind == CovariateKind.uniform:
            return rng.uniform(a, b, size=(n_obs, p))
        return rng.integers(int(a), int(b) + 1, size=(n_obs, p)).astype(float)

    def failure_times(self, config: GenerationConfig, u: np.ndarray, omega: np.ndarray, linpred: np.ndarray) -> np.ndarray:
        baseline = config.baseline
        if baseline.mode == BaselineMode.inverse_cumulative:
            target = -np.log(u) * np.exp(-linpred) / omega
            try:
                out = np.asarray(baseline.inverse_cumulative(target), dtype=float)
                if out.shape == target.shape:
                    return out
            except (TypeError, ValueError):
                logger.debug("inverse cumulative hazard is not vectorised, evaluating per observation")
            return np.array([float(baseline.inverse_cumulative(t)) for t in target])
        return np.array(
            [
                self.failure_time(baseline, ui, wi, li, config.quadrature, config.root_tol)
                for ui, wi, li in zip(u, omega, linpred)
            ]
        )

    @staticmethod
    def config_digest(config: GenerationConfig) -> str:
        payload = config.model_dump(exclude={"baseline"})
        payload["baseline"] = {"mode": config.baseline.mode.value, "function": repr(config.baseline.function)}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()

    def generate(self, config: GenerationConfig, keep_latent: bool = False) -> ClusteredDataset:
        try:
            rng = np.random.default_rng(config.seed)
            sizes = self.sample_cluster_sizes(config.size_spec, config.n_clusters, rng)
            n_obs = int(sizes.sum())
            cluster = np.repeat(np.arange(1, config.n_clusters + 1), sizes)
            member = np.concatenate([np.arange(1, m + 1) for m in sizes])

            Z = self.draw_covariates(config, n_obs, rng)
            omega = np.repeat(frailty_service.sample(config.frailty, config.n_clusters, rng), sizes)
            u = rng.uniform(np.finfo(float).tiny, 1.0, size=n_obs)
            linpred = Z @ np.asarray(config.beta, dtype=float)
            failure = self.failure_times(config, u, omega, linpred)

            censoring = config.censoring
            location = None
            if censoring.target_rate is not None:
                location = self.solve_censor_param(failure, censoring.kind, censoring.fixed_param, censoring.target_rate)
                logger.info(f"Censoring location solved at {location:.6g} for rate {censoring.target_rate}")
            censor = self.draw_censor_times(censoring, location, n_obs, rng)

            n_negative = int(np.sum(censor < 0))
            if n_negative:
                logger.warning(f"{n_negative} negative censoring draws truncated at 0")
                censor = np.maximum(censor, 0.0)

            infinite = ~np.isfinite(failure)
            if infinite.any():
                finite_censor = censor[np.isfinite(censor)]
                if finite_censor.size:
                    fallback = finite_censor.max()
                elif infinite.all():
                    raise ConfigError("every failure time is infinite and no finite censoring time bounds the follow-up")
                else:
                    fallback = failure[~infinite].max()
                censor = np.where(infinite, fallback, censor)
                logger.warning(f"{int(infinite.sum())} infinite failure times emitted as censored at {fallback:.6g}")

            status = (failure <= censor).astype(np.int64)
            time = np.where(status == 1, failure, censor)

            n_zero = 0
            if config.round_base is not None:
                time = self.round_times(time, config.round_base)
                n_zero = int(np.sum(time == 0))
                if n_zero:
                    logger.warning(f"{n_zero} observed times rounded to 0")

            names = [f"Z{j + 1}" for j in range(len(config.beta))]
            metadata = {
                "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
                "config_digest": self.config_digest(config),
                "seed": config.seed,
                "beta": ", ".join(f"{b:.4g}" for b in config.beta),
                "frailty": f"{config.frailty.kind.value}({config.frailty.theta:g})",
                "baseline_mode": config.baseline.mode.value,
                "baseline_label": config.baseline.label or repr(config.baseline.function),
                "censor_location": location,
                "achieved_censor_rate": float(1.0 - status.mean()),
                "avg_cluster_size": float(sizes.mean()),
                "n_infinite_failures": int(infinite.sum()),
                "n_zero_times": n_zero,
            }
            if keep_latent:
                metadata["latent_failure"] = failure
                metadata["latent_censor"] = censor
                metadata["latent_frailty"] = omega
            return ClusteredDataset(
                cluster=cluster, member=member, time=time, status=status, covariates=Z, covariate_names=names, metadata=metadata
            )
        except FrailtyError:
            raise
        except Exception as e:
            raise FrailtyError(f"data generation failed: {e}")


datagen_service = DatagenService()
