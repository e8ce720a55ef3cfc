"""
Replication studies, runtime benchmarks and tolerance sweeps.

Every replicate draws its dataset from its own seed, derived from the master
seed and the replicate index with ``np.random.SeedSequence([master, index])``,
so results do not depend on the number of workers or the order reps finish.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from app.models.errors import ConfigError, FrailtyError
from app.models.models import (
    THETA_INIT,
    BaselineMode,
    BenchOp,
    CensorKind,
    ClusterSizeKind,
    CovariateKind,
    FitMethod,
    FrailtyKind,
    SeMethod,
    SweepParam,
)
from app.models.results import BenchmarkReport, SimulationSummary, SlopeFit, SummaryRow, SweepReport
from app.schema.schema import (
    CensoringSpec,
    ClusterSizeSpec,
    CovariateSpec,
    FitControl,
    FrailtySpec,
    GenerationConfig,
)
from app.services.datagen_service import datagen_service
from app.services.expression_service import preset_baseline
from app.services.fit_service import fit_service
from app.services.frailty_service import initial_theta
from app.services.variance_service import variance_service

logger = logging.getLogger("frailty.sim")

DEFAULT_LAMBDA_TIMES = (30.0, 60.0, 90.0)
Z_95 = 1.959963984540054

# tolerance paired with each swept parameter; it is held at 0 while the other varies
SWEEP_PAIRS = {
    SweepParam.abs_tol: "rel_tol",
    SweepParam.rel_tol: "abs_tol",
    SweepParam.int_abs_tol: "int_rel_tol",
    SweepParam.int_rel_tol: "int_abs_tol",
}


def derived_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint64)[0] >> 1)


# ------------------------
# Scenario presets
# ------------------------
def _study_config(
    frailty: FrailtySpec,
    n_clusters: int = 300,
    size_spec: ClusterSizeSpec = ClusterSizeSpec.fixed(2),
    baseline: str = "weibull-inverse",
    round_base: Optional[float] = None,
    seed: int = 0,
) -> GenerationConfig:
    return GenerationConfig(
        n_clusters=n_clusters,
        size_spec=size_spec,
        beta=[math.log(2.0), math.log(3.0)],
        covariates=CovariateSpec(kind=CovariateKind.uniform, params=[0.0, 1.0]),
        frailty=frailty,
        baseline=preset_baseline(baseline),
        censoring=CensoringSpec(kind=CensorKind.normal, params=[15.0], target_rate=0.3),
        round_base=round_base,
        seed=seed,
    )


SCENARIOS: dict[str, Callable[..., GenerationConfig]] = {
    "gamma": lambda seed=0: _study_config(FrailtySpec(kind=FrailtyKind.gamma, theta=2.0), seed=seed),
    "large-clusters": lambda seed=0: _study_config(
        FrailtySpec(kind=FrailtyKind.gamma, theta=2.0), n_clusters=100, size_spec=ClusterSizeSpec.fixed(6), seed=seed
    ),
    "rounded": lambda seed=0: _study_config(FrailtySpec(kind=FrailtyKind.gamma, theta=2.0), round_base=10.0, seed=seed),
    "oscillating": lambda seed=0: _study_config(
        FrailtySpec(kind=FrailtyKind.gamma, theta=2.0), baseline="oscillating-hazard", seed=seed
    ),
    "pvf": lambda seed=0: _study_config(FrailtySpec(kind=FrailtyKind.pvf, theta=0.3), seed=seed),
    "poisson-sizes": lambda seed=0: _study_config(
        FrailtySpec(kind=FrailtyKind.pvf, theta=0.3),
        size_spec=ClusterSizeSpec(kind=ClusterSizeKind.poisson, lam=2.0, k=0),
        seed=seed,
    ),
    "lognormal": lambda seed=0: _study_config(FrailtySpec(kind=FrailtyKind.lognormal, theta=2.0), seed=seed),
    "invgauss": lambda seed=0: _study_config(FrailtySpec(kind=FrailtyKind.invgauss, theta=2.0), seed=seed),
}


def scenario(name: str, seed: int = 0) -> GenerationConfig:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario '{name}' (choose from {', '.join(SCENARIOS)})")
    return SCENARIOS[name](seed=seed)


def benchmark_config(
    n_clusters: int,
    frailty: FrailtySpec,
    baseline_mode: BaselineMode = BaselineMode.inverse_cumulative,
    beta: Sequence[float] = (math.log(2.0), math.log(3.0)),
    seed: int = 0,
) -> GenerationConfig:
    """Clusters of two, U(0, 1) covariates and N(130, 15) censoring."""
    preset = {
        BaselineMode.inverse_cumulative: "weibull-inverse",
        BaselineMode.cumulative: "weibull-cumulative",
        BaselineMode.hazard: "weibull-hazard",
    }[BaselineMode(baseline_mode)]
    return GenerationConfig(
        n_clusters=n_clusters,
        size_spec=ClusterSizeSpec.fixed(2),
        beta=list(beta),
        covariates=CovariateSpec(kind=CovariateKind.uniform, params=[0.0, 1.0]),
        frailty=frailty,
        baseline=preset_baseline(preset),
        censoring=CensoringSpec(kind=CensorKind.normal, params=[130.0, 15.0]),
        seed=seed,
    )


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


# ------------------------
# Replicate workers (module level so the process pool can pickle them)
# ------------------------
def _simulation_rep(args) -> dict:
    index, config, fit_kind, control, lambda_times, se_method, B = args
    started = time.perf_counter()
    record = {"rep": index, "seed": config.seed, "converged": False}
    try:
        data = datagen_service.generate(config)
        if fit_kind in THETA_INIT:
            start = control.theta_init if control.theta_init is not None else initial_theta(fit_kind)
            spec = FrailtySpec(kind=fit_kind, theta=start)
        else:
            spec = FrailtySpec(kind=fit_kind)
        fit = fit_service.fit_model(data, spec, control)
        record["converged"] = fit.converged
        record.update(dict(zip(fit.labels, fit.gamma)))
        record.update({f"Lambda.{t:g}": float(fit.baseline(t)) for t in lambda_times})
    except FrailtyError as e:
        logger.warning(f"Simulation rep {index} failed: {e}")
        record["error"] = str(e)
        record["runtime"] = time.perf_counter() - started
        return record

    try:
        if se_method == SeMethod.sandwich:
            cov = variance_service.sandwich_cov(data, fit.frailty, fit)
        elif se_method == SeMethod.bootstrap:
            cov = variance_service.bootstrap_cov(data, fit.frailty, control, B=B, seed=config.seed)
        else:
            cov = None
        if cov is not None:
            record.update({f"se.{k}": v for k, v in cov.standard_errors().items()})
    except FrailtyError as e:
        logger.warning(f"Simulation rep {index}: standard errors failed: {e}")
        record["se_error"] = str(e)
    record["runtime"] = time.perf_counter() - started
    return record


def _timed(op: BenchOp, config: GenerationConfig, control: FitControl) -> float:
    if op == BenchOp.generate:
        started = time.perf_counter()
        datagen_service.generate(config)
        return time.perf_counter() - started
    data = datagen_service.generate(config)
    spec = config.frailty
    started = time.perf_counter()
    fit = fit_service.fit_model(data, spec, control)
    if op == BenchOp.fit:
        return time.perf_counter() - started
    started = time.perf_counter()
    variance_service.sandwich_cov(data, fit.frailty, fit)
    return time.perf_counter() - started


def _run(func, tasks: list, workers: int) -> list:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, tasks))
    return [func(task) for task in tasks]


class SimService:
    def simulate(
        self,
        reps: int,
        gen_config: GenerationConfig,
        fit_kind: Optional[FrailtyKind] = None,
        control: Optional[FitControl] = None,
        lambda_times: Sequence[float] = DEFAULT_LAMBDA_TIMES,
        se_method: SeMethod = SeMethod.sandwich,
        seed: int = 0,
        workers: int = 1,
        B: int = 50,
    ) -> SimulationSummary:
        if reps < 1:
            raise ConfigError("reps must be >= 1")
        control = control or FitControl()
        fit_kind = FrailtyKind(fit_kind or gen_config.frailty.kind)
        se_method = SeMethod(se_method)
        lambda_times = tuple(float(t) for t in lambda_times)

        started = time.perf_counter()
        tasks = [
            (r, gen_config.model_copy(update={"seed": derived_seed(seed, r)}), fit_kind, control, lambda_times, se_method, B)
            for r in range(reps)
        ]
        records = _run(_simulation_rep, tasks, workers)
        total = time.perf_counter() - started

        frame = pd.DataFrame(records)
        ok = frame[frame["converged"]]
        n_failed = reps - len(ok)
        if n_failed:
            logger.warning(f"{n_failed} of {reps} simulation reps failed or did not converge and were excluded")
        n_se_failed = int(ok["se_error"].notna().sum()) if "se_error" in ok else 0
        if n_se_failed:
            logger.warning(f"{n_se_failed} converged reps have no standard errors and are left out of coverage")

        truth = {f"beta.{j + 1}": b for j, b in enumerate(gen_config.beta)}
        names = [f"Z{j + 1}" for j in range(len(gen_config.beta))]
        if fit_kind != FrailtyKind.none:
            truth["theta"] = gen_config.frailty.theta if gen_config.frailty.kind == fit_kind else math.nan
            names.append("theta")
        rows = []
        for (label, value), column in zip(truth.items(), names):
            rows.append(self._summary_row(label, value, ok, column, se_method != SeMethod.none))
        for t in lambda_times:
            true_value = datagen_service.cumulative_hazard(gen_config.baseline, t)
            rows.append(self._summary_row(f"Lambda.{t:g}", true_value, ok, f"Lambda.{t:g}", False))

        runtimes = frame["runtime"].to_numpy(dtype=float)
        return SimulationSummary(
            reps=reps,
            n_failed=n_failed,
            n_se_failed=n_se_failed,
            rows=tuple(rows),
            lambda_times=lambda_times,
            runtime_total=total,
            runtime_mean=float(runtimes.mean()),
            runtime_sd=float(runtimes.std(ddof=1)) if reps > 1 else math.nan,
            estimates=frame,
        )

    @staticmethod
    def _summary_row(name: str, value: float, ok: pd.DataFrame, column: str, with_se: bool) -> SummaryRow:
        estimates = ok[column].to_numpy(dtype=float) if column in ok else np.empty(0)
        mean_hat = float(estimates.mean()) if estimates.size else math.nan
        sd_hat = float(estimates.std(ddof=1)) if estimates.size > 1 else None
        se_column = f"se.{column}"
        if not with_se or se_column not in ok:
            return SummaryRow(name, value, mean_hat, sd_hat, None, None)
        se = ok[se_column].to_numpy(dtype=float)
        # reps whose standard errors failed count in neither the coverage numerator nor denominator
        has_se = np.isfinite(se)
        if not has_se.any():
            return SummaryRow(name, value, mean_hat, sd_hat, None, None)
        covered = int(np.sum(np.abs(estimates[has_se] - value) <= Z_95 * se[has_se]))
        low, high = wilson_interval(covered, int(has_se.sum()))
        return SummaryRow(name, value, mean_hat, sd_hat, float(se[has_se].mean()), float(covered / has_se.sum()), low, high)

    # ------------------------
    # Benchmarks
    # ------------------------
    def benchmark(
        self,
        op: BenchOp,
        sizes: Sequence[int],
        kinds: Sequence[FrailtyKind] = (FrailtyKind.gamma,),
        reps: int = 3,
        seed: int = 0,
        control: Optional[FitControl] = None,
        baseline_mode: BaselineMode = BaselineMode.inverse_cumulative,
    ) -> BenchmarkReport:
        """Wall-clock time per (size, frailty) and the log-log slope of time against n."""
        op = BenchOp(op)
        sizes = [int(n) for n in sizes]
        if len(sizes) < 4:
            raise ConfigError("benchmark needs at least 4 sizes")
        control = control or FitControl()
        rows = []
        for kind in kinds:
            kind = FrailtyKind(kind)
            spec = FrailtySpec(kind=kind, theta=initial_theta(kind)) if kind in THETA_INIT else FrailtySpec(kind=kind)
            # warm-up run, discarded
            _timed(op, benchmark_config(sizes[0], spec, baseline_mode, seed=seed), control)
            for n in sizes:
                for r in range(reps):
                    config = benchmark_config(n, spec, baseline_mode, seed=derived_seed(seed, n * 1000 + r))
                    rows.append({"op": op.value, "frailty": kind.value, "n": n, "rep": r, "seconds": _timed(op, config, control)})
        timings = pd.DataFrame(rows)

        slopes = []
        for kind, group in timings.groupby("frailty", sort=False):
            fit = stats.linregress(np.log(group["n"]), np.log(group["seconds"]))
            spread = stats.t.ppf(0.975, len(group) - 2) * fit.stderr
            slopes.append(SlopeFit(op.value, kind, float(fit.slope), float(fit.slope - spread), float(fit.slope + spread)))
        return BenchmarkReport(op=op.value, sizes=tuple(sizes), timings=timings, slopes=tuple(slopes))

    def tolerance_sweep(
        self,
        param: SweepParam,
        values: Sequence[float],
        kind: FrailtyKind = FrailtyKind.gamma,
        n_clusters: int = 100,
        reps: int = 10,
        seed: int = 0,
        fit_method: FitMethod = FitMethod.score,
        workers: int = 1,
    ) -> SweepReport:
        """Runtime and residuals as one tolerance varies, its paired tolerance held at 0."""
        param = SweepParam(param)
        values = [float(v) for v in values]
        if any(v <= 0 for v in values):
            raise ConfigError("swept tolerance values must be positive")
        kind = FrailtyKind(kind)
        truth = FrailtySpec(kind=kind, theta=initial_theta(kind))
        beta = math.log(2.0)

        tasks = []
        for value in values:
            control = FitControl(fit_method=fit_method, theta_init=truth.theta, **{param.value: value, SWEEP_PAIRS[param]: 0.0})
            for r in range(reps):
                config = benchmark_config(n_clusters, truth, beta=[beta], seed=derived_seed(seed, r))
                tasks.append((r, config, kind, control, (), SeMethod.none, 0))
        records = _run(_simulation_rep, tasks, workers)

        runs = pd.DataFrame(records)
        runs["value"] = [v for v in values for _ in range(reps)]
        runs["resid_beta"] = runs.get("Z1", np.nan) - beta
        runs["resid_theta"] = runs.get("theta", np.nan) - truth.theta

        rows = []
        for value, group in runs.groupby("value"):
            row = {"value": value}
            for column in ("runtime", "resid_beta", "resid_theta"):
                x = group[column].dropna().to_numpy(dtype=float)
                mean = float(x.mean()) if x.size else math.nan
                half = float(stats.t.ppf(0.975, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
                row.update({column: mean, f"{column}_ci_low": mean - half, f"{column}_ci_high": mean + half})
            rows.append(row)
        return SweepReport(param=param.value, table=pd.DataFrame(rows), runs=runs)


sim_service = SimService()
