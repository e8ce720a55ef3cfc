"""
Command line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 the fit did not
converge (artifacts are still written), 4 covariance estimation failed.
"""

import datetime
import functools
import logging
import math
import sys
from pathlib import Path

import click
from pydantic import ValidationError

from app.models.errors import FrailtyError
from app.models.models import (
    THETA_INIT,
    BaselineMode,
    BenchOp,
    CensorKind,
    ClusterSizeKind,
    CovariateKind,
    CurveType,
    FitMethod,
    FrailtyKind,
    SeMethod,
    SweepParam,
)
from app.models.results import FitResult
from app.schema.schema import (
    CensoringSpec,
    ClusterSizeSpec,
    CovariateSpec,
    FitControl,
    FrailtySpec,
    GenerationConfig,
)
from app.services import frailty_service
from app.services.datagen_service import datagen_service
from app.services.dataset_io_service import dataset_io_service
from app.services.expression_service import PRESETS, build_baseline, preset_baseline
from app.services.fit_service import fit_service
from app.services.sim_service import SCENARIOS, scenario, sim_service
from app.services.variance_service import unit_weights as unit_weight_sampler, variance_service
from config.config import API_HOST, API_PORT, LOG_LEVEL, OUTPUT_DIR, WORKERS

logger = logging.getLogger("frailty.cli")


def configure_logging(level: str = LOG_LEVEL):
    logging.basicConfig(
        level=level.upper(),
        format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
        force=True,
    )


def handle_errors(func):
    """Map library errors to the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as e:
            click.echo(f"Error: invalid configuration\n{e}", err=True)
            sys.exit(2)
        except FrailtyError as e:
            click.echo(f"Error: {e.detail}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def _floats(ctx, param, value):
    if value is None or value == "":
        return None
    try:
        return [float(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma separated numbers, got '{value}'")


def _names(ctx, param, value):
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def _started():
    return datetime.datetime.now(datetime.timezone.utc)


# ------------------------
# Shared option groups
# ------------------------
def data_options(func):
    options = [
        click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False), help="Dataset CSV."),
        click.option("--time", "time_col", default="time", show_default=True, help="Observed time column."),
        click.option("--status", "status_col", default="status", show_default=True, help="Failure indicator column."),
        click.option("--cluster", "cluster_col", default="family", show_default=True, help="Cluster id column."),
        click.option("--covariates", callback=_names, default=None, help="Comma separated covariate columns (default: all others)."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def control_options(func):
    options = [
        click.option("--frailty", type=click.Choice([k.value for k in FrailtyKind]), default="gamma", show_default=True),
        click.option("--theta-init", type=float, default=None, help="Initial frailty parameter."),
        click.option("--fit-method", type=click.Choice([m.value for m in FitMethod]), default="loglik", show_default=True),
        click.option("--abs-tol", type=float, default=0.0, show_default=True),
        click.option("--rel-tol", type=float, default=1e-6, show_default=True),
        click.option("--max-iter", type=int, default=100, show_default=True),
        click.option("--int-abs-tol", type=float, default=0.0, show_default=True),
        click.option("--int-rel-tol", type=float, default=1.0, show_default=True),
        click.option("--int-max-evals", type=int, default=1000, show_default=True),
        click.option("--inner-maximize", is_flag=True, help="Fully maximize at fixed baseline on every cycle."),
        click.option("--verbose", is_flag=True, help="Log every outer iteration."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _control(params: dict) -> FitControl:
    return FitControl(
        fit_method=params["fit_method"],
        abs_tol=params["abs_tol"],
        rel_tol=params["rel_tol"],
        max_iter=params["max_iter"],
        int_abs_tol=params["int_abs_tol"],
        int_rel_tol=params["int_rel_tol"],
        int_max_evals=params["int_max_evals"],
        inner_maximize=params["inner_maximize"],
        verbose=params["verbose"],
        theta_init=params["theta_init"],
    )


def _fit_spec(kind: str) -> FrailtySpec:
    kind = FrailtyKind(kind)
    if kind == FrailtyKind.none:
        return frailty_service.NONE_SPEC
    return FrailtySpec(kind=kind, theta=frailty_service.initial_theta(kind))


def _read(params: dict):
    return dataset_io_service.read_dataset(
        params["data_path"],
        time=params["time_col"],
        status=params["status_col"],
        cluster=params["cluster_col"],
        covariates=params["covariates"],
    )


def format_fit_report(fit: FitResult, n_obs: int, n_clusters: int) -> str:
    lines = [f"Fit: {n_clusters} clusters, {n_obs} observations", "", f"{'':<12}{'coef':>12}"]
    for j, (name, b) in enumerate(zip(fit.covariate_names, fit.beta)):
        se = "" if fit.se_beta is None else f"  (se {fit.se_beta[j]:.4f})"
        lines.append(f"{name:<12}{b:>12.4f}{se}")
    lines.append("")
    if fit.has_theta:
        variance = frailty_service.frailty_variance(fit.frailty)
        lines.append(f"Frailty distribution   {fit.frailty.kind.value}({fit.theta:.3f}), VAR of frailty variates = {variance:.3f}")
        if fit.boundary:
            lines.append("Frailty parameter at the edge of its box")
    else:
        lines.append("Frailty distribution   none")
    lines.append(f"Log-likelihood         {fit.loglik:.3f}")
    status = "Converged" if fit.converged else "Did not converge"
    lines.append(f"{status} ({fit.method.value})   {fit.iterations} iterations, {fit.runtime:.2f} secs ({fit.reason})")
    return "\n".join(lines)


@click.group()
@click.option("--log-level", default=LOG_LEVEL, show_default=True, help="Logging level.")
def cli(log_level):
    """Clustered survival data generation and shared frailty model estimation."""
    configure_logging(log_level)


# ------------------------
# generate
# ------------------------
@cli.command()
@click.option("--scenario", "scenario_name", type=click.Choice(list(SCENARIOS)), default=None, help="Start from a named study configuration.")
@click.option("--clusters", type=int, default=300, show_default=True, help="Number of clusters; overrides the scenario value when given.")
@click.option("--cluster-size", type=int, default=2, show_default=True, help="Fixed cluster size.")
@click.option("--sizes", type=click.Choice([k.value for k in ClusterSizeKind if k != ClusterSizeKind.explicit]), default="fixed", show_default=True)
@click.option("--sizes-params", callback=_floats, default=None, help="poisson: lambda[,k]; pareto: s,l,u; uniform: l,u.")
@click.option("--beta", callback=_floats, default="0.6931471805599453,1.0986122886681098", show_default=True)
@click.option("--covariates", "covariate_kind", type=click.Choice([k.value for k in CovariateKind if k != CovariateKind.explicit]), default="normal", show_default=True)
@click.option("--covariate-params", callback=_floats, default="0,1", show_default=True)
@click.option("--frailty", type=click.Choice([k.value for k in FrailtyKind]), default="gamma", show_default=True)
@click.option("--theta", type=float, default=2.0, show_default=True)
@click.option("--lambda0-inv", default=None, help="Inverse cumulative baseline hazard, an expression in t.")
@click.option("--lambda0-cum", default=None, help="Cumulative baseline hazard, an expression in t.")
@click.option("--lambda0", default=None, help="Baseline hazard, an expression in t.")
@click.option("--preset", type=click.Choice(list(PRESETS)), default=None, help="Named baseline.")
@click.option("--censor", type=click.Choice([k.value for k in CensorKind if k != CensorKind.explicit]), default="normal", show_default=True)
@click.option("--censor-params", callback=_floats, default="130,15", show_default=True)
@click.option("--censor-rate", type=float, default=None, help="Target censoring rate; the last censor parameter is held fixed.")
@click.option("--round-base", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default="dataset.csv", show_default=True)
@handle_errors
def generate(scenario_name, clusters, cluster_size, sizes, sizes_params, beta, covariate_kind, covariate_params, frailty, theta,
             lambda0_inv, lambda0_cum, lambda0, preset, censor, censor_params, censor_rate, round_base, seed, out):
    """Generate a clustered survival dataset."""
    started = _started()
    options = click.get_current_context().params
    if scenario_name:
        config = scenario(scenario_name, seed=seed)
        if click.get_current_context().get_parameter_source("clusters") != click.core.ParameterSource.DEFAULT:
            config = GenerationConfig.model_validate({**dict(config), "n_clusters": clusters})
    else:
        given = [(m, e) for m, e in ((BaselineMode.inverse_cumulative, lambda0_inv), (BaselineMode.cumulative, lambda0_cum), (BaselineMode.hazard, lambda0)) if e]
        if len(given) > 1 or (given and preset):
            raise click.UsageError("give exactly one of --lambda0-inv, --lambda0-cum, --lambda0 or --preset")
        if given:
            baseline = build_baseline(*given[0])
        else:
            baseline = preset_baseline(preset or "weibull-cumulative")

        sp = sizes_params or []
        size_kind = ClusterSizeKind(sizes)
        if size_kind == ClusterSizeKind.fixed:
            size_spec = ClusterSizeSpec.fixed(cluster_size)
        elif size_kind == ClusterSizeKind.poisson:
            size_spec = ClusterSizeSpec(kind=size_kind, lam=sp[0] if sp else 2.0, k=int(sp[1]) if len(sp) > 1 else 0)
        elif size_kind == ClusterSizeKind.pareto:
            if len(sp) != 3:
                raise click.BadParameter("pareto sizes need s,l,u", param_hint="--sizes-params")
            size_spec = ClusterSizeSpec(kind=size_kind, s=sp[0], l=int(sp[1]), u=int(sp[2]))
        else:
            if len(sp) != 2:
                raise click.BadParameter("uniform sizes need l,u", param_hint="--sizes-params")
            size_spec = ClusterSizeSpec(kind=size_kind, l=int(sp[0]), u=int(sp[1]))

        censor_kind = CensorKind(censor)
        params = censor_params or []
        if censor_rate is not None and params:
            params = [params[0]] if censor_kind == CensorKind.uniform else [params[-1]]
        config = GenerationConfig(
            n_clusters=clusters,
            size_spec=size_spec,
            beta=beta,
            covariates=CovariateSpec(kind=covariate_kind, params=covariate_params),
            frailty=FrailtySpec(kind=frailty, theta=theta) if frailty != "none" else frailty_service.NONE_SPEC,
            baseline=baseline,
            censoring=CensoringSpec(kind=censor_kind, params=params if censor_kind != CensorKind.none else [], target_rate=censor_rate),
            round_base=round_base,
            seed=seed,
        )

    data = datagen_service.generate(config)
    target = dataset_io_service.write_dataset(data, out)
    dataset_io_service.write_manifest(
        target.with_suffix(".manifest"), "generate", options, seed=config.seed, outputs=[target], started=started
    )
    click.echo(data.summary())
    click.echo(f"Wrote {target}")


# ------------------------
# fit
# ------------------------
@cli.command()
@data_options
@control_options
@click.option("--se", is_flag=True, help="Attach sandwich standard errors.")
@click.option("--out-dir", default=OUTPUT_DIR, show_default=True, help="Directory for baseline.csv, trace.csv and the manifest.")
@handle_errors
def fit(data_path, time_col, status_col, cluster_col, covariates, frailty, theta_init, fit_method, abs_tol, rel_tol, max_iter,
        int_abs_tol, int_rel_tol, int_max_evals, inner_maximize, verbose, se, out_dir):
    """Fit a shared frailty model to a dataset CSV."""
    started = _started()
    params = click.get_current_context().params
    data = _read(params)
    result = fit_service.fit_model(data, _fit_spec(frailty), _control(params), se=se)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve = fit_service.summarize_curve(result, CurveType.cumhaz, include_censored=False)
    curve["surv"] = [math.exp(-v) for v in curve["cumhaz"]]
    baseline_path = dataset_io_service.write_frame(curve, out / "baseline.csv")
    trace_path = dataset_io_service.write_frame(result.trace_frame(), out / "trace.csv")
    dataset_io_service.write_manifest(
        out / "fit.manifest",
        "fit",
        {**params, "data_digest": result.data_digest, "converged": result.converged},
        inputs=[Path(data_path)],
        outputs=[baseline_path, trace_path],
        started=started,
    )
    click.echo(format_fit_report(result, data.n_obs, data.n_clusters))
    if not result.converged:
        sys.exit(3)


# ------------------------
# cov
# ------------------------
FIT_KEYS = ("data_path", "time_col", "status_col", "cluster_col", "covariates", "frailty", "theta_init", "fit_method",
            "abs_tol", "rel_tol", "max_iter", "int_abs_tol", "int_rel_tol", "int_max_evals", "inner_maximize", "verbose")


def _params_from_manifest(path: str) -> dict:
    manifest = dataset_io_service.read_manifest(path)
    raw = {k[len("option."):]: v for k, v in manifest.items() if k.startswith("option.")}
    missing = [k for k in FIT_KEYS if k not in raw]
    if missing:
        raise click.UsageError(f"fit manifest lacks {', '.join(missing)}")

    def parse(key, value):
        if value == "None":
            return None
        if key == "covariates":
            return [v.strip(" '") for v in value.strip("[]").split(",") if v.strip(" '")]
        if key in ("inner_maximize", "verbose"):
            return value == "True"
        if key == "max_iter" or key == "int_max_evals":
            return int(value)
        if key in ("theta_init", "abs_tol", "rel_tol", "int_abs_tol", "int_rel_tol"):
            return float(value)
        return value

    return {k: parse(k, raw[k]) for k in FIT_KEYS}


@cli.command()
@click.option("--fit-manifest", default=None, type=click.Path(dir_okay=False), help="Reuse the data and options of a previous fit.")
@click.option("--data", "data_path", default=None, type=click.Path(dir_okay=False))
@click.option("--time", "time_col", default="time")
@click.option("--status", "status_col", default="status")
@click.option("--cluster", "cluster_col", default="family")
@click.option("--covariates", callback=_names, default=None)
@control_options
@click.option("--method", type=click.Choice(["sandwich", "bootstrap"]), default="sandwich", show_default=True)
@click.option("--B", "B", type=int, default=100, show_default=True, help="Bootstrap replicates.")
@click.option("--lambda-times", callback=_floats, default=None, help="Times at which the bootstrap also covers the baseline.")
@click.option("--band", is_flag=True, help="Also write a pointwise 95% band for the baseline at --lambda-times.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=WORKERS, show_default=True)
@click.option("--unit-weights", is_flag=True, hidden=True)
@click.option("--out", default="covariance.csv", show_default=True)
@handle_errors
def cov(fit_manifest, method, B, lambda_times, band, seed, workers, unit_weights, out, **fit_params):
    """Covariance of the fitted parameters."""
    started = _started()
    params = _params_from_manifest(fit_manifest) if fit_manifest else fit_params
    if not params.get("data_path"):
        raise click.UsageError("give --data or --fit-manifest")
    data = _read(params)
    spec = _fit_spec(params["frailty"])
    control = _control(params)
    result = fit_service.fit_model(data, spec, control)
    if not result.converged:
        logger.warning("Covariance computed around a fit that did not converge")

    try:
        if method == "sandwich":
            estimate = variance_service.sandwich_cov(data, result.frailty, result)
        else:
            kwargs = {"weight_sampler": unit_weight_sampler} if unit_weights else {}
            estimate = variance_service.bootstrap_cov(
                data, spec, control, B=B, lambda_times=lambda_times, seed=seed, workers=workers, **kwargs
            )
    except FrailtyError as e:
        if e.exit_code == 2:
            raise
        raise FrailtyError(f"covariance estimation failed: {e.detail}", exit_code=4)
    if method == "bootstrap":
        click.echo(f"Bootstrap: {estimate.n_converged} of {estimate.n_replicates} replicates converged")

    target = dataset_io_service.write_frame(estimate.to_frame(), out, index=True)
    outputs = [target]
    if band:
        if not lambda_times:
            raise click.UsageError("--band needs --lambda-times")
        frame = variance_service.cumhaz_band(data, spec, result, lambda_times, B=B, seed=seed, workers=workers)
        outputs.append(dataset_io_service.write_frame(frame, Path(target).with_name("cumhaz_band.csv")))
    dataset_io_service.write_manifest(
        Path(target).with_suffix(".manifest"), "cov", {**params, "method": method, "B": B, "lambda_times": lambda_times},
        seed=seed, inputs=[Path(params["data_path"])], outputs=outputs, started=started,
    )
    click.echo(f"Covariance ({estimate.method}):")
    click.echo(estimate.to_frame().to_string())


# ------------------------
# simulate / bench / sweep
# ------------------------
@cli.command()
@click.option("--scenario", "scenario_name", type=click.Choice(list(SCENARIOS)), default="gamma", show_default=True)
@click.option("--reps", type=int, default=100, show_default=True)
@click.option("--clusters", type=int, default=None, help="Override the scenario's number of clusters.")
@click.option("--fit-method", type=click.Choice([m.value for m in FitMethod]), default="loglik", show_default=True)
@click.option("--lambda-times", callback=_floats, default="30,60,90", show_default=True)
@click.option("--se-method", type=click.Choice([m.value for m in SeMethod]), default="sandwich", show_default=True)
@click.option("--B", "B", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=2015, show_default=True)
@click.option("--workers", type=int, default=WORKERS, show_default=True)
@click.option("--out", default="simulation.csv", show_default=True)
@handle_errors
def simulate(scenario_name, reps, clusters, fit_method, lambda_times, se_method, B, seed, workers, out):
    """Replication study: generate, fit and summarize many datasets."""
    started = _started()
    config = scenario(scenario_name)
    if clusters:
        config = config.model_copy(update={"n_clusters": clusters})
    summary = sim_service.simulate(
        reps, config, control=FitControl(fit_method=fit_method), lambda_times=lambda_times,
        se_method=se_method, seed=seed, workers=workers, B=B,
    )
    target = dataset_io_service.write_frame(summary.to_frame(), out)
    estimates = dataset_io_service.write_frame(summary.estimates, Path(target).with_name(Path(target).stem + "_estimates.csv"))
    dataset_io_service.write_manifest(
        Path(target).with_suffix(".manifest"), "simulate", click.get_current_context().params, seed=seed,
        outputs=[target, estimates], started=started,
    )
    click.echo(f"Simulation: {reps} reps, {config.n_clusters} clusters, {config.frailty.kind.value} frailty")
    click.echo(f"Runtime (s): {summary.runtime_total:.2f} ({summary.runtime_mean:.2f} +/- {summary.runtime_sd:.2f} per rep)")
    if summary.n_failed:
        click.echo(f"Failed reps: {summary.n_failed}")
    if summary.n_se_failed:
        click.echo(f"Reps without standard errors: {summary.n_se_failed}")
    click.echo(summary.to_frame().set_index("parameter").T.to_string())


@cli.command()
@click.option("--op", type=click.Choice([o.value for o in BenchOp]), default="fit", show_default=True)
@click.option("--sizes", callback=_floats, default="50,60,70,80,90,100,110,120,130,140,150,160,170,180,190,200", show_default=True)
@click.option("--frailty", "kinds", multiple=True, type=click.Choice([k.value for k in FrailtyKind if k != FrailtyKind.posstab]), default=["gamma"])
@click.option("--reps", type=int, default=3, show_default=True)
@click.option("--baseline-mode", type=click.Choice([m.value for m in BaselineMode]), default="inverse_cumulative", show_default=True)
@click.option("--fit-method", type=click.Choice([m.value for m in FitMethod]), default="loglik", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default="benchmark.csv", show_default=True)
@handle_errors
def bench(op, sizes, kinds, reps, baseline_mode, fit_method, seed, out):
    """Runtime against the number of clusters, with log-log slopes."""
    started = _started()
    report = sim_service.benchmark(
        op, [int(n) for n in sizes], kinds=kinds, reps=reps, seed=seed,
        control=FitControl(fit_method=fit_method), baseline_mode=baseline_mode,
    )
    target = dataset_io_service.write_frame(report.timings, out)
    slopes = dataset_io_service.write_frame(report.slopes_frame(), Path(target).with_name(Path(target).stem + "_slopes.csv"))
    dataset_io_service.write_manifest(
        Path(target).with_suffix(".manifest"), "bench", click.get_current_context().params, seed=seed,
        outputs=[target, slopes], started=started,
    )
    for s in report.slopes:
        click.echo(f"{s.op} {s.frailty}: slope {s.slope:.3f} (95% CI {s.ci_low:.3f} .. {s.ci_high:.3f})")


@cli.command()
@click.option("--param", type=click.Choice([p.value for p in SweepParam]), required=True)
@click.option("--values", callback=_floats, required=True, help="Comma separated tolerance values.")
@click.option("--frailty", type=click.Choice([k.value for k in THETA_INIT]), default="gamma", show_default=True)
@click.option("--clusters", type=int, default=100, show_default=True)
@click.option("--reps", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=WORKERS, show_default=True)
@click.option("--out", default="sweep.csv", show_default=True)
@handle_errors
def sweep(param, values, frailty, clusters, reps, seed, workers, out):
    """Speed and accuracy as one convergence tolerance is relaxed."""
    started = _started()
    report = sim_service.tolerance_sweep(param, values, kind=frailty, n_clusters=clusters, reps=reps, seed=seed, workers=workers)
    target = dataset_io_service.write_frame(report.table, out)
    runs = dataset_io_service.write_frame(report.runs, Path(target).with_name(Path(target).stem + "_runs.csv"))
    dataset_io_service.write_manifest(
        Path(target).with_suffix(".manifest"), "sweep", click.get_current_context().params, seed=seed,
        outputs=[target, runs], started=started,
    )
    click.echo(report.table.to_string(index=False))
    rho, p = report.runtime_trend()
    click.echo(f"Runtime trend: Spearman rho = {rho:.3f} (p = {p:.3g})")


# ------------------------
# kendall / serve
# ------------------------
@cli.command()
@click.option("--frailty", type=click.Choice([k.value for k in FrailtyKind if k != FrailtyKind.none]), required=True)
@click.option("--theta", type=float, default=None, help="Report Kendall's tau at this parameter value.")
@click.option("--tau", type=float, default=None, help="Report the parameter value giving this Kendall's tau.")
@handle_errors
def kendall(frailty, theta, tau):
    """Kendall's tau of a frailty distribution, or its inverse."""
    if (theta is None) == (tau is None):
        raise click.UsageError("give exactly one of --theta or --tau")
    kind = FrailtyKind(frailty)
    if theta is not None:
        value = frailty_service.kendall_tau(FrailtySpec(kind=kind, theta=theta))
        click.echo(f"{kind.value}({theta:g}): tau = {value:.6f}")
    else:
        value = frailty_service.theta_for_tau(kind, tau)
        click.echo(f"{kind.value}: tau = {tau:g} at theta = {value:.6f}")


@cli.command()
@click.option("--host", default=API_HOST, show_default=True)
@click.option("--port", type=int, default=API_PORT, show_default=True)
def serve(host, port):
    """Serve the HTTP API."""
    import uvicorn

    from app import create_app

    uvicorn.run(create_app(), host=host, port=port)
