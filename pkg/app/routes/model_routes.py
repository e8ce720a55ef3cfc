from fastapi import APIRouter, HTTPException

from app.models.errors import FrailtyError, http_status_for
from app.models.models import FrailtyKind
from app.models.results import FitResult
from app.routes.dataset_routes import dataset_from_payload
from app.schema.schema import CovarianceRequest, FitRequest, FitSummary, FrailtySpec
from app.services import frailty_service
from app.services.fit_service import fit_service
from app.services.variance_service import variance_service

model_router = APIRouter()


def _spec(kind: FrailtyKind) -> FrailtySpec:
    if kind == FrailtyKind.none:
        return frailty_service.NONE_SPEC
    return FrailtySpec(kind=kind, theta=frailty_service.initial_theta(kind))


def fit_summary(fit: FitResult) -> FitSummary:
    return FitSummary(
        beta={name: float(b) for name, b in zip(fit.covariate_names, fit.beta)},
        theta=fit.theta,
        frailty_variance=frailty_service.frailty_variance(fit.frailty) if fit.has_theta else None,
        loglik=fit.loglik,
        iterations=fit.iterations,
        converged=fit.converged,
        reason=fit.reason,
        boundary=fit.boundary,
        baseline=[[float(t), float(v)] for t, v in zip(fit.baseline.times, fit.baseline.cum_values)],
    )


@model_router.post("/fit", response_model=FitSummary)
def fit_model(request: FitRequest):
    try:
        data = dataset_from_payload(request.data)
        fit = fit_service.fit_model(data, _spec(request.frailty), request.control)
    except FrailtyError as e:
        raise HTTPException(status_code=http_status_for(e), detail=e.detail)
    return fit_summary(fit)


@model_router.post("/covariance")
def covariance(request: CovarianceRequest):
    try:
        data = dataset_from_payload(request.data)
        spec = _spec(request.frailty)
        fit = fit_service.fit_model(data, spec, request.control)
        if request.method == "sandwich":
            cov = variance_service.sandwich_cov(data, fit.frailty, fit)
        else:
            cov = variance_service.bootstrap_cov(
                data, spec, request.control, B=request.B, lambda_times=request.lambda_times, seed=request.seed
            )
    except FrailtyError as e:
        raise HTTPException(status_code=http_status_for(e), detail=e.detail)
    return {
        "method": cov.method,
        "labels": list(cov.labels),
        "matrix": cov.matrix.tolist(),
        "se": {k: float(v) for k, v in cov.standard_errors().items()},
        "n_converged": cov.n_converged,
        "fit": fit_summary(fit),
    }
