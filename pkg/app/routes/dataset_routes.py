import logging

from fastapi import APIRouter, HTTPException

from app.models.dataset import ClusteredDataset
from app.models.errors import FrailtyError, http_status_for
from app.models.models import FrailtyKind
from app.schema.schema import (
    ClusterSizeSpec,
    DatasetPayload,
    DatasetRow,
    FrailtySpec,
    GenerateRequest,
    GenerationConfig,
)
from app.services.datagen_service import datagen_service
from app.services.expression_service import build_baseline
from app.services.frailty_service import NONE_SPEC

logger = logging.getLogger("frailty.routes.datasets")

dataset_router = APIRouter()


def dataset_from_payload(payload: DatasetPayload) -> ClusteredDataset:
    rows = payload.rows
    return ClusteredDataset(
        cluster=[r.family for r in rows],
        member=[r.rep for r in rows],
        time=[r.time for r in rows],
        status=[r.status for r in rows],
        covariates=[r.covariates for r in rows],
        covariate_names=list(payload.covariate_names),
    )


def payload_from_dataset(data: ClusteredDataset) -> DatasetPayload:
    rows = [
        DatasetRow(
            family=int(data.cluster[i]),
            rep=int(data.member[i]),
            time=float(data.time[i]),
            status=int(data.status[i]),
            covariates=data.covariates[i].tolist(),
        )
        for i in range(data.n_obs)
    ]
    return DatasetPayload(covariate_names=list(data.covariate_names), rows=rows)


@dataset_router.post("/generate", response_model=DatasetPayload)
def generate_dataset(request: GenerateRequest):
    try:
        frailty = NONE_SPEC if request.frailty == FrailtyKind.none else FrailtySpec(kind=request.frailty, theta=request.theta)
        config = GenerationConfig(
            n_clusters=request.n_clusters,
            size_spec=ClusterSizeSpec.fixed(request.cluster_size),
            beta=request.beta,
            covariates=request.covariates,
            frailty=frailty,
            baseline=build_baseline(request.baseline_mode, request.baseline_expression),
            censoring=request.censoring,
            round_base=request.round_base,
            seed=request.seed,
        )
        data = datagen_service.generate(config)
    except FrailtyError as e:
        raise HTTPException(status_code=http_status_for(e), detail=e.detail)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    logger.info(f"Generated {data.n_obs} rows in {data.n_clusters} clusters")
    return payload_from_dataset(data)
