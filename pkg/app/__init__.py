import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware

from app.routes.dataset_routes import dataset_router
from app.routes.frailty_routes import frailty_router
from app.routes.model_routes import model_router
from config.config import TOOL_NAME, TOOL_VERSION


def calculate_percentiles(values):
    if not values:
        return {}
    return {
        "p50": float(np.percentile(values, 50)),
        "p90": float(np.percentile(values, 90)),
        "p95": float(np.percentile(values, 95)),
        "p99": float(np.percentile(values, 99)),
    }


def create_app():

    app = FastAPI(title=TOOL_NAME, version=TOOL_VERSION)

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )
    api_prefix = "/api/v1"

    @app.get("/")
    def home():
        return {"message": f"{TOOL_NAME} {TOOL_VERSION}"}

    timings = []

    @app.middleware("http")
    async def add_timing(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        timings.append({"path": request.url.path, "time": time.perf_counter() - start})
        return response

    @app.get("/metrics")
    async def get_metrics():
        return timings

    @app.get("/metrics/percentiles")
    async def get_percentiles():
        values = [t["time"] for t in timings]
        return {"count": len(values), "percentiles": calculate_percentiles(values)}

    app.include_router(dataset_router, prefix=f"{api_prefix}/datasets", tags=["Datasets"])
    app.include_router(model_router, prefix=f"{api_prefix}/models", tags=["Models"])
    app.include_router(frailty_router, prefix=f"{api_prefix}/frailty", tags=["Frailty"])
    return app
