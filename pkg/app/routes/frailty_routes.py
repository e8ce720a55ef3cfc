from typing import Optional

from fastapi import APIRouter, HTTPException, Query

from app.models.errors import FrailtyError, http_status_for
from app.models.models import FrailtyKind
from app.schema.schema import FrailtySpec
from app.services import frailty_service

frailty_router = APIRouter()


@frailty_router.get("/{kind}/kendall")
def kendall(kind: FrailtyKind, theta: Optional[float] = None, tau: Optional[float] = None):
    if (theta is None) == (tau is None):
        raise HTTPException(status_code=400, detail="Give exactly one of theta or tau")
    try:
        if theta is not None:
            return {"kind": kind.value, "theta": theta, "tau": frailty_service.kendall_tau(FrailtySpec(kind=kind, theta=theta))}
        return {"kind": kind.value, "theta": frailty_service.theta_for_tau(kind, tau), "tau": tau}
    except FrailtyError as e:
        raise HTTPException(status_code=http_status_for(e), detail=e.detail)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))


@frailty_router.get("/{kind}/laplace")
def laplace(kind: FrailtyKind, theta: float, s: float = Query(..., ge=0), m: int = Query(0, ge=0)):
    """m-th derivative of the Laplace transform at s."""
    try:
        spec = FrailtySpec(kind=kind, theta=theta)
        return {"kind": kind.value, "theta": theta, "m": m, "s": s, "value": frailty_service.lt(spec, (m, s))}
    except FrailtyError as e:
        raise HTTPException(status_code=http_status_for(e), detail=e.detail)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
