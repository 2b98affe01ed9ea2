import asyncio
import math

from fastapi import APIRouter, HTTPException, Query

from .. import lab
from ..errors import LabError
from ..sharp_interface import DEFAULT_MAX_MODE, jacobi_spectrum

router = APIRouter()


def _finite(value: float):
    return value if math.isfinite(value) else None


@router.get("/spectrum")
async def get_spectrum(
    kind: str = Query(..., pattern="^(circle|sphere)$"),
    radius: float = Query(1.0, gt=0),
    max_mode: int = Query(DEFAULT_MAX_MODE, ge=2, le=64),
):
    """Jacobi spectrum with multiplicities, Morse index and nullity."""
    try:
        report = await asyncio.to_thread(jacobi_spectrum, kind, radius, max_mode)
    except LabError as e:
        raise HTTPException(status_code=e.status_code, detail=str(e))
    return {
        "kind": report.kind.value,
        "radius": report.radius,
        "morse_index": report.morse_index,
        "nullity": report.nullity,
        "positivity_count": report.positivity_count,
        "levels": [
            {"k": level.k, "lambda": level.value, "multiplicity": level.multiplicity,
             "closed_form": level.closed_form}
            for level in report.levels
        ],
    }


@router.get("/identities")
async def get_identities(
    samples: int = Query(100, ge=1, le=10000),
    expansions: int = Query(50, ge=1, le=1000),
    seed: int = 0,
):
    """Frame identity residuals and expansion residual slopes."""
    report = await asyncio.to_thread(lab.run_identities, samples, expansions, seed)
    return {
        "passed": report.passed,
        "residuals": report.residuals,
        "det_slope": _finite(report.det_slope),
        "inverse_slope": _finite(report.inverse_slope),
    }
