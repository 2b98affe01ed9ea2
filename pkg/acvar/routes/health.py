from datetime import datetime
from zoneinfo import ZoneInfo

from fastapi import APIRouter

from .. import __version__, settings
from ..sharp_interface import SIGMA

router = APIRouter()


@router.get("/health")
async def get_health():
    return {
        "status": "ok",
        "version": __version__,
        "sigma": SIGMA,
        "workers": settings.WORKERS,
        "utc": datetime.now(ZoneInfo("UTC")).isoformat(),
    }
