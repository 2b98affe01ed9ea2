"""
ε-sweep experiments over HTTP. The request body is the same strict model as the
TOML experiment config.
"""

import asyncio
import logging

from fastapi import APIRouter, HTTPException

from .. import lab
from ..config import ExperimentConfig, ExperimentKind
from ..errors import LabError

logger = logging.getLogger(__name__)

router = APIRouter()


def _raise_lab_error(e: LabError):
    """Convert a LabError into an HTTPException."""
    raise HTTPException(status_code=e.status_code, detail=str(e))


@router.post("/experiments/{kind}")
async def run_experiment(kind: ExperimentKind, config: ExperimentConfig):
    try:
        table = await asyncio.to_thread(lab.run_experiment, config, kind)
    except LabError as e:
        logger.warning("experiment %s rejected: %s", kind.value, e)
        _raise_lab_error(e)
    return table.to_dict()
