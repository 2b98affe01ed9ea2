import logging

from fastapi import FastAPI

from . import __version__, settings
from .config import ExperimentKind
from .routes import experiments, health, spectrum

logger = logging.getLogger(__name__)

settings.configure_logging()

app = FastAPI(
    title="acvar",
    description="Allen-Cahn inner-variation laboratory",
    version=__version__,
)


@app.get("/")
async def api_root():
    """Manifest of the available endpoints."""
    return {
        "service": "acvar",
        "version": __version__,
        "description": "Allen-Cahn inner-variation laboratory",
        "experiment_kinds": [kind.value for kind in ExperimentKind],
        "endpoints": {
            "system": [
                {"method": "GET", "path": "/", "description": "This manifest"},
                {"method": "GET", "path": "/health", "description": "Liveness, version and surface tension constant"}
            ],
            "experiments": [
                {"method": "POST", "path": "/experiments/{kind}", "description": "Run an ε-sweep; body is an experiment config, returns the convergence table"}
            ],
            "sharp_interface": [
                {"method": "GET", "path": "/spectrum", "description": "Jacobi spectrum on a circle or sphere (kind, radius, max_mode)"},
                {"method": "GET", "path": "/identities", "description": "Frame identity residuals and expansion slopes (samples, expansions, seed)"}
            ]
        }
    }


app.include_router(health.router)
app.include_router(experiments.router)
app.include_router(spectrum.router)
