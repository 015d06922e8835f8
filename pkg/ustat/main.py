from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
import logging

from ustat import __version__
from ustat.config import settings
from ustat.routers import bounds, estimates
from ustat.utils.errors import (
    ConfigError,
    DomainError,
    config_exception_handler,
    domain_exception_handler,
    global_exception_handler,
    validation_exception_handler,
)

app = FastAPI(
    title="Incomplete U-statistics API",
    description="Index spaces, complete and incomplete U-statistic estimates, deviation bounds and model selection",
    version=__version__,
    openapi_url="/api/openapi.json",
    docs_url="/api/docs",
    redoc_url="/api/redoc",
)

app.add_exception_handler(DomainError, domain_exception_handler)
app.add_exception_handler(ConfigError, config_exception_handler)
app.add_exception_handler(RequestValidationError, validation_exception_handler)
app.add_exception_handler(Exception, global_exception_handler)

# Configure logging
logging.basicConfig(level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO))
logger = logging.getLogger("ustat-api")

# Include routers with /api prefix
app.include_router(bounds.router, prefix="/api/bounds", tags=["bounds"])
app.include_router(estimates.router, prefix="/api", tags=["estimates"])

@app.get("/api/")
def read_root():
    return {"message": "Incomplete U-statistics API"}

@app.get("/api/health")
def health_check():
    return {"status": "healthy", "version": __version__}
