"""
Debiased GP lab - FastAPI Application
Likelihood evaluation, posterior prediction and estimator checks over HTTP.
"""
import logging
from contextlib import asynccontextmanager
from datetime import datetime, timezone

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from src.config import configure_logging, get_settings
from src.errors import GPLabError
from src.routes.estimators import router as estimators_router
from src.routes.likelihood import router as likelihood_router
from src.routes.predictions import router as predictions_router

logger = logging.getLogger(__name__)

settings = get_settings()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager."""
    configure_logging(settings.log_level)
    logger.info("Starting %s v%s (threads=%d, exact telemetry up to N=%d)", settings.app_name,
                settings.app_version, settings.threads, settings.exact_telemetry_max_n)
    yield
    logger.info("Shutting down %s", settings.app_name)


# Create FastAPI application
app = FastAPI(
    title=settings.app_name,
    description="Gaussian-process likelihoods with biased (CG, RFF) and unbiased (RR-CG, SS-RFF) estimators",
    version=settings.app_version,
    lifespan=lifespan,
    docs_url="/docs",
    redoc_url="/redoc",
    openapi_url="/openapi.json",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/health", tags=["health"])
async def health_check():
    """Check service health."""
    return {
        "status": "healthy",
        "version": settings.app_version,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


@app.get("/", tags=["root"])
async def root():
    """Root endpoint with API information."""
    return {
        "name": settings.app_name,
        "version": settings.app_version,
        "methods": ["cholesky", "cg", "rr_cg", "rff", "ss_rff"],
        "endpoints": {
            "docs": "/docs",
            "health": "/health",
            "likelihood": "/api/v1/likelihood",
            "predict": "/api/v1/predict",
            "estimator_check": "/api/v1/estimators/check",
        },
    }


app.include_router(likelihood_router, prefix="/api/v1")
app.include_router(predictions_router, prefix="/api/v1")
app.include_router(estimators_router, prefix="/api/v1")


@app.exception_handler(GPLabError)
async def domain_exception_handler(request: Request, exc: GPLabError):
    """Map domain errors to 422 with the error class name."""
    logger.warning("%s on %s: %s", type(exc).__name__, request.url.path, exc)
    return JSONResponse(status_code=422, content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(ValueError)
async def value_exception_handler(request: Request, exc: ValueError):
    logger.warning("ValueError on %s: %s", request.url.path, exc)
    return JSONResponse(status_code=422, content={"error": "ValueError", "detail": str(exc)})


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """Handle unhandled exceptions."""
    logger.exception("unhandled error on %s", request.url.path)
    return JSONResponse(
        status_code=500,
        content={
            "error": "Internal server error",
            "detail": str(exc) if settings.debug_errors else "An error occurred",
        },
    )


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("src.main:app", host=settings.app_host, port=settings.app_port)
