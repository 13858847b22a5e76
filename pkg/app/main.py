import logging
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI

from app.core.config import settings
from app.core.errors import register_general_error_handlers
from app.core.middleware import register_middleware
from app.core.routes import router as main_router

logger = logging.getLogger(__name__)

description = """
Online time-series forecasting with sparse Gaussian-kernel groups connected in
series, parallel and cascade. Generate the benchmark series, run experiments
and score error traces.
"""


@asynccontextmanager
async def lifespan(app: FastAPI):
    Path(settings.OUTPUT_DIR).mkdir(parents=True, exist_ok=True)
    logger.info("%s %s started, writing results to %s", settings.PROJECT_NAME, settings.VERSION, settings.OUTPUT_DIR)
    yield


app = FastAPI(title=settings.PROJECT_NAME,
              description=description,
              version=settings.VERSION,
              debug=settings.DEBUG,
              lifespan=lifespan,
              )
# handlers must exist before the middleware stack is built on the first request
register_general_error_handlers(app)

version_prefix = "/api/v1"
app.include_router(main_router, prefix=version_prefix)

register_middleware(app)


@app.get("/", tags=["Root"])
async def read_root():
    return {"message": f"Welcome to the {settings.PROJECT_NAME} API"}
