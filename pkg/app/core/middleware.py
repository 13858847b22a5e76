import logging
import time

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.middleware.trustedhost import TrustedHostMiddleware
from fastapi.requests import Request

from app.core.config import settings

logger = logging.getLogger(__name__)
logging.getLogger("uvicorn.access").disabled = True


def register_middleware(app: FastAPI):
    @app.middleware("http")
    async def request_logging(request: Request, call_next):
        start_time = time.perf_counter()
        response = await call_next(request)
        elapsed = time.perf_counter() - start_time
        client = f"{request.client.host}:{request.client.port}" if request.client else "-"
        logger.info("%s - %s - %s - %d completed after %.3fs",
                    client, request.method, request.url.path, response.status_code, elapsed)
        return response

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    app.add_middleware(
        TrustedHostMiddleware,
        allowed_hosts=settings.ALLOWED_HOST_LIST,
    )
