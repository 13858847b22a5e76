from typing import Any, Optional

from fastapi import FastAPI, HTTPException, Request, status
from fastapi.responses import JSONResponse
import logging

logger = logging.getLogger(__name__)


class EngineError(Exception):
    """Base class for every failure the forecasting engine reports."""

    status_code: int = status.HTTP_500_INTERNAL_SERVER_ERROR
    error_code: str = "engine_error"

    def __init__(self, message: str, resolution: Optional[str] = None, step: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.resolution = resolution
        self.step = step

    def to_detail(self) -> dict[str, Any]:
        detail: dict[str, Any] = {"message": self.message, "error_code": self.error_code}
        if self.resolution:
            detail["resolution"] = self.resolution
        if self.step is not None:
            detail["step"] = self.step
        return detail


class UsageError(EngineError):
    status_code = status.HTTP_400_BAD_REQUEST
    error_code = "usage_error"


class ConfigError(UsageError):
    error_code = "invalid_config"

    def __init__(self, field: str, message: str, resolution: Optional[str] = None):
        super().__init__(f"{field}: {message}", resolution=resolution)
        self.field = field

    def to_detail(self) -> dict[str, Any]:
        detail = super().to_detail()
        detail["field"] = self.field
        return detail


class IngestionError(EngineError):
    status_code = status.HTTP_400_BAD_REQUEST
    error_code = "ingestion_error"


class NumericError(EngineError):
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    error_code = "numeric_error"


class OptimizationError(NumericError):
    error_code = "optimization_error"


# Reusable HTTPException raisers
def raise_unknown_dataset_exception(name: str) -> HTTPException:
    """ Raises an HTTPException indicating that the dataset cannot be generated. """
    return HTTPException(
        status_code=status.HTTP_404_NOT_FOUND,
        detail={
            "message": f"Unknown dataset '{name}'",
            "error_code": "unknown_dataset",
            "resolution": "Use one of: lorenz, rlc"
        }
    )


def raise_missing_dataset_file_exception() -> HTTPException:
    """ Raises an HTTPException indicating that a file-backed dataset was requested without a path. """
    return HTTPException(
        status_code=status.HTTP_400_BAD_REQUEST,
        detail={
            "message": "The sunspot dataset needs dataset.path",
            "error_code": "dataset_path_required",
            "resolution": "Upload the monthly sunspot CSV to the server and set dataset.path"
        }
    )


def raise_dataset_path_forbidden_exception(path: str) -> HTTPException:
    """ Raises an HTTPException indicating that a dataset path points outside the data directory. """
    return HTTPException(
        status_code=status.HTTP_403_FORBIDDEN,
        detail={
            "message": f"Dataset path '{path}' is outside the data directory",
            "error_code": "dataset_path_forbidden",
            "resolution": "Place the file under DATA_DIR and pass its path relative to it"
        }
    )


def register_general_error_handlers(app: FastAPI):
    @app.exception_handler(EngineError)
    async def engine_error_handler(request: Request, exc: EngineError):
        logger.warning("%s %s failed: %s", request.method, request.url.path, exc.message)
        return JSONResponse(content=exc.to_detail(), status_code=exc.status_code)

    @app.exception_handler(Exception)
    async def internal_server_error_handler(request: Request, exc: Exception):
        logger.exception(exc)
        return JSONResponse(
            content={
                "message": "Oops! Something went wrong",
                "error_code": "server_error"
            },
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        )
