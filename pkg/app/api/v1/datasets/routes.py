from typing import Literal, Optional

from fastapi import APIRouter, Path, Query
from fastapi.concurrency import run_in_threadpool

from .schemas import DatasetResponse
from .services import get_series, to_response

dataset_router = APIRouter()


@dataset_router.get("/{name}", response_model=DatasetResponse)
async def get_dataset(
    name: str = Path(..., description="lorenz, rlc or sunspot"),
    n_samples: Optional[int] = Query(None, ge=1, le=100_000),
    integrator: Literal["rk4", "euler"] = Query("rk4"),
    path: Optional[str] = Query(None, description="Server-side sunspot CSV"),
):
    """
    Generate a benchmark series, or read the sunspot CSV from a server path.
    """
    series = await run_in_threadpool(get_series, name, n_samples, integrator, path)
    return to_response(series)
