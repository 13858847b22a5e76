from fastapi import APIRouter, Query
from fastapi.concurrency import run_in_threadpool

from app.api.v1.datasets.services import resolve_data_path
from app.core.errors import UsageError

from .schemas import DepthMetrics, ExperimentConfig, MetricsReport, MetricsRequest, MetricsResponse
from .services import compute_metrics, run_experiment

experiment_router = APIRouter()


@experiment_router.post("/run", response_model=MetricsReport, response_model_exclude_none=True)
async def run(
    config: ExperimentConfig,
    include_traces: bool = Query(False, description="Return per-depth test traces"),
):
    """
    Train the configured cascade on the dataset's training span and evaluate it
    prequentially on the test span. Results come back in the response only;
    nothing is written on the server, and dataset.path is read below DATA_DIR.
    """
    if config.dataset.path:
        config.dataset.path = str(resolve_data_path(config.dataset.path))
    return await run_in_threadpool(run_experiment, config, None, False, include_traces)


@experiment_router.post("/metrics", response_model=MetricsResponse)
async def metrics(request: MetricsRequest):
    """
    MAE and MSE of each posted error vector.
    """
    if not request.errors:
        raise UsageError("no error vectors given")
    out = {}
    for position, (label, errors) in enumerate(request.errors.items(), start=1):
        mae, mse = compute_metrics(errors)
        depth = int(label) if label.isdigit() else position
        out[label] = DepthMetrics(depth=depth, mae=mae, mse=mse)
    return MetricsResponse(metrics=out)
