from fastapi import APIRouter

from app.api.v1.datasets.routes import dataset_router
from app.api.v1.experiments.routes import experiment_router

router = APIRouter()

router.include_router(dataset_router, prefix="/datasets", tags=["datasets"])
router.include_router(experiment_router, prefix="/experiments", tags=["experiments"])
