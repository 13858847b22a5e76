from pathlib import Path
from typing import Optional

from app.core.config import settings
from app.core.errors import (
    raise_dataset_path_forbidden_exception,
    raise_missing_dataset_file_exception,
    raise_unknown_dataset_exception,
)
from app.engine.datasets import Series, generate, load_sunspot

from .schemas import DatasetResponse

GENERATED = ("lorenz", "rlc")


def resolve_data_path(path: str) -> Path:
    """``path`` resolved against ``settings.DATA_DIR``; paths leaving it are refused."""
    root = Path(settings.DATA_DIR).resolve()
    resolved = (root / path).resolve()
    if not resolved.is_relative_to(root):
        raise raise_dataset_path_forbidden_exception(path)
    return resolved


def get_series(name: str, n_samples: Optional[int] = None, integrator: str = "rk4",
               path: Optional[str] = None) -> Series:
    if name == "sunspot":
        if not path:
            raise raise_missing_dataset_file_exception()
        return load_sunspot(resolve_data_path(path))
    if name not in GENERATED:
        raise raise_unknown_dataset_exception(name)
    return generate(name, n_samples, integrator)


def to_response(series: Series) -> DatasetResponse:
    return DatasetResponse(
        name=series.name,
        columns=list(series.columns),
        step=series.step,
        n_samples=len(series),
        values=series.values.tolist(),
    )
