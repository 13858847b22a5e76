from typing import List, Optional

from pydantic import BaseModel


class DatasetResponse(BaseModel):
    name: str
    columns: List[str]
    step: Optional[float] = None
    n_samples: int
    values: List[List[float]]

    model_config = {
        "json_schema_extra": {
            "example": {
                "name": "rlc",
                "columns": ["xc1", "xc2"],
                "step": 0.008,
                "n_samples": 2,
                "values": [[0.0, 0.3], [0.0024, 0.3023]],
            }
        }
    }
