import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.engine.kernel_core import KernelConfig
from app.engine.utils import symmetrize


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_precision(rng):
    """Seeded symmetric positive-definite 3x3 precision."""
    a = rng.standard_normal((3, 3))
    return symmetrize(a @ a.T + 3.0 * np.eye(3))


@pytest.fixture
def unit_kernel():
    return KernelConfig.isotropic(2, 1.0)


@pytest.fixture
def sine_stream(rng):
    xs = rng.uniform(-1.0, 1.0, (120, 2))
    ys = np.sin(2.0 * xs[:, 0]) + 0.5 * xs[:, 1]
    return [(x, float(y)) for x, y in zip(xs, ys)]


@pytest.fixture
def sunspot_csv(tmp_path):
    """Synthetic monthly cycle with a growing amplitude, 2300 rows from 1830-01."""
    n = np.arange(2300)
    values = (60.0 + 0.02 * n) * (1.0 + np.sin(2.0 * np.pi * n / 132.0))
    dates = [f"{1830 + i // 12}-{i % 12 + 1:02d}" for i in n]
    path = tmp_path / "sunspot.csv"
    lines = ["date,value"] + [f"{d},{v:.3f}" for d, v in zip(dates, values)]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def client():
    from app.main import app

    with TestClient(app) as test_client:
        yield test_client
