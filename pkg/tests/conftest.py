from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from narfcs.data import Dataset, VariableMeta

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


def small_dataset(n: int = 200, seed: int = 0, miss: float = 0.25) -> Dataset:
    """x complete; z, b and y incomplete (b binary)."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    z = 0.5 * x + rng.normal(size=n)
    b = (rng.random(n) < 1 / (1 + np.exp(-(0.3 + 0.8 * x)))).astype(float)
    y = 1.0 + 0.7 * b + 0.4 * x - 0.3 * z + rng.normal(size=n)
    meta = [VariableMeta("x"), VariableMeta("z"), VariableMeta("b", "binary", "exposure"),
            VariableMeta("y", role="outcome")]
    mask = {v: rng.random(n) < miss for v in ("z", "b", "y")}
    return Dataset(meta, {"x": x, "z": z, "b": b, "y": y}, mask)


def one_incomplete(n: int = 300, seed: int = 0) -> Dataset:
    """Only y is incomplete."""
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=n), rng.normal(size=n)
    y = 2 + x1 - 0.5 * x2 + rng.normal(size=n)
    meta = [VariableMeta("x1"), VariableMeta("x2"), VariableMeta("y", role="outcome")]
    return Dataset(meta, {"x1": x1, "x2": x2, "y": y}, {"y": rng.random(n) < 0.3})


def bitwise_equal(a: np.ndarray, b: np.ndarray) -> bool:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return a.shape == b.shape and bool(np.array_equal(a.view(np.int64), b.view(np.int64)))


@pytest.fixture
def ds_small():
    return small_dataset()
