from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from omrr.oracle import small_family

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def binomial_se(p: float, n: int) -> float:
    return float(np.sqrt(max(p * (1 - p), 1e-12) / n))


@pytest.fixture(scope="session")
def family():
    """The randomized small-instance family shared by the exact checks."""
    return small_family(60, seed=2024)
