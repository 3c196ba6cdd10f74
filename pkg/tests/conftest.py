import numpy as np
import pytest

from dwcaps_engine.core.capsules.routing import CapsuleConfig
from dwcaps_engine.datasets import generate_synthetic
from dwcaps_engine.make_model import BuildOptions


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def narrow_options():
    """Reference geometry at a width small enough to run forward passes in tests."""
    return BuildOptions.reference(filters=8)


@pytest.fixture
def small_caps():
    return CapsuleConfig(primary_capsule_dim=8, class_capsule_dim=4, num_classes=3, routing_iterations=3)


@pytest.fixture
def three_class_set():
    return generate_synthetic(num_classes=3, per_class=10, size=32, seed=7)


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.delenv("DWCAPS_THREADS", raising=False)
