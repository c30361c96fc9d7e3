import numpy as np
import pytest

from ferkd.bench import OracleTeacher, build_store, generate_task
from ferkd.calibrate import CalibrationConfig, calibrate_store
from ferkd.labels import SoftLabel
from ferkd.sampler import SamplerConfig


@pytest.fixture(scope="session")
def tiny_task():
    """Small synthetic dataset shared by tests that need real images."""
    return generate_task(7, (12, 6))


@pytest.fixture(scope="session")
def tiny_raw_store(tiny_task):
    teacher = OracleTeacher(noise_scale=1.2, seed=3)
    cfg = SamplerConfig(scale_min=0.08, scale_max=0.9)
    return build_store(tiny_task, teacher, crops_per_image=3, sampler_cfg=cfg)


@pytest.fixture(scope="session")
def tiny_store(tiny_raw_store):
    store, _ = calibrate_store(tiny_raw_store, CalibrationConfig())
    return store


@pytest.fixture
def make_labels():
    """Factory for lists of random dense labels (Dirichlet draws)."""

    def make(n: int, num_classes: int, seed: int = 0, alpha: float = 0.3):
        rng = np.random.default_rng(seed)
        return [
            SoftLabel(rng.dirichlet(np.full(num_classes, alpha))) for _ in range(n)
        ]

    return make
