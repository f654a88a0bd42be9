import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_world():
    """A 30-sample occluded training set with its 3D shapes and a two-stage cascade."""
    from jointface.cascade import TrainConfig, train
    from jointface.synth import GenConfig, generate, make_shape_family

    cfg = GenConfig(seed=21, n_samples=30, occlusion_mode="random", occlusion_rate=0.2, n_shapes=40)
    shapes, deformable = make_shape_family(cfg)
    samples = generate(cfg, deformable)
    model = train(samples, TrainConfig(n_stages=2, seed=4), shapes3d=shapes)
    return {"cfg": cfg, "shapes": shapes, "deformable": deformable, "samples": samples, "model": model}
