import pytest
import torch

from gdpp.config import ModelConfig
from gdpp.scenario import GeneratorSpec, generate_scenario

torch.set_default_dtype(torch.float64)


def desk_spec(**overrides) -> GeneratorSpec:
    base = dict(template="straight", num_agents=5, history=10, lane_points=20, max_neighbors=4,
                episode_seconds=2.0)
    base.update(overrides)
    return GeneratorSpec(**base)


@pytest.fixture
def desk_cfg() -> ModelConfig:
    return ModelConfig.desk()


@pytest.fixture
def desk_frames():
    spec = desk_spec()
    return [generate_scenario(seed, spec) for seed in range(4)]
