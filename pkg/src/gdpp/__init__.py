"""Planning-centric multimodal prediction with graph-embedded map encoding.

Modules: ``scenario`` (data model, generator, JSONL I/O), ``nn`` (primitives
and gradient checking), ``encoders``, ``map_graph`` (dynamic graph
convolution with proxy waypoints), ``agent_map``, ``decoder`` (bicycle
rollout), ``losses``, ``training``, ``simulator`` and ``cli``.
"""

from .config import LossWeights, ModelConfig, TrainConfig
from .model import Batch, ModelOutput, PlanningNetwork, collate

__all__ = ["Batch", "LossWeights", "ModelConfig", "ModelOutput", "PlanningNetwork", "TrainConfig", "collate"]
__version__ = "0.1.0"
