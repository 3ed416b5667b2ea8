"""Task-adaptive spatial-temporal video sampler for few-shot recognition."""

from .config import RunConfig, default_config, load_config
from .model import SamplerModel, run_episode
from .tensor import ComputationRecord, Tensor, record

__version__ = "0.1.0"

__all__ = [
    "ComputationRecord",
    "RunConfig",
    "SamplerModel",
    "Tensor",
    "default_config",
    "load_config",
    "record",
    "run_episode",
    "__version__",
]
