"""Token and condition caching for a desk-scale masked autoregressive generator."""
from .backend import active_backend, set_backend, use_backend
from .cache import CacheSchedule, Criterion, StepKind, Strategy, TokenClass, schedule_kind
from .config import RunConfig
from .decode import Generation, cosine_schedule, generate, run_generation
from .model import Branch, CfgForm, ModelConfig, Weights, init_weights

__version__ = "0.1.0"

__all__ = [
    "Branch", "CacheSchedule", "CfgForm", "Criterion", "Generation", "ModelConfig",
    "RunConfig", "StepKind", "Strategy", "TokenClass", "Weights", "active_backend",
    "cosine_schedule", "generate", "init_weights", "run_generation", "schedule_kind",
    "set_backend", "use_backend",
]
