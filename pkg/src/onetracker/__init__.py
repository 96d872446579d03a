"""Foundation/prompt RGB+X tracker on a small numpy autodiff engine."""

from .config import ConfigError, TrackerConfig, load_config
from .model import FoundationTracker
from .peft import PromptTracker, census_formula, trainable_param_count

__all__ = ["ConfigError", "FoundationTracker", "PromptTracker", "TrackerConfig", "census_formula",
           "load_config", "trainable_param_count"]
__version__ = "0.1.0"
