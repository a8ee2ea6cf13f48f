"""Semi-supervised image-tabular classification toolkit.

Core pieces: disentangled contrastive consistency (shared/specific token
splits, cross-modal InfoNCE, variational MI upper bound), consensus-guided
pseudo-labeling, prototype-guided label smoothing, an EMA teacher-student
trainer, and a synthetic multimodal benchmark for desk-scale verification.
"""

from .config import RunConfig, load_config, parse_config_text, save_config
from .errors import ConfigError, DataError, NumericalError, TabimgError
from .trainer import Trainer

__all__ = ["RunConfig", "Trainer", "load_config", "parse_config_text",
           "save_config", "ConfigError", "DataError", "NumericalError",
           "TabimgError"]

__version__ = "0.1.0"
