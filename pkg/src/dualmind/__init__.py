"""Dual-mind world model: a recurrent latent world model (System 1) coupled
with a differentiable logic engine (System 2), plus planners, analytic
environments and an experiment harness."""

from .config import RunConfig, preset
from .envs import ENV_NAMES, make_env
from .errors import (BadMagicError, ConfigError, DualMindError, FormatError, InputError,
                     NotReadyError, NumericError, TruncatedFileError, VersionError)
from .logic import LogicNetwork
from .replay import Episode, ReplayBuffer
from .rssm import RSSM, ModelState

__all__ = [
    "RunConfig", "preset", "ENV_NAMES", "make_env", "LogicNetwork", "Episode",
    "ReplayBuffer", "RSSM", "ModelState", "DualMindError", "ConfigError", "InputError",
    "NumericError", "NotReadyError", "FormatError", "VersionError", "TruncatedFileError",
    "BadMagicError",
]

__version__ = "0.1.0"
