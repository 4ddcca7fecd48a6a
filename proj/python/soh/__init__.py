"""Battery state-of-health estimation pipeline (C++ core)."""

from ._soh import *  # noqa: F401,F403
from ._soh import SohError, CommandError, run_command, PipelineConfig

__all__ = [name for name in dir() if not name.startswith("_")]
