"""An LSM-tree key-value store whose tables are directories of per-key files."""

from . import errors
from .engine import Engine, EngineConfig, Snapshot, open_engine
from .kernels import BACKEND

__all__ = ["BACKEND", "Engine", "EngineConfig", "Snapshot", "errors", "open_engine"]
