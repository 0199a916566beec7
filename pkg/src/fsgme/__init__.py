"""Fast, space-bounded group mutual exclusion."""

from .core import (
    GmeError,
    GmeInstance,
    GmeSystem,
    InvalidRequest,
    ProcessContext,
    SystemConfig,
    create_system,
    enter,
    exit,
    init_system,
    next_help_index,
)
from .memory import NULL, NativeMemory
from .sim import ScheduleController, SimMemory, sim_run

__all__ = [
    "NULL",
    "GmeError",
    "GmeInstance",
    "GmeSystem",
    "InvalidRequest",
    "NativeMemory",
    "ProcessContext",
    "ScheduleController",
    "SimMemory",
    "SystemConfig",
    "create_system",
    "enter",
    "exit",
    "init_system",
    "next_help_index",
    "sim_run",
]
