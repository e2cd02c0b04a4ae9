"""batchvc: safe, reproducible batch-scheduler jobs on versioned data repos."""

__version__ = "0.1.0"

from .errors import BatchVCError, ConflictDetected
from .paths import PathSet
from .record import ReproRecord, parse_record, render_record
from .registry import JobRegistry, ScheduledJob, open_registry
from .repo import NO_CHANGE, FileClass, GitRepo, RepositoryHandle, init_repository
from .scheduler import JobState, SimulatorBackend, SlurmBackend, SubmitRequest
from .workflow import (
    FinishAction,
    FinishOptions,
    ScheduleOptions,
    finish,
    reschedule,
    schedule,
)

__all__ = [
    "BatchVCError",
    "ConflictDetected",
    "PathSet",
    "ReproRecord",
    "parse_record",
    "render_record",
    "JobRegistry",
    "ScheduledJob",
    "open_registry",
    "NO_CHANGE",
    "FileClass",
    "GitRepo",
    "RepositoryHandle",
    "init_repository",
    "JobState",
    "SimulatorBackend",
    "SlurmBackend",
    "SubmitRequest",
    "FinishAction",
    "FinishOptions",
    "ScheduleOptions",
    "finish",
    "reschedule",
    "schedule",
]
