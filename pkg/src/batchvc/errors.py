"""Exception hierarchy shared across the batchvc package.

Every error raised on purpose derives from BatchVCError so callers (and the
CLI exit-code mapping) can distinguish tool failures from programming bugs.
"""

from __future__ import annotations


class BatchVCError(Exception):
    """Base class for all batchvc errors."""


# --- repository backend -----------------------------------------------------

class BackendFailure(BatchVCError):
    """A version-control CLI invocation failed; diagnostics are attached."""

    def __init__(self, message: str, stdout: str = "", stderr: str = ""):
        super().__init__(message)
        self.stdout = stdout
        self.stderr = stderr

    def __str__(self) -> str:
        base = super().__str__()
        detail = (self.stderr or self.stdout).strip()
        return f"{base}: {detail}" if detail else base


class MissingInput(BatchVCError):
    """An input path is not a tracked entry of the repository."""


class RetrievalFailure(BatchVCError):
    """Content of an annexed input could not be made locally available."""


class PartialAddFailure(BackendFailure):
    """Some paths could not be staged; no commit was created."""


class BranchExists(BatchVCError):
    """Refusing to create a branch over an existing one."""


class MergeConflict(BackendFailure):
    """A multi-branch merge conflicted; the merge was aborted."""


class UnknownCommit(BatchVCError):
    """Commit id does not resolve in this repository."""


# --- reproducibility records -------------------------------------------------

class InvalidRecord(BatchVCError):
    """A record violates its invariants and cannot be rendered."""


class MalformedRecord(BatchVCError):
    """Sentinel lines present but the JSON block does not parse."""


# --- job registry -------------------------------------------------------------

class CorruptRegistry(BatchVCError):
    """Registry store unreadable or carries an unknown schema version."""


class ConflictDetected(BatchVCError):
    """Requested outputs overlap an in-flight job's outputs."""

    def __init__(self, conflicts):
        self.conflicts = list(conflicts)
        jobs = sorted({c.scheduler_job_id for c in self.conflicts})
        pairs = "; ".join(
            f"{c.requested!r} vs {c.owned!r} (job {c.scheduler_job_id})"
            for c in self.conflicts[:5]
        )
        super().__init__(
            f"output conflict with in-flight job(s) {jobs}: {pairs}"
        )


class DuplicateJobId(BatchVCError):
    """A job with this scheduler id is already registered."""


class JobNotFound(BatchVCError):
    """No such job in the registry."""


class AlreadyClosed(BatchVCError):
    """The job was already finalized or discarded."""


# --- scheduler adapter ---------------------------------------------------------

class SubmitRejected(BatchVCError):
    """The scheduler backend refused the submission."""


class UnknownJob(BatchVCError):
    """Scheduler backend does not know this job id."""


class NotTerminal(BatchVCError):
    """Operation requires the job to have reached a terminal state."""


# --- workflow -------------------------------------------------------------------

class DirtyWorkingTree(BatchVCError):
    """Uncommitted changes outside open jobs' outputs block scheduling."""

    def __init__(self, paths):
        self.paths = sorted(paths)
        shown = ", ".join(self.paths[:8])
        super().__init__(
            f"working tree has uncommitted changes outside open jobs' outputs: {shown}"
        )


class StageCollision(BatchVCError):
    """The staging directory is already claimed by another open job."""


class CopyFailure(BatchVCError):
    """Deep copy into or out of the staging directory failed."""


class NotASlurmRecord(BatchVCError):
    """Commit message carries no scheduler reproducibility record."""


class ArrayPartialReschedule(BatchVCError):
    """Array jobs can only be re-executed as a whole."""


# --- benchmark harness ------------------------------------------------------------

class EmptySeries(BatchVCError):
    """An operation over a value series received no values."""


class SchemaMismatch(BatchVCError):
    """CSV does not conform to the benchmark sample schema."""
