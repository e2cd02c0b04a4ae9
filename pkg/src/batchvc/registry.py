"""Durable registry of in-flight jobs for one repository clone.

A single SQLite file under the clone's git metadata directory holds every
scheduled-but-not-finalized job together with its declared inputs/outputs.
Conflict checking and insertion happen under one exclusive advisory lock so
two concurrent schedulers cannot both claim overlapping outputs. Closed
rows are kept for audit.
"""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .errors import (
    AlreadyClosed,
    ConflictDetected,
    CorruptRegistry,
    DuplicateJobId,
    JobNotFound,
)
from .locks import file_lock
from .paths import Conflict, PathSet, paths_conflict
from .record import ReproRecord
from .scheduler import JobState

SCHEMA_VERSION = 1
REGISTRY_SUBPATH = Path("batchvc") / "registry.db"

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS jobs (
    scheduler_job_id INTEGER PRIMARY KEY,
    record_json      TEXT NOT NULL,
    outputs_json     TEXT NOT NULL,
    inputs_json      TEXT NOT NULL,
    alt_dir          TEXT,
    submitted_at     TEXT NOT NULL,
    is_array         INTEGER NOT NULL DEFAULT 0,
    state_cache      TEXT NOT NULL,
    message          TEXT NOT NULL DEFAULT '',
    status           TEXT NOT NULL DEFAULT 'open',
    closed_at        TEXT
);
"""


class CloseOutcome(Enum):
    COMMITTED = "committed"
    DISCARDED = "discarded"


@dataclass
class ScheduledJob:
    """One in-flight job: scheduled, not yet finalized into a commit."""

    scheduler_job_id: int
    record: ReproRecord
    outputs: PathSet
    inputs: PathSet = field(default_factory=PathSet)
    alt_dir: str | None = None
    submitted_at: datetime = field(
        default_factory=lambda: datetime.now(timezone.utc)
    )
    is_array: bool = False
    state_cache: JobState = JobState.PENDING
    message: str = ""

    def __post_init__(self) -> None:
        if not self.outputs:
            raise ValueError("a scheduled job must declare at least one output")


def _utcnow_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class JobRegistry:
    """Single-file store of ScheduledJobs; multi-process safe via flock."""

    def __init__(self, db_path: Path):
        self.db_path = Path(db_path)
        self.lock_path = self.db_path.with_suffix(".lock")
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with self._lock(exclusive=True), self._connect() as conn:
                conn.executescript(_SCHEMA)
                row = conn.execute(
                    "SELECT value FROM meta WHERE key = 'schema_version'"
                ).fetchone()
                if row is None:
                    conn.execute(
                        "INSERT INTO meta (key, value) VALUES ('schema_version', ?)",
                        (str(SCHEMA_VERSION),),
                    )
                elif row[0] != str(SCHEMA_VERSION):
                    raise CorruptRegistry(
                        f"unknown registry schema version {row[0]!r} "
                        f"(this build understands {SCHEMA_VERSION})"
                    )
        except sqlite3.DatabaseError as exc:
            raise CorruptRegistry(f"registry store unreadable: {exc}") from exc

    def _lock(self, exclusive: bool):
        return file_lock(self.lock_path, exclusive=exclusive)

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path)
        conn.execute("PRAGMA synchronous=FULL")
        return conn

    # -- row mapping -------------------------------------------------------

    @staticmethod
    def _to_row(job: ScheduledJob) -> tuple:
        return (
            job.scheduler_job_id,
            json.dumps(job.record.to_payload(), sort_keys=True),
            json.dumps(job.outputs.sorted()),
            json.dumps(job.inputs.sorted()),
            job.alt_dir,
            job.submitted_at.isoformat(),
            1 if job.is_array else 0,
            job.state_cache.value,
            job.message,
        )

    @staticmethod
    def _from_row(row: tuple) -> ScheduledJob:
        return ScheduledJob(
            scheduler_job_id=row[0],
            record=ReproRecord.from_payload(json.loads(row[1])),
            outputs=PathSet(json.loads(row[2])),
            inputs=PathSet(json.loads(row[3])),
            alt_dir=row[4],
            submitted_at=datetime.fromisoformat(row[5]),
            is_array=bool(row[6]),
            state_cache=JobState(row[7]),
            message=row[8],
        )

    _COLUMNS = (
        "scheduler_job_id, record_json, outputs_json, inputs_json, alt_dir, "
        "submitted_at, is_array, state_cache, message"
    )

    def _open_jobs(self, conn: sqlite3.Connection) -> list[ScheduledJob]:
        rows = conn.execute(
            f"SELECT {self._COLUMNS} FROM jobs WHERE status = 'open' "
            "ORDER BY scheduler_job_id"
        ).fetchall()
        return [self._from_row(r) for r in rows]

    @staticmethod
    def _conflicts_against(
        requested: PathSet, open_jobs: list[ScheduledJob]
    ) -> list[Conflict]:
        found = []
        for job in open_jobs:
            for req in requested.sorted():
                for owned in job.outputs.sorted():
                    if paths_conflict(req, owned):
                        found.append(
                            Conflict(job.scheduler_job_id, requested=req, owned=owned)
                        )
        return found

    # -- operations -----------------------------------------------------------

    def find_conflicts(self, outputs: PathSet) -> list[Conflict]:
        """Open jobs owning a path equal to / nested with any requested one."""
        with self._lock(exclusive=False), self._connect() as conn:
            return self._conflicts_against(outputs, self._open_jobs(conn))

    def register(self, job: ScheduledJob) -> None:
        """Insert atomically with the conflict check (one exclusive lock)."""
        with self._lock(exclusive=True), self._connect() as conn:
            conflicts = self._conflicts_against(job.outputs, self._open_jobs(conn))
            if conflicts:
                raise ConflictDetected(conflicts)
            try:
                conn.execute(
                    f"INSERT INTO jobs ({self._COLUMNS}) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    self._to_row(job),
                )
            except sqlite3.IntegrityError as exc:
                raise DuplicateJobId(
                    f"job {job.scheduler_job_id} already registered"
                ) from exc

    def list_open(self) -> list[ScheduledJob]:
        with self._lock(exclusive=False), self._connect() as conn:
            return self._open_jobs(conn)

    def get(self, scheduler_job_id: int) -> ScheduledJob | None:
        """The open job with this id, or None."""
        with self._lock(exclusive=False), self._connect() as conn:
            row = conn.execute(
                f"SELECT {self._COLUMNS} FROM jobs "
                "WHERE scheduler_job_id = ? AND status = 'open'",
                (scheduler_job_id,),
            ).fetchone()
        return self._from_row(row) if row else None

    def update_state_cache(self, scheduler_job_id: int, state: JobState) -> None:
        with self._lock(exclusive=True), self._connect() as conn:
            conn.execute(
                "UPDATE jobs SET state_cache = ? "
                "WHERE scheduler_job_id = ? AND status = 'open'",
                (state.value, scheduler_job_id),
            )

    def close(self, scheduler_job_id: int, outcome: CloseOutcome) -> None:
        """Release the job's output reservation; the audit row is retained."""
        with self._lock(exclusive=True), self._connect() as conn:
            row = conn.execute(
                "SELECT status FROM jobs WHERE scheduler_job_id = ?",
                (scheduler_job_id,),
            ).fetchone()
            if row is None:
                raise JobNotFound(f"no job {scheduler_job_id} in registry")
            if row[0] != "open":
                raise AlreadyClosed(
                    f"job {scheduler_job_id} already closed ({row[0]})"
                )
            conn.execute(
                "UPDATE jobs SET status = ?, closed_at = ? WHERE scheduler_job_id = ?",
                (outcome.value, _utcnow_iso(), scheduler_job_id),
            )

    def closed_count(self) -> int:
        with self._lock(exclusive=False), self._connect() as conn:
            return conn.execute(
                "SELECT COUNT(*) FROM jobs WHERE status != 'open'"
            ).fetchone()[0]


def registry_path(git_dir: Path) -> Path:
    return Path(git_dir) / REGISTRY_SUBPATH


def open_registry(repo) -> JobRegistry:
    """Open (creating on first use) the registry of a repository clone.

    Accepts a GitRepo or anything with a ``git_dir`` attribute. Each clone
    gets its own registry file; clones never share in-flight state.
    """
    return JobRegistry(registry_path(repo.git_dir))
