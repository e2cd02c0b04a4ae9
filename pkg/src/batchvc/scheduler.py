"""Batch scheduler backends: real SLURM (subprocess) and a deterministic simulator.

The simulator advances on an explicit simulated clock, so tests and
benchmarks are reproducible: identical submit and advance sequences yield
identical state histories. Job scripts are really executed (as local child
processes) so their outputs genuinely appear on disk.
"""

from __future__ import annotations

import json
import os
import re
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Protocol

from .errors import NotTerminal, SubmitRejected, UnknownJob

LOG_FILE_TEMPLATE = "log.slurm-{job_id}.out"
ENV_FILE_TEMPLATE = "slurm-job-{job_id}.env.json"

SIM_ID_BASE = 11_000_000
#: Deterministic wall-clock origin for simulated timestamps.
SIM_EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


class JobState(Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    CANCELLED = "CANCELLED"
    TIMEOUT = "TIMEOUT"


TERMINAL_STATES = frozenset(
    {JobState.COMPLETED, JobState.FAILED, JobState.CANCELLED, JobState.TIMEOUT}
)

#: Legal transitions of the lifecycle state machine.
ALLOWED_TRANSITIONS = frozenset(
    {
        (JobState.PENDING, JobState.RUNNING),
        (JobState.PENDING, JobState.CANCELLED),
        (JobState.RUNNING, JobState.COMPLETED),
        (JobState.RUNNING, JobState.FAILED),
        (JobState.RUNNING, JobState.CANCELLED),
        (JobState.RUNNING, JobState.TIMEOUT),
    }
)


def is_terminal(state: JobState) -> bool:
    return state in TERMINAL_STATES


def aggregate_state(states: list[JobState]) -> JobState:
    """Collapse per-task states: COMPLETED only when every task completed."""
    if not states:
        raise ValueError("no task states to aggregate")
    if any(s is JobState.PENDING for s in states):
        return JobState.PENDING
    if any(s is JobState.RUNNING for s in states):
        return JobState.RUNNING
    for bad in (JobState.FAILED, JobState.TIMEOUT, JobState.CANCELLED):
        if any(s is bad for s in states):
            return bad
    return JobState.COMPLETED


@dataclass(frozen=True)
class SubmitRequest:
    script_path: Path
    script_args: list[str] = field(default_factory=list)
    workdir: Path = Path(".")
    array_spec: tuple[int, int] | None = None

    def validate(self) -> None:
        if not Path(self.script_path).is_file():
            raise SubmitRejected(f"job script does not exist: {self.script_path}")
        if not os.access(self.script_path, os.R_OK):
            raise SubmitRejected(f"job script not readable: {self.script_path}")
        if not Path(self.workdir).is_dir():
            raise SubmitRejected(f"workdir does not exist: {self.workdir}")
        if self.array_spec is not None:
            lo, hi = self.array_spec
            if lo > hi or lo < 0:
                raise SubmitRejected(f"bad array spec: {lo}-{hi}")

    @property
    def task_ids(self) -> list[int]:
        if self.array_spec is None:
            return [0]
        lo, hi = self.array_spec
        return list(range(lo, hi + 1))


@dataclass(frozen=True)
class JobStatus:
    state: JobState
    task_states: list[tuple[int, JobState]] | None = None


JobMetadata = dict


def write_metadata_file(metadata: JobMetadata, path: Path) -> None:
    """Serialize metadata: JSON object, sorted keys, UTF-8, trailing newline."""
    text = json.dumps(metadata, indent=1, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


class SchedulerBackend(Protocol):
    def submit(self, req: SubmitRequest) -> int: ...

    def status(self, scheduler_job_id: int) -> JobStatus: ...

    def capture_metadata(self, scheduler_job_id: int) -> JobMetadata: ...

    def exit_code(self, scheduler_job_id: int) -> int | None: ...


# --------------------------------------------------------------------------
# Deterministic simulator
# --------------------------------------------------------------------------


@dataclass
class SimRule:
    """Timing/outcome injection matched against submitted jobs.

    ``job_id`` matches a specific id, ``order`` the n-th submission
    (0-based); a rule with neither acts as the default. ``cancel_at_s``
    cancels the job at that many seconds after submission, whatever phase
    it is in. ``task_final_states`` injects outcomes for individual array
    task indices.
    """

    job_id: int | None = None
    order: int | None = None
    pending_s: float = 0.0
    running_s: float = 0.0
    final_state: JobState = JobState.COMPLETED
    cancel_at_s: float | None = None
    task_final_states: dict[int, JobState] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "order": self.order,
            "pending_s": self.pending_s,
            "running_s": self.running_s,
            "final_state": self.final_state.value,
            "cancel_at_s": self.cancel_at_s,
            "task_final_states": {
                str(k): v.value for k, v in self.task_final_states.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimRule":
        return cls(
            job_id=d.get("job_id"),
            order=d.get("order"),
            pending_s=float(d.get("pending_s", 0.0)),
            running_s=float(d.get("running_s", 0.0)),
            final_state=JobState(d.get("final_state", "COMPLETED")),
            cancel_at_s=d.get("cancel_at_s"),
            task_final_states={
                int(k): JobState(v)
                for k, v in d.get("task_final_states", {}).items()
            },
        )


@dataclass
class SimScenario:
    rules: list[SimRule] = field(default_factory=list)
    default: SimRule = field(default_factory=SimRule)

    def rule_for(self, job_id: int, order: int) -> SimRule:
        for rule in self.rules:
            if rule.job_id is not None and rule.job_id == job_id:
                return rule
            if rule.order is not None and rule.order == order:
                return rule
        return self.default

    def to_dict(self) -> dict:
        return {
            "rules": [r.to_dict() for r in self.rules],
            "default": self.default.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        return cls(
            rules=[SimRule.from_dict(r) for r in d.get("rules", [])],
            default=SimRule.from_dict(d.get("default", {})),
        )

    @classmethod
    def from_file(cls, path: Path) -> "SimScenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class _SimJob:
    job_id: int
    order: int
    submit_time: float
    script_path: str
    script_args: list[str]
    workdir: str
    array_spec: tuple[int, int] | None
    rule: SimRule
    executed: bool = False
    exit_codes: dict[int, int] = field(default_factory=dict)

    @property
    def task_ids(self) -> list[int]:
        if self.array_spec is None:
            return [0]
        lo, hi = self.array_spec
        return list(range(lo, hi + 1))


class SimulatorBackend:
    """Local stand-in for the batch scheduler, driven by advance().

    Dwell times are simulated clock; the script itself runs for real (as a
    child process in the job's workdir) when the job reaches completion, so
    a COMPLETED job's outputs exist on disk. Injected non-COMPLETED outcomes
    skip execution: a cancelled or failed job leaves no outputs.
    """

    def __init__(
        self,
        scenario: SimScenario | None = None,
        id_base: int = SIM_ID_BASE,
        state_path: Path | None = None,
    ):
        self.scenario = scenario or SimScenario()
        self._next_id = id_base
        self._clock = 0.0
        self._jobs: dict[int, _SimJob] = {}
        self.state_path = Path(state_path) if state_path else None
        if self.state_path and self.state_path.exists():
            self._load()

    # state is computed from the clock; scripts execute on phase crossings

    def submit(self, req: SubmitRequest) -> int:
        req.validate()
        job_id = self._next_id
        self._next_id += 1
        order = len(self._jobs)
        rule = self.scenario.rule_for(job_id, order)
        self._jobs[job_id] = _SimJob(
            job_id=job_id,
            order=order,
            submit_time=self._clock,
            script_path=str(Path(req.script_path).resolve()),
            script_args=list(req.script_args),
            workdir=str(Path(req.workdir).resolve()),
            array_spec=req.array_spec,
            rule=rule,
        )
        self._save()
        return job_id

    def advance(self, seconds: float) -> None:
        """Move the simulated clock forward and settle state transitions."""
        if seconds < 0:
            raise ValueError("cannot advance backwards")
        self._clock += seconds
        for job in sorted(self._jobs.values(), key=lambda j: j.job_id):
            self._settle(job)
        self._save()

    @property
    def clock(self) -> float:
        return self._clock

    def submit_count(self) -> int:
        return len(self._jobs)

    def all_terminal(self) -> bool:
        return all(
            is_terminal(self.status(jid).state) for jid in self._jobs
        )

    def _phase(self, job: _SimJob) -> JobState:
        elapsed = self._clock - job.submit_time
        rule = job.rule
        if rule.cancel_at_s is not None and elapsed > rule.cancel_at_s:
            return JobState.CANCELLED
        if elapsed <= rule.pending_s:
            return JobState.PENDING
        if elapsed <= rule.pending_s + rule.running_s:
            return JobState.RUNNING
        return rule.final_state

    def _task_state(self, job: _SimJob, task_id: int) -> JobState:
        phase = self._phase(job)
        if phase in (JobState.PENDING, JobState.RUNNING, JobState.CANCELLED):
            return phase
        injected = job.rule.task_final_states.get(task_id)
        if injected is not None:
            return injected
        exit_code = job.exit_codes.get(task_id)
        if exit_code is not None and exit_code != 0:
            return JobState.FAILED
        return phase

    def _settle(self, job: _SimJob) -> None:
        if job.executed:
            return
        phase = self._phase(job)
        if not is_terminal(phase):
            return
        job.executed = True
        if phase is not JobState.COMPLETED:
            return  # job never got to run its payload
        log_path = Path(job.workdir) / LOG_FILE_TEMPLATE.format(job_id=job.job_id)
        with open(log_path, "ab") as log:
            for task_id in job.task_ids:
                injected = job.rule.task_final_states.get(task_id)
                if injected is not None and injected is not JobState.COMPLETED:
                    continue
                job.exit_codes[task_id] = self._run_script(job, task_id, log)

    def _run_script(self, job: _SimJob, task_id: int, log) -> int:
        env = dict(os.environ)
        env["SLURM_JOB_ID"] = str(job.job_id)
        if job.array_spec is not None:
            env["SLURM_ARRAY_JOB_ID"] = str(job.job_id)
            env["SLURM_ARRAY_TASK_ID"] = str(task_id)
        script = job.script_path
        cmd = (
            [script, *job.script_args]
            if os.access(script, os.X_OK)
            else ["/bin/sh", script, *job.script_args]
        )
        proc = subprocess.run(
            cmd, cwd=job.workdir, stdout=log, stderr=subprocess.STDOUT, env=env
        )
        return proc.returncode

    def _get(self, scheduler_job_id: int) -> _SimJob:
        try:
            return self._jobs[scheduler_job_id]
        except KeyError:
            raise UnknownJob(f"simulator knows no job {scheduler_job_id}") from None

    def status(self, scheduler_job_id: int) -> JobStatus:
        job = self._get(scheduler_job_id)
        task_states = [(t, self._task_state(job, t)) for t in job.task_ids]
        if job.array_spec is None:
            return JobStatus(state=task_states[0][1])
        agg = aggregate_state([s for _, s in task_states])
        return JobStatus(state=agg, task_states=task_states)

    def capture_metadata(self, scheduler_job_id: int) -> JobMetadata:
        job = self._get(scheduler_job_id)
        status = self.status(scheduler_job_id)
        if not is_terminal(status.state):
            raise NotTerminal(
                f"job {scheduler_job_id} is {status.state.value}, not terminal"
            )
        rule = job.rule

        def ts(offset: float) -> str:
            return (SIM_EPOCH + timedelta(seconds=offset)).strftime(
                "%Y-%m-%dT%H:%M:%S"
            )

        start = job.submit_time + rule.pending_s
        end = start + rule.running_s
        meta = {
            "SLURM_JOB_ID": str(job.job_id),
            "SLURM_JOB_NAME": Path(job.script_path).name,
            "SLURM_JOB_PARTITION": "simulated",
            "SLURM_NODELIST": "simnode001",
            "SLURM_NTASKS": "1",
            "SLURM_JOB_STATE": status.state.value,
            "SLURM_SUBMIT_TIME": ts(job.submit_time),
            "SLURM_START_TIME": ts(start),
            "SLURM_END_TIME": ts(end),
        }
        if job.array_spec is not None:
            lo, hi = job.array_spec
            meta["SLURM_ARRAY_TASK_COUNT"] = str(hi - lo + 1)
            meta["SLURM_ARRAY_TASK_MIN"] = str(lo)
            meta["SLURM_ARRAY_TASK_MAX"] = str(hi)
        return meta

    def exit_code(self, scheduler_job_id: int) -> int | None:
        job = self._get(scheduler_job_id)
        if not job.exit_codes:
            return None
        return max(job.exit_codes.values())

    # -- persistence across CLI invocations ------------------------------------

    def _save(self) -> None:
        if self.state_path is None:
            return
        state = {
            "clock": self._clock,
            "next_id": self._next_id,
            "scenario": self.scenario.to_dict(),
            "jobs": [
                {
                    "job_id": j.job_id,
                    "order": j.order,
                    "submit_time": j.submit_time,
                    "script_path": j.script_path,
                    "script_args": j.script_args,
                    "workdir": j.workdir,
                    "array_spec": list(j.array_spec) if j.array_spec else None,
                    "rule": j.rule.to_dict(),
                    "executed": j.executed,
                    "exit_codes": {str(k): v for k, v in j.exit_codes.items()},
                }
                for j in self._jobs.values()
            ],
        }
        self.state_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state, indent=1, sort_keys=True))
        os.replace(tmp, self.state_path)

    def _load(self) -> None:
        state = json.loads(self.state_path.read_text())
        self._clock = state["clock"]
        self._next_id = state["next_id"]
        self.scenario = SimScenario.from_dict(state["scenario"])
        self._jobs = {}
        for j in state["jobs"]:
            job = _SimJob(
                job_id=j["job_id"],
                order=j["order"],
                submit_time=j["submit_time"],
                script_path=j["script_path"],
                script_args=j["script_args"],
                workdir=j["workdir"],
                array_spec=tuple(j["array_spec"]) if j["array_spec"] else None,
                rule=SimRule.from_dict(j["rule"]),
                executed=j["executed"],
                exit_codes={int(k): v for k, v in j["exit_codes"].items()},
            )
            self._jobs[job.job_id] = job


# ------------------------------------------------------------------------------
# Real SLURM backend (thin subprocess wrapper)
# ------------------------------------------------------------------------------

_SBATCH_ID_RE = re.compile(r"Submitted batch job (\d+)")

#: Accounting states beyond the lifecycle enum collapse conservatively:
#: requeued/suspended-style states are still in flight, everything else
#: that is not an explicit success counts as FAILED.
_SLURM_STATE_MAP = {
    "PENDING": JobState.PENDING,
    "RUNNING": JobState.RUNNING,
    "COMPLETED": JobState.COMPLETED,
    "FAILED": JobState.FAILED,
    "CANCELLED": JobState.CANCELLED,
    "TIMEOUT": JobState.TIMEOUT,
    "REQUEUED": JobState.PENDING,
    "RESIZING": JobState.RUNNING,
    "SUSPENDED": JobState.RUNNING,
    "COMPLETING": JobState.RUNNING,
}

_SACCT_METADATA_FIELDS = [
    ("JobID", "SLURM_JOB_ID"),
    ("JobName", "SLURM_JOB_NAME"),
    ("Partition", "SLURM_JOB_PARTITION"),
    ("NodeList", "SLURM_NODELIST"),
    ("NNodes", "SLURM_JOB_NUM_NODES"),
    ("NTasks", "SLURM_NTASKS"),
    ("State", "SLURM_JOB_STATE"),
    ("Submit", "SLURM_SUBMIT_TIME"),
    ("Start", "SLURM_START_TIME"),
    ("End", "SLURM_END_TIME"),
    ("ExitCode", "SLURM_EXIT_CODE"),
]


def map_slurm_state(raw: str) -> JobState:
    word = raw.strip().split()[0] if raw.strip() else ""
    word = word.split("+")[0]  # e.g. "CANCELLED+"
    if word.startswith("CANCELLED"):
        return JobState.CANCELLED
    return _SLURM_STATE_MAP.get(word, JobState.FAILED)


class SlurmBackend:
    """Drives sbatch/sacct; job stdout goes to log.slurm-<id>.out in workdir."""

    def __init__(self, sbatch: str = "sbatch", sacct: str = "sacct"):
        self.sbatch = sbatch
        self.sacct = sacct
        self._known: set[int] = set()

    def _run(self, cmd: list[str], cwd: Path | None = None) -> subprocess.CompletedProcess:
        return subprocess.run(cmd, cwd=cwd, capture_output=True, text=True)

    def submit(self, req: SubmitRequest) -> int:
        req.validate()
        cmd = [self.sbatch, "--output", LOG_FILE_TEMPLATE.format(job_id="%j")]
        if req.array_spec is not None:
            lo, hi = req.array_spec
            cmd.append(f"--array={lo}-{hi}")
        cmd += [str(req.script_path), *req.script_args]
        proc = self._run(cmd, cwd=req.workdir)
        match = _SBATCH_ID_RE.search(proc.stdout or "")
        if proc.returncode != 0 or not match:
            raise SubmitRejected(
                f"sbatch rejected the job: {proc.stderr.strip() or proc.stdout.strip()}"
            )
        job_id = int(match.group(1))
        self._known.add(job_id)
        return job_id

    def _sacct_rows(self, scheduler_job_id: int, fields: str) -> list[list[str]]:
        proc = self._run(
            [
                self.sacct,
                "-j",
                str(scheduler_job_id),
                f"--format={fields}",
                "--parsable2",
                "--noheader",
            ]
        )
        if proc.returncode != 0:
            raise UnknownJob(
                f"sacct failed for job {scheduler_job_id}: {proc.stderr.strip()}"
            )
        return [line.split("|") for line in proc.stdout.splitlines() if line]

    def status(self, scheduler_job_id: int) -> JobStatus:
        rows = self._sacct_rows(scheduler_job_id, "JobID,State")
        main: str | None = None
        tasks: list[tuple[int, JobState]] = []
        for row in rows:
            job_field, state_field = row[0], row[1]
            if "." in job_field:
                continue  # .batch/.extern steps
            if "_" in job_field:
                base, _, task = job_field.partition("_")
                if base == str(scheduler_job_id) and task.isdigit():
                    tasks.append((int(task), map_slurm_state(state_field)))
            elif job_field == str(scheduler_job_id):
                main = state_field
        if main is None and not tasks:
            raise UnknownJob(f"no accounting rows for job {scheduler_job_id}")
        if tasks:
            tasks.sort()
            return JobStatus(
                state=aggregate_state([s for _, s in tasks]), task_states=tasks
            )
        return JobStatus(state=map_slurm_state(main))

    def capture_metadata(self, scheduler_job_id: int) -> JobMetadata:
        status = self.status(scheduler_job_id)
        if not is_terminal(status.state):
            raise NotTerminal(
                f"job {scheduler_job_id} is {status.state.value}, not terminal"
            )
        fields = ",".join(name for name, _ in _SACCT_METADATA_FIELDS)
        rows = self._sacct_rows(scheduler_job_id, fields)
        main = next((r for r in rows if r[0] == str(scheduler_job_id)), rows[0])
        meta = {}
        for (_, env_key), value in zip(_SACCT_METADATA_FIELDS, main):
            meta[env_key] = value
        return meta

    def exit_code(self, scheduler_job_id: int) -> int | None:
        rows = self._sacct_rows(scheduler_job_id, "JobID,ExitCode")
        for row in rows:
            if row[0] == str(scheduler_job_id) and len(row) > 1 and ":" in row[1]:
                try:
                    return int(row[1].split(":")[0])
                except ValueError:
                    return None
        return None
