"""The three lifecycle verbs: schedule, finish, reschedule (+ alt-dir staging).

One verb runs at a time per clone (exclusive lock on the repository).
Scheduling never mutates the repository history; all commits happen in the
finish phase, so job scripts stay free of version-control commands.
"""

from __future__ import annotations

import logging
import os
import shlex
import shutil
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path, PurePosixPath

from .errors import (
    ArrayPartialReschedule,
    BatchVCError,
    ConflictDetected,
    CopyFailure,
    DirtyWorkingTree,
    JobNotFound,
    NotASlurmRecord,
    StageCollision,
)
from .locks import file_lock
from .paths import PathSet, normalize_path, paths_conflict
from .record import ReproRecord, parse_record, render_record, slurm_headline
from .registry import CloseOutcome, JobRegistry, ScheduledJob, open_registry
from .repo import NO_CHANGE, GitRepo
from .scheduler import (
    ENV_FILE_TEMPLATE,
    LOG_FILE_TEMPLATE,
    JobState,
    SchedulerBackend,
    SubmitRequest,
    is_terminal,
    write_metadata_file,
)

logger = logging.getLogger(__name__)


class FailedPolicy(Enum):
    ERROR = "error"
    CLOSE_FAILED = "close-failed"
    COMMIT_FAILED = "commit-failed"


class MergeMode(Enum):
    DIRECT = "direct"
    BRANCHES = "branches"
    OCTOPUS = "octopus"


class FinishAction(Enum):
    COMMITTED = "COMMITTED"
    NO_CHANGE = "NO_CHANGE"
    SKIPPED_RUNNING = "SKIPPED_RUNNING"
    DISCARDED_FAILED = "DISCARDED_FAILED"
    ERROR = "ERROR"


@dataclass
class ScheduleOptions:
    outputs: PathSet
    inputs: PathSet = field(default_factory=PathSet)
    script: str = ""
    script_args: list[str] = field(default_factory=list)
    pwd: str = "."
    message: str = ""
    alt_dir_root: Path | None = None
    array_spec: tuple[int, int] | None = None
    allow_dirty: bool = False
    chain: list[str] = field(default_factory=list)


@dataclass
class FinishOptions:
    job_id: int | None = None
    failed_policy: FailedPolicy = FailedPolicy.ERROR
    merge_mode: MergeMode = MergeMode.DIRECT


@dataclass
class FinishOutcome:
    scheduler_job_id: int
    action: FinishAction
    commit: str | None = None
    detail: str = ""


def _verb_lock(repo: GitRepo):
    return file_lock(repo.git_dir / "batchvc" / "lock", exclusive=True)


def _scheduler_artifacts(job: ScheduledJob) -> list[str]:
    """Repo-relative log/metadata paths the scheduler may drop for a job."""
    pwd = PurePosixPath(job.record.pwd)
    return [
        normalize_path(str(pwd / LOG_FILE_TEMPLATE.format(job_id=job.scheduler_job_id))),
        normalize_path(str(pwd / ENV_FILE_TEMPLATE.format(job_id=job.scheduler_job_id))),
    ]


def _check_clean_tree(repo: GitRepo, registry: JobRegistry) -> None:
    """Refuse to schedule over uncommitted changes not owned by open jobs."""
    owned_paths = []
    for job in registry.list_open():
        owned_paths.extend(job.outputs)
        owned_paths.extend(_scheduler_artifacts(job))
    offending = []
    for _, path in repo.status_entries():
        norm = normalize_path(path)
        if norm.startswith(".batchvc"):
            continue
        if any(paths_conflict(norm, owned) for owned in owned_paths):
            continue
        offending.append(norm)
    if offending:
        raise DirtyWorkingTree(offending)


def _atomic_copy_file(src: Path, dst: Path) -> None:
    """Copy with write-temp-then-rename so interrupts never leave half files."""
    dst.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dst.parent, prefix=f".{dst.name}.")
    try:
        with os.fdopen(fd, "wb") as out, open(src, "rb") as inp:
            shutil.copyfileobj(inp, out)
        shutil.copymode(src, tmp)
        os.replace(tmp, dst)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise CopyFailure(f"copying {src} -> {dst} failed: {exc}") from exc


def stage_alt_dir(
    repo: GitRepo,
    alt_root: Path,
    pwd: str,
    inputs: PathSet,
    occupied: tuple[str, ...] = (),
) -> Path:
    """Mirror the job's working directory under *alt_root*.

    The staged workdir sits at the same relative path as in the repository;
    inputs are deep-copied beneath alt_root with annexed content
    dereferenced, so the job sees real files.
    """
    alt_root = Path(alt_root)
    if not alt_root.is_absolute():
        raise ValueError(f"alt-dir root must be absolute: {alt_root}")
    alt_root.mkdir(parents=True, exist_ok=True)
    staged = alt_root / PurePosixPath(normalize_path(pwd))
    if str(staged) in occupied:
        raise StageCollision(
            f"staging directory {staged} already claimed by an open job"
        )
    staged.mkdir(parents=True, exist_ok=True)
    for entry in inputs:
        src = repo.root / PurePosixPath(entry)
        dst = alt_root / PurePosixPath(entry)
        try:
            if src.is_dir():
                shutil.copytree(src, dst, symlinks=False, dirs_exist_ok=True)
            else:
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, dst)  # follows symlinks: content lands
                shutil.copymode(src, dst, follow_symlinks=True)
        except OSError as exc:
            raise CopyFailure(f"staging input {entry!r} failed: {exc}") from exc
    return staged


def schedule(
    repo: GitRepo,
    registry: JobRegistry,
    backend: SchedulerBackend,
    opts: ScheduleOptions,
) -> ScheduledJob:
    """Conflict-check, stage, submit, and register one job.

    Nothing is submitted when the declared outputs overlap an in-flight
    job's outputs; nothing is registered when the scheduler refuses the
    submission.
    """
    if not opts.outputs:
        raise ValueError("schedule requires at least one output path")
    if not opts.script:
        raise ValueError("schedule requires a job script")
    pwd = normalize_path(opts.pwd)

    with _verb_lock(repo):
        if not opts.allow_dirty:
            _check_clean_tree(repo, registry)

        conflicts = registry.find_conflicts(opts.outputs)
        # inputs must not read an uncommitted output of another open job
        conflicts += registry.find_conflicts(opts.inputs)
        if conflicts:
            raise ConflictDetected(conflicts)

        repo.ensure_inputs_present(opts.inputs)

        script_path = Path(opts.script)
        script_abs = (
            script_path
            if script_path.is_absolute()
            else (repo.root / PurePosixPath(pwd) / script_path)
        ).resolve()
        try:
            script_abs.relative_to(repo.root)
        except ValueError:
            logger.warning(
                "job script %s lives outside the repository; it will not be "
                "under version control",
                script_abs,
            )

        alt_root = None
        if opts.alt_dir_root is not None:
            alt_root = Path(opts.alt_dir_root).resolve()
            occupied = tuple(
                str(Path(job.alt_dir) / PurePosixPath(job.record.pwd))
                for job in registry.list_open()
                if job.alt_dir
            )
            staged = stage_alt_dir(repo, alt_root, pwd, opts.inputs, occupied)
            workdir = staged
            submit_script = script_abs
            try:
                rel = script_abs.relative_to(repo.root)
                staged_script = alt_root / rel
                staged_script.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(script_abs, staged_script)
                shutil.copymode(script_abs, staged_script)
                submit_script = staged_script
            except ValueError:
                pass  # script outside repo: submit it in place
        else:
            workdir = repo.root / PurePosixPath(pwd)
            workdir.mkdir(parents=True, exist_ok=True)
            repo.unlock_outputs(opts.outputs)
            submit_script = script_abs

        req = SubmitRequest(
            script_path=submit_script,
            script_args=list(opts.script_args),
            workdir=workdir,
            array_spec=opts.array_spec,
        )
        scheduler_job_id = backend.submit(req)

        cmd_parts = ["sbatch"]
        if opts.array_spec is not None:
            lo, hi = opts.array_spec
            cmd_parts.append(f"--array={lo}-{hi}")
        cmd_parts += [opts.script, *opts.script_args]
        record = ReproRecord(
            cmd=shlex.join(cmd_parts),
            dsid=repo.dataset_id,
            pwd=pwd,
            chain=list(opts.chain),
            inputs=opts.inputs.sorted(),
            outputs=opts.outputs.sorted(),
            slurm_job_id=scheduler_job_id,
            slurm_outputs=[],
        )
        job = ScheduledJob(
            scheduler_job_id=scheduler_job_id,
            record=record,
            outputs=opts.outputs,
            inputs=opts.inputs,
            alt_dir=str(alt_root) if alt_root else None,
            submitted_at=datetime.now(timezone.utc),
            is_array=opts.array_spec is not None,
            state_cache=JobState.PENDING,
            message=opts.message,
        )
        registry.register(job)
        return job


def _copy_back_outputs(repo: GitRepo, alt_root: Path, outputs: PathSet) -> None:
    """Alt-dir reverse staging: declared outputs return to the repository."""
    for entry in outputs:
        src = alt_root / PurePosixPath(entry)
        dst = repo.root / PurePosixPath(entry)
        if src.is_dir():
            for dirpath, _, filenames in os.walk(src):
                for name in filenames:
                    sfile = Path(dirpath) / name
                    rel = sfile.relative_to(src)
                    _atomic_copy_file(sfile, dst / rel)
        elif src.is_file():
            _atomic_copy_file(src, dst)
        # outputs the job never produced: nothing to copy


def _discard_job(repo: GitRepo, job: ScheduledJob) -> None:
    """Throw away whatever a failed job left in the repository tree."""
    repo.restore_paths(job.outputs)
    for artifact in _scheduler_artifacts(job):
        p = repo.root / PurePosixPath(artifact)
        if p.is_file():
            p.unlink()


def _finalize_job(
    repo: GitRepo,
    backend: SchedulerBackend,
    job: ScheduledJob,
    headline_state: JobState,
):
    """Copy back, collect scheduler artifacts, and commit one job.

    Returns (commit_or_NO_CHANGE, message). When the declared outputs are
    bit-identical to HEAD the job yields NO_CHANGE: no commit is made and
    the freshly produced log/metadata files are removed again.
    """
    job_id = job.scheduler_job_id
    record = job.record.copy()
    pwd = PurePosixPath(record.pwd)
    repo_workdir = repo.root / pwd
    repo_workdir.mkdir(parents=True, exist_ok=True)

    alt_root = Path(job.alt_dir) if job.alt_dir else None
    if alt_root is not None:
        _copy_back_outputs(repo, alt_root, job.outputs)

    log_name = LOG_FILE_TEMPLATE.format(job_id=job_id)
    if alt_root is not None:
        staged_log = alt_root / pwd / log_name
        if staged_log.is_file():
            _atomic_copy_file(staged_log, repo_workdir / log_name)

    # Deterministic re-runs must not leave a commit behind (§ no-change
    # contract): check the declared outputs before adding scheduler files.
    repo.annex_convert_paths(job.outputs)
    if not repo.paths_dirty(job.outputs):
        log_file = repo_workdir / log_name
        if log_file.is_file():
            log_file.unlink()
        return NO_CHANGE, None

    extra_outputs = []
    log_file = repo_workdir / log_name
    if log_file.is_file():
        extra_outputs.append(normalize_path(str(pwd / log_name)))
    env_name = ENV_FILE_TEMPLATE.format(job_id=job_id)
    write_metadata_file(backend.capture_metadata(job_id), repo_workdir / env_name)
    extra_outputs.append(normalize_path(str(pwd / env_name)))

    record.outputs = record.outputs + [
        p for p in extra_outputs if p not in record.outputs
    ]
    record.slurm_outputs = extra_outputs
    record.exit = backend.exit_code(job_id)

    headline = slurm_headline(job_id, headline_state.value)
    message = render_record(headline, record, body=job.message)
    commit_paths = job.outputs.union(extra_outputs)
    return repo.commit_paths(commit_paths, message), message


def finish(
    repo: GitRepo,
    registry: JobRegistry,
    backend: SchedulerBackend,
    opts: FinishOptions | None = None,
) -> list[FinishOutcome]:
    """Finalize terminal jobs into commits and release their reservations.

    Pending/running jobs are ignored; failed ones follow the failed-jobs
    policy. Per-job errors never abort the batch. With BRANCHES each job is
    committed on its own ``job-<id>`` branch off the pre-finish HEAD;
    OCTOPUS additionally merges all new branches into one commit.
    """
    opts = opts or FinishOptions()
    outcomes: list[FinishOutcome] = []

    with _verb_lock(repo):
        if opts.job_id is not None:
            job = registry.get(opts.job_id)
            if job is None:
                raise JobNotFound(f"no open job {opts.job_id}")
            jobs = [job]
        else:
            jobs = registry.list_open()  # ascending id: deterministic order

        branch_mode = opts.merge_mode in (MergeMode.BRANCHES, MergeMode.OCTOPUS)
        base = repo.head_commit()
        original_branch = repo.current_branch()
        merge_branches: list[str] = []

        for job in jobs:
            job_id = job.scheduler_job_id
            try:
                status = backend.status(job_id)
                registry.update_state_cache(job_id, status.state)

                if not is_terminal(status.state):
                    outcomes.append(
                        FinishOutcome(job_id, FinishAction.SKIPPED_RUNNING)
                    )
                    continue

                if status.state is not JobState.COMPLETED:
                    if opts.failed_policy is FailedPolicy.ERROR:
                        outcomes.append(
                            FinishOutcome(
                                job_id,
                                FinishAction.ERROR,
                                detail=(
                                    f"job ended {status.state.value}; rerun with "
                                    "--close-failed-jobs or --commit-failed-jobs"
                                ),
                            )
                        )
                        continue
                    if opts.failed_policy is FailedPolicy.CLOSE_FAILED:
                        _discard_job(repo, job)
                        registry.close(job_id, CloseOutcome.DISCARDED)
                        outcomes.append(
                            FinishOutcome(
                                job_id,
                                FinishAction.DISCARDED_FAILED,
                                detail=status.state.value,
                            )
                        )
                        continue
                    # COMMIT_FAILED: fall through, headline carries the state

                branch = f"job-{job_id}"
                if branch_mode:
                    repo.create_job_branch(base, branch)
                    repo.checkout(branch)
                try:
                    result, _ = _finalize_job(repo, backend, job, status.state)
                finally:
                    if branch_mode:
                        repo.checkout(original_branch)

                registry.close(job_id, CloseOutcome.COMMITTED)
                if result is NO_CHANGE:
                    if branch_mode:
                        repo.delete_branch(branch)
                    outcomes.append(FinishOutcome(job_id, FinishAction.NO_CHANGE))
                else:
                    if branch_mode:
                        merge_branches.append(branch)
                    outcomes.append(
                        FinishOutcome(job_id, FinishAction.COMMITTED, commit=result)
                    )
            except BatchVCError as exc:
                outcomes.append(
                    FinishOutcome(job_id, FinishAction.ERROR, detail=str(exc))
                )

        if opts.merge_mode is MergeMode.OCTOPUS and merge_branches:
            if len(merge_branches) == 1:
                repo.merge_branch(merge_branches[0])
            else:
                repo.octopus_merge(
                    merge_branches,
                    f"Merge {len(merge_branches)} batch job branches",
                )

    return outcomes


def _parse_sbatch_cmd(cmd: str) -> tuple[str, list[str], tuple[int, int] | None]:
    """Split a recorded 'sbatch ...' command back into script/args/array."""
    tokens = shlex.split(cmd)
    if not tokens or tokens[0] != "sbatch":
        raise NotASlurmRecord(f"recorded command is not an sbatch call: {cmd!r}")
    tokens = tokens[1:]
    array_spec = None
    while tokens and tokens[0].startswith("--"):
        flag = tokens.pop(0)
        if flag.startswith("--array="):
            lo, _, hi = flag.removeprefix("--array=").partition("-")
            array_spec = (int(lo), int(hi or lo))
        # other recorded sbatch flags are passed through by re-submission
    if not tokens:
        raise NotASlurmRecord(f"recorded command has no job script: {cmd!r}")
    return tokens[0], tokens[1:], array_spec


def reschedule(
    repo: GitRepo,
    registry: JobRegistry,
    backend: SchedulerBackend,
    commit: str,
    alt_dir_root: Path | None = None,
    tasks: list[int] | None = None,
) -> ScheduledJob:
    """Re-execute a recorded job from the current branch state.

    Inputs, outputs, working directory and command come from the commit's
    reproducibility record; script and input contents are taken as they are
    now. The new record's chain gains the originating commit hash.
    """
    if tasks is not None:
        raise ArrayPartialReschedule(
            "array jobs can only be rescheduled as a whole"
        )
    resolved = repo.resolve_commit(commit)
    record = parse_record(repo.read_commit_message(resolved))
    if record is None or record.slurm_job_id is None:
        raise NotASlurmRecord(
            f"commit {commit} carries no scheduler reproducibility record"
        )
    script, args, array_spec = _parse_sbatch_cmd(record.cmd)
    slurm_outputs = set(record.slurm_outputs or [])
    user_outputs = [p for p in record.outputs if p not in slurm_outputs]
    opts = ScheduleOptions(
        outputs=PathSet(user_outputs),
        inputs=PathSet(record.inputs),
        script=script,
        script_args=args,
        pwd=record.pwd,
        alt_dir_root=alt_dir_root,
        array_spec=array_spec,
        chain=list(record.chain) + [resolved],
    )
    return schedule(repo, registry, backend, opts)


def open_workflow(repo_root: Path | str) -> tuple[GitRepo, JobRegistry]:
    """Convenience: repository handle plus its registry."""
    repo = GitRepo(repo_root)
    return repo, open_registry(repo)
