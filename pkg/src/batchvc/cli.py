"""Command-line front end for the schedule / finish / reschedule verbs.

Human-readable chatter goes to stderr; machine-readable ids and tables go
to stdout. Exit codes: 0 success, 1 usage error, 2 conflict refused,
3 backend failure, 4 partial finish.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .bench import WorkloadSpec, emit_csv, quartile_means, run_workload, run_workloads
from .errors import (
    BackendFailure,
    BatchVCError,
    ConflictDetected,
    CorruptRegistry,
    NotTerminal,
    RetrievalFailure,
    SubmitRejected,
    UnknownJob,
)
from .paths import PathSet
from .registry import JobRegistry, open_registry
from .repo import GitRepo, init_repository
from .scheduler import SimScenario, SimulatorBackend, SlurmBackend
from .workflow import (
    FailedPolicy,
    FinishAction,
    FinishOptions,
    MergeMode,
    ScheduleOptions,
    finish,
    reschedule,
    schedule,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFLICT = 2
EXIT_BACKEND = 3
EXIT_PARTIAL = 4

_BACKEND_ENV = "BATCHVC_BACKEND"
_ALT_DIR_ENV = "BATCHVC_ALT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1, not argparse's default 2
        raise UsageError(f"{self.prog}: {message}")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _discover_root(start: Path) -> Path:
    cur = start.resolve()
    for candidate in [cur, *cur.parents]:
        if (candidate / ".git").exists():
            return candidate
    raise UsageError(f"no repository found at or above {start}")


def _open_repo(args) -> tuple[GitRepo, JobRegistry]:
    root = Path(args.repo) if args.repo else _discover_root(Path.cwd())
    repo = GitRepo(root)
    return repo, open_registry(repo)


def _make_backend(args, repo: GitRepo):
    name = args.backend or os.environ.get(_BACKEND_ENV) or "slurm"
    if name == "sim":
        state = repo.git_dir / "batchvc" / "sim.json"
        if state.exists():
            return SimulatorBackend(state_path=state)
        scenario_file = repo.git_dir / "batchvc" / "sim_scenario.json"
        scenario = (
            SimScenario.from_file(scenario_file) if scenario_file.exists() else None
        )
        return SimulatorBackend(scenario=scenario, state_path=state)
    if name == "slurm":
        return SlurmBackend()
    raise UsageError(f"unknown backend {name!r}")


def _relative_pwd(repo: GitRepo) -> str:
    """Job workdir relative to the repo; repo root when invoked from outside."""
    try:
        rel = Path.cwd().resolve().relative_to(repo.root)
    except ValueError:
        return "."
    return str(rel) if str(rel) != "" else "."


# -- verbs -------------------------------------------------------------------


def _cmd_schedule(args) -> int:
    repo, registry = _open_repo(args)
    backend = _make_backend(args, repo)
    array_spec = None
    if args.array:
        lo, _, hi = args.array.partition("-")
        try:
            array_spec = (int(lo), int(hi or lo))
        except ValueError:
            raise UsageError(f"bad --array value {args.array!r}") from None
    alt = args.alt_dir or os.environ.get(_ALT_DIR_ENV)
    opts = ScheduleOptions(
        outputs=PathSet(args.output),
        inputs=PathSet(args.input or []),
        script=args.script,
        script_args=list(args.args),
        pwd=_relative_pwd(repo),
        message=args.message or "",
        alt_dir_root=Path(alt).resolve() if alt else None,
        array_spec=array_spec,
        allow_dirty=args.allow_dirty,
    )
    job = schedule(repo, registry, backend, opts)
    _err(f"scheduled job {job.scheduler_job_id} ({len(job.outputs)} output path(s))")
    print(job.scheduler_job_id)
    return EXIT_OK


_ACTION_ORDER = {
    FinishAction.COMMITTED: 0,
    FinishAction.NO_CHANGE: 0,
    FinishAction.DISCARDED_FAILED: 0,
    FinishAction.SKIPPED_RUNNING: 0,
    FinishAction.ERROR: 1,
}


def _cmd_finish(args) -> int:
    repo, registry = _open_repo(args)
    backend = _make_backend(args, repo)
    if args.close_failed_jobs:
        policy = FailedPolicy.CLOSE_FAILED
    elif args.commit_failed_jobs:
        policy = FailedPolicy.COMMIT_FAILED
    else:
        policy = FailedPolicy.ERROR
    if args.octopus:
        merge_mode = MergeMode.OCTOPUS
    elif args.branches:
        merge_mode = MergeMode.BRANCHES
    else:
        merge_mode = MergeMode.DIRECT
    outcomes = finish(
        repo,
        registry,
        backend,
        FinishOptions(
            job_id=args.slurm_job_id, failed_policy=policy, merge_mode=merge_mode
        ),
    )
    for o in outcomes:
        print(
            f"{o.scheduler_job_id}\t{o.action.value}\t{o.commit or '-'}\t{o.detail}"
        )
    n_err = sum(1 for o in outcomes if o.action is FinishAction.ERROR)
    _err(f"finish: {len(outcomes)} job(s) handled, {n_err} error(s)")
    return EXIT_PARTIAL if n_err else EXIT_OK


def _cmd_reschedule(args) -> int:
    repo, registry = _open_repo(args)
    backend = _make_backend(args, repo)
    alt = args.alt_dir or os.environ.get(_ALT_DIR_ENV)
    job = reschedule(
        repo,
        registry,
        backend,
        args.commit,
        alt_dir_root=Path(alt).resolve() if alt else None,
    )
    _err(f"rescheduled {args.commit[:12]} as job {job.scheduler_job_id}")
    print(job.scheduler_job_id)
    return EXIT_OK


def _cmd_status(args) -> int:
    repo, registry = _open_repo(args)
    jobs = registry.list_open()
    if args.porcelain:
        for job in jobs:
            print(
                f"{job.scheduler_job_id}\t{job.state_cache.value}\t"
                f"{len(job.outputs)}\t{job.submitted_at.isoformat()}"
            )
        return EXIT_OK
    if not jobs:
        _err("no jobs in flight")
        return EXIT_OK
    now = datetime.now(timezone.utc)
    _err(f"{'JOB':>10}  {'STATE':<10} {'OUTPUTS':>8}  AGE")
    for job in jobs:
        age = int((now - job.submitted_at).total_seconds())
        _err(
            f"{job.scheduler_job_id:>10}  {job.state_cache.value:<10} "
            f"{len(job.outputs):>8}  {age}s"
        )
    return EXIT_OK


def _cmd_bench(args) -> int:
    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="batchvc-bench-"))
    workdir.mkdir(parents=True, exist_ok=True)
    backend = args.backend or os.environ.get(_BACKEND_ENV) or "sim"
    specs = [
        WorkloadSpec(
            n_jobs=args.jobs,
            outputs_per_job=n,
            use_alt_dir=bool(args.alt_dir),
            backend=backend,
            seed=args.seed,
        )
        for n in (args.outputs or [4])
    ]
    alt = Path(args.alt_dir).resolve() if args.alt_dir else None
    if len(specs) == 1:
        repo = init_repository(workdir / "series-0")
        samples = run_workload(specs[0], repo, alt_dir=alt)
    else:
        samples = run_workloads(specs, workdir, alt_dir=alt)
    emit_csv(samples, Path(args.csv))
    sched = [s.duration_seconds for s in samples if s.phase == "SCHEDULE"]
    fin = [s.duration_seconds for s in samples if s.phase == "FINISH"]
    first_q, last_q = quartile_means(sched)
    _err(
        f"bench: {len(samples)} samples; schedule total {sum(sched):.2f}s "
        f"(quartile means {first_q:.4f}s -> {last_q:.4f}s); "
        f"finish total {sum(fin):.2f}s"
    )
    print(args.csv)
    return EXIT_OK


def _cmd_sim(args) -> int:
    repo, _ = _open_repo(args)
    if args.sim_cmd == "advance":
        backend = _make_backend_sim(repo)
        backend.advance(args.seconds)
        _err(f"simulator clock now {backend.clock}s")
        return EXIT_OK
    if args.sim_cmd == "scenario":
        dst = repo.git_dir / "batchvc" / "sim_scenario.json"
        dst.parent.mkdir(parents=True, exist_ok=True)
        SimScenario.from_file(Path(args.file))  # validate before installing
        dst.write_text(Path(args.file).read_text())
        _err(f"installed simulator scenario at {dst}")
        return EXIT_OK
    raise UsageError("sim requires a sub-command (advance | scenario)")


def _make_backend_sim(repo: GitRepo) -> SimulatorBackend:
    state = repo.git_dir / "batchvc" / "sim.json"
    if state.exists():
        return SimulatorBackend(state_path=state)
    scenario_file = repo.git_dir / "batchvc" / "sim_scenario.json"
    scenario = (
        SimScenario.from_file(scenario_file) if scenario_file.exists() else None
    )
    return SimulatorBackend(scenario=scenario, state_path=state)


# -- parser ------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(
        prog="batchvc",
        description=(
            "Version-controlled data repositories under concurrent "
            "batch-scheduler jobs."
        ),
    )
    parser.add_argument("--version", action="version", version=f"batchvc {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--repo", metavar="PATH", help="repository root (default: discover from cwd)"
    )
    common.add_argument(
        "--backend",
        choices=("slurm", "sim"),
        help=f"scheduler backend (default: ${_BACKEND_ENV} or slurm)",
    )

    sub = parser.add_subparsers(dest="command", metavar="VERB")

    p = sub.add_parser(
        "schedule",
        parents=[common],
        help="submit a job with output-conflict protection",
    )
    p.add_argument("--input", action="append", metavar="PATH", default=[])
    p.add_argument(
        "--output", action="append", metavar="PATH", required=True,
        help="declared output file or exclusive directory (repeatable)",
    )
    p.add_argument("--alt-dir", metavar="DIR", help="stage the job under DIR")
    p.add_argument("-m", "--message", metavar="TEXT", default="")
    p.add_argument("--array", metavar="LO-HI", help="submit as an array job")
    p.add_argument("--allow-dirty", action="store_true")
    p.add_argument("script", help="job script, passed to the scheduler")
    p.add_argument("args", nargs=argparse.REMAINDER, help="script arguments")
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser(
        "finish",
        parents=[common],
        help="finalize terminal jobs into commits with repro records",
    )
    p.add_argument("--slurm-job-id", type=int, metavar="ID")
    failed = p.add_mutually_exclusive_group()
    failed.add_argument("--close-failed-jobs", action="store_true")
    failed.add_argument("--commit-failed-jobs", action="store_true")
    merge = p.add_mutually_exclusive_group()
    merge.add_argument("--branches", action="store_true")
    merge.add_argument("--octopus", action="store_true")
    p.set_defaults(func=_cmd_finish)

    p = sub.add_parser(
        "reschedule",
        parents=[common],
        help="re-execute the job recorded in a commit",
    )
    p.add_argument("commit", help="commit hash carrying a repro record")
    p.add_argument("--alt-dir", metavar="DIR")
    p.set_defaults(func=_cmd_reschedule)

    p = sub.add_parser("status", parents=[common], help="list in-flight jobs")
    p.add_argument("--porcelain", action="store_true", help="stable tab-separated rows")
    p.set_defaults(func=_cmd_status)

    p = sub.add_parser(
        "bench", parents=[common], help="run the timing benchmark workload"
    )
    p.add_argument("--jobs", type=int, required=True, metavar="N")
    p.add_argument(
        "--outputs", type=int, action="append", choices=(4, 8, 12), metavar="{4|8|12}"
    )
    p.add_argument("--alt-dir", metavar="DIR")
    p.add_argument("--csv", required=True, metavar="FILE")
    p.add_argument("--workdir", metavar="DIR", help="where benchmark repos are created")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("sim", parents=[common], help="drive the simulator backend")
    sim_sub = p.add_subparsers(dest="sim_cmd", metavar="CMD")
    pa = sim_sub.add_parser("advance", parents=[common])
    pa.add_argument("seconds", type=float)
    ps = sim_sub.add_parser("scenario", parents=[common])
    ps.add_argument("file")
    p.set_defaults(func=_cmd_sim, sim_cmd=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ConflictDetected as exc:
        _err(f"refusing to schedule: {exc}")
        return EXIT_CONFLICT
    except (
        BackendFailure,
        SubmitRejected,
        RetrievalFailure,
        UnknownJob,
        NotTerminal,
        CorruptRegistry,
    ) as exc:
        _err(f"backend failure: {exc}")
        return EXIT_BACKEND
    except (BatchVCError, ValueError) as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
