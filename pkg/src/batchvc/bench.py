"""Benchmark harness: synthetic workloads timed through schedule and finish.

Each job owns one exclusive directory in a nested jobs/<bucket>/<index>
hierarchy and writes deterministic payloads, so reruns are bit-reproducible
and alt-dir runs commit identical trees. Timings wrap the full verb
invocation with a monotonic clock and land in an analysis-ready CSV.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import BatchVCError, EmptySeries, SchemaMismatch
from .paths import PathSet
from .registry import open_registry
from .repo import GitRepo, init_repository
from .scheduler import JobState, SimulatorBackend, SlurmBackend
from .workflow import FinishAction, FinishOptions, ScheduleOptions, finish, schedule

VALID_OUTPUTS_PER_JOB = (4, 8, 12)
BUCKET_SIZE = 100

CSV_COLUMNS = [
    "phase",
    "job_index",
    "duration_seconds",
    "outputs_per_job",
    "use_alt_dir",
    "files_in_repo_before",
    "backend",
]

PHASE_SCHEDULE = "SCHEDULE"
PHASE_FINISH = "FINISH"

_JOB_SCRIPT = '''#!/usr/bin/env python3
"""Benchmark payload: writes deterministic text and binary files in cwd."""
import hashlib
import sys


def stream(tag: str, n: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < n:
        out += hashlib.sha256(f"{tag}:{counter}".encode()).digest()
        counter += 1
    return bytes(out[:n])


def main() -> int:
    job_index = int(sys.argv[1])
    n_text, n_bin = int(sys.argv[2]), int(sys.argv[3])
    text_bytes, bin_bytes = int(sys.argv[4]), int(sys.argv[5])
    seed = sys.argv[6]
    for k in range(n_text):
        data = stream(f"{seed}:{job_index}:t{k}", text_bytes).hex()[:text_bytes]
        with open(f"out_t{k}.txt", "w") as fh:
            fh.write(data + "\\n")
    for k in range(n_bin):
        # leading NUL guarantees binary classification at any payload size
        data = b"\\x00" + stream(f"{seed}:{job_index}:b{k}", bin_bytes)
        with open(f"out_b{k}.bin", "wb") as fh:
            fh.write(data)
    return 0


if __name__ == "__main__":
    sys.exit(main())
'''


@dataclass(frozen=True)
class WorkloadSpec:
    n_jobs: int
    outputs_per_job: int = 4
    text_payload_bytes: int = 256
    binary_payload_bytes: int = 4096
    use_alt_dir: bool = False
    backend: str = "sim"
    seed: int = 0

    def validate(self) -> None:
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")
        if self.outputs_per_job not in VALID_OUTPUTS_PER_JOB:
            raise ValueError(
                f"outputs_per_job must be one of {VALID_OUTPUTS_PER_JOB}"
            )
        if self.backend not in ("sim", "slurm"):
            raise ValueError(f"unknown backend {self.backend!r}")

    @property
    def generated_files(self) -> int:
        # the scheduler log + metadata file are the two implicit outputs
        return self.outputs_per_job - 2


@dataclass(frozen=True)
class BenchSample:
    phase: str
    job_index: int
    duration_seconds: float
    outputs_per_job: int
    use_alt_dir: bool
    files_in_repo_before: int
    backend: str


def job_directory(index: int) -> str:
    """Exclusive per-job directory, bucketed to avoid giant directories."""
    return f"jobs/{index // BUCKET_SIZE}/{index}"


def rolling_average(values: list[float], window: int) -> list[float]:
    """Trailing windowed mean: out[i] = mean(values[max(0, i-w+1) .. i]).

    Each window is summed directly; a sliding accumulator would be O(n)
    but accumulates cancellation error that a smoothed-zero value exposes.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if not values:
        raise EmptySeries("cannot smooth an empty series")
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(sum(values[lo : i + 1]) / (i + 1 - lo))
    return out


@dataclass(frozen=True)
class HistogramBin:
    lo: float
    hi: float
    count: int


def histogram(values: list[float], bin_width: float) -> list[HistogramBin]:
    """Fixed-width bins [k*w, (k+1)*w); dense between min and max."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    if not values:
        return []
    indices = [math.floor(v / bin_width) for v in values]
    lo_idx, hi_idx = min(indices), max(indices)
    counts = {k: 0 for k in range(lo_idx, hi_idx + 1)}
    for k in indices:
        counts[k] += 1
    return [
        HistogramBin(lo=k * bin_width, hi=(k + 1) * bin_width, count=counts[k])
        for k in range(lo_idx, hi_idx + 1)
    ]


def emit_csv(samples: list[BenchSample], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for s in samples:
            writer.writerow(
                [
                    s.phase,
                    s.job_index,
                    repr(s.duration_seconds),
                    s.outputs_per_job,
                    "true" if s.use_alt_dir else "false",
                    s.files_in_repo_before,
                    s.backend,
                ]
            )


def read_csv(path: Path) -> list[BenchSample]:
    """Parse a harness CSV back; raises SchemaMismatch on a foreign header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        if header != CSV_COLUMNS:
            raise SchemaMismatch(
                f"{path}: header {header!r} does not match {CSV_COLUMNS!r}"
            )
        samples = []
        for row in reader:
            if len(row) != len(CSV_COLUMNS):
                raise SchemaMismatch(f"{path}: short row {row!r}")
            samples.append(
                BenchSample(
                    phase=row[0],
                    job_index=int(row[1]),
                    duration_seconds=float(row[2]),
                    outputs_per_job=int(row[3]),
                    use_alt_dir=row[4] == "true",
                    files_in_repo_before=int(row[5]),
                    backend=row[6],
                )
            )
    return samples


class _WorkloadRun:
    """One spec bound to one repository, steppable for interleaved driving."""

    def __init__(self, spec: WorkloadSpec, repo: GitRepo, alt_dir: Path | None):
        spec.validate()
        if spec.use_alt_dir and alt_dir is None:
            raise ValueError("use_alt_dir requires an alt directory")
        self.spec = spec
        self.repo = repo
        self.alt_dir = Path(alt_dir) if alt_dir else None
        self.registry = open_registry(repo)
        self.backend = (
            SimulatorBackend() if spec.backend == "sim" else SlurmBackend()
        )
        self.samples: list[BenchSample] = []
        self.job_ids: list[int] = []
        self._script_rel = "scripts/bench_job.py"
        self._install_script()

    def _install_script(self) -> None:
        script_abs = self.repo.root / self._script_rel
        script_abs.parent.mkdir(parents=True, exist_ok=True)
        script_abs.write_text(_JOB_SCRIPT)
        script_abs.chmod(0o755)
        self.repo.commit_paths(
            PathSet.of(self._script_rel), "Add benchmark job script\n"
        )

    def _sample(self, phase: str, index: int, duration: float, files_before: int):
        self.samples.append(
            BenchSample(
                phase=phase,
                job_index=index,
                duration_seconds=duration,
                outputs_per_job=self.spec.outputs_per_job,
                use_alt_dir=self.spec.use_alt_dir,
                files_in_repo_before=files_before,
                backend=self.spec.backend,
            )
        )

    def schedule_one(self, index: int) -> None:
        spec = self.spec
        pwd = job_directory(index)
        depth = len(pwd.split("/"))
        script = "../" * depth + self._script_rel
        n_bin = spec.generated_files // 2
        n_text = spec.generated_files - n_bin
        opts = ScheduleOptions(
            outputs=PathSet.of(pwd),
            script=script,
            script_args=[
                str(index),
                str(n_text),
                str(n_bin),
                str(spec.text_payload_bytes),
                str(spec.binary_payload_bytes),
                str(spec.seed),
            ],
            pwd=pwd,
            message="",
            alt_dir_root=self.alt_dir if spec.use_alt_dir else None,
        )
        files_before = self.repo.count_tracked_files()
        t0 = time.perf_counter()
        job = schedule(self.repo, self.registry, self.backend, opts)
        duration = time.perf_counter() - t0
        self.job_ids.append(job.scheduler_job_id)
        self._sample(PHASE_SCHEDULE, index, duration, files_before)

    def wait_all_terminal(self) -> None:
        if isinstance(self.backend, SimulatorBackend):
            for _ in range(1000):
                if self.backend.all_terminal():
                    return
                self.backend.advance(1.0)
            raise BatchVCError("simulator jobs did not reach terminal states")
        while True:
            states = [
                self.backend.status(jid).state for jid in self.job_ids
            ]
            if all(s not in (JobState.PENDING, JobState.RUNNING) for s in states):
                return
            time.sleep(2.0)

    def finish_one(self, index: int) -> None:
        job_id = self.job_ids[index]
        files_before = self.repo.count_tracked_files()
        t0 = time.perf_counter()
        outcomes = finish(
            self.repo, self.registry, self.backend, FinishOptions(job_id=job_id)
        )
        duration = time.perf_counter() - t0
        bad = [
            o
            for o in outcomes
            if o.action not in (FinishAction.COMMITTED, FinishAction.NO_CHANGE)
        ]
        if bad:
            raise BatchVCError(
                f"benchmark job {job_id} did not finalize cleanly: "
                f"{bad[0].action.value} {bad[0].detail}"
            )
        self._sample(PHASE_FINISH, index, duration, files_before)


def run_workload(
    spec: WorkloadSpec,
    repo: GitRepo,
    alt_dir: Path | None = None,
    csv_path: Path | None = None,
) -> list[BenchSample]:
    """Schedule n jobs (timing each), wait, finish each by id (timing each).

    Emits exactly two samples per job. The repository should be freshly
    created for a benchmark series.
    """
    run = _WorkloadRun(spec, repo, alt_dir)
    for i in range(spec.n_jobs):
        run.schedule_one(i)
    run.wait_all_terminal()
    for i in range(spec.n_jobs):
        run.finish_one(i)
    if csv_path is not None:
        emit_csv(run.samples, csv_path)
    return run.samples


def run_workloads(
    specs: list[WorkloadSpec],
    base_dir: Path,
    alt_dir: Path | None = None,
    csv_path: Path | None = None,
) -> list[BenchSample]:
    """Round-robin driver: one fresh repository per spec, interleaved calls."""
    base_dir = Path(base_dir)
    runs = []
    for i, spec in enumerate(specs):
        repo = init_repository(base_dir / f"series-{i}")
        spec_alt = None
        if spec.use_alt_dir:
            spec_alt = (alt_dir or base_dir / "alt") / f"series-{i}"
            spec_alt.mkdir(parents=True, exist_ok=True)
        runs.append(_WorkloadRun(spec, repo, spec_alt))
    max_jobs = max(s.n_jobs for s in specs)
    for i in range(max_jobs):
        for run in runs:
            if i < run.spec.n_jobs:
                run.schedule_one(i)
    for run in runs:
        run.wait_all_terminal()
    for i in range(max_jobs):
        for run in runs:
            if i < run.spec.n_jobs:
                run.finish_one(i)
    samples = [s for run in runs for s in run.samples]
    if csv_path is not None:
        emit_csv(samples, csv_path)
    return samples


def quartile_means(durations: list[float]) -> tuple[float, float]:
    """(first-quartile mean, last-quartile mean) of a series, by position."""
    if not durations:
        raise EmptySeries("no durations")
    q = max(1, len(durations) // 4)
    first = durations[:q]
    last = durations[-q:]
    return sum(first) / len(first), sum(last) / len(last)
