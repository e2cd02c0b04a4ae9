from __future__ import annotations

import json
import subprocess
from pathlib import Path

import pytest

from batchvc.errors import NotTerminal, SubmitRejected, UnknownJob
from batchvc.scheduler import (
    ALLOWED_TRANSITIONS,
    SIM_ID_BASE,
    JobState,
    SimRule,
    SimScenario,
    SimulatorBackend,
    SlurmBackend,
    SubmitRequest,
    aggregate_state,
    is_terminal,
    map_slurm_state,
    write_metadata_file,
)

from .conftest import write_script


def _req(tmp_path: Path, body="echo hi\n", array=None, name="job.sh") -> SubmitRequest:
    script = write_script(tmp_path, name, body)
    return SubmitRequest(script_path=script, workdir=tmp_path, array_spec=array)


def _reachable(a: JobState, b: JobState) -> bool:
    """b is reachable from a through the lifecycle machine (or a == b)."""
    if a == b:
        return True
    frontier = {a}
    seen = set()
    while frontier:
        cur = frontier.pop()
        seen.add(cur)
        for src, dst in ALLOWED_TRANSITIONS:
            if src == cur and dst not in seen:
                if dst == b:
                    return True
                frontier.add(dst)
    return False


class TestStateMachine:
    def test_terminal_states(self):
        for s in (JobState.COMPLETED, JobState.FAILED, JobState.CANCELLED, JobState.TIMEOUT):
            assert is_terminal(s)
        for s in (JobState.PENDING, JobState.RUNNING):
            assert not is_terminal(s)

    def test_aggregate_completed_iff_all_completed(self):
        assert aggregate_state([JobState.COMPLETED] * 3) is JobState.COMPLETED
        assert aggregate_state([JobState.COMPLETED, JobState.FAILED]) is JobState.FAILED
        assert aggregate_state([JobState.COMPLETED, JobState.RUNNING]) is JobState.RUNNING
        assert aggregate_state([JobState.PENDING, JobState.COMPLETED]) is JobState.PENDING


class TestSubmit:
    def test_ids_monotonic_from_base(self, tmp_path, sim):
        ids = [sim.submit(_req(tmp_path)) for _ in range(3)]
        assert ids == [SIM_ID_BASE, SIM_ID_BASE + 1, SIM_ID_BASE + 2]

    def test_configurable_id_base(self, tmp_path):
        sim = SimulatorBackend(id_base=11452054)
        assert sim.submit(_req(tmp_path)) == 11452054

    def test_nonexistent_script_rejected(self, tmp_path, sim):
        req = SubmitRequest(script_path=tmp_path / "missing.sh", workdir=tmp_path)
        with pytest.raises(SubmitRejected):
            sim.submit(req)

    def test_missing_workdir_rejected(self, tmp_path, sim):
        script = write_script(tmp_path, "s.sh", "true\n")
        with pytest.raises(SubmitRejected):
            sim.submit(SubmitRequest(script_path=script, workdir=tmp_path / "nope"))

    def test_array_submit_one_parent_many_tasks(self, tmp_path, sim):
        job_id = sim.submit(_req(tmp_path, array=(0, 9)))
        sim.advance(1.0)
        status = sim.status(job_id)
        assert status.task_states is not None
        assert len(status.task_states) == 10
        assert [t for t, _ in status.task_states] == list(range(10))


class TestSimulatorClock:
    SCENARIO = SimScenario(default=SimRule(pending_s=1.0, running_s=2.0))

    def test_pending_immediately_after_submit(self, tmp_path):
        sim = SimulatorBackend(scenario=self.SCENARIO)
        job_id = sim.submit(_req(tmp_path))
        assert sim.status(job_id).state is JobState.PENDING

    def test_half_second_still_pending(self, tmp_path):
        sim = SimulatorBackend(scenario=self.SCENARIO)
        job_id = sim.submit(_req(tmp_path))
        sim.advance(0.5)
        assert sim.status(job_id).state is JobState.PENDING

    def test_mid_window_running(self, tmp_path):
        sim = SimulatorBackend(scenario=self.SCENARIO)
        job_id = sim.submit(_req(tmp_path))
        sim.advance(1.5)
        assert sim.status(job_id).state is JobState.RUNNING

    def test_after_four_seconds_completed_with_outputs(self, tmp_path):
        sim = SimulatorBackend(scenario=self.SCENARIO)
        job_id = sim.submit(_req(tmp_path, body="echo payload > out.txt\n"))
        sim.advance(4.0)
        assert sim.status(job_id).state is JobState.COMPLETED
        assert (tmp_path / "out.txt").read_text() == "payload\n"
        assert (tmp_path / f"log.slurm-{job_id}.out").exists()

    def test_injected_cancel_mid_run_no_outputs(self, tmp_path):
        scenario = SimScenario(
            default=SimRule(pending_s=1.0, running_s=2.0, cancel_at_s=1.5)
        )
        sim = SimulatorBackend(scenario=scenario)
        job_id = sim.submit(_req(tmp_path, body="echo boo > out.txt\n"))
        sim.advance(4.0)
        assert sim.status(job_id).state is JobState.CANCELLED
        assert not (tmp_path / "out.txt").exists()

    def test_injected_failure_skips_execution(self, tmp_path):
        scenario = SimScenario(default=SimRule(final_state=JobState.FAILED))
        sim = SimulatorBackend(scenario=scenario)
        job_id = sim.submit(_req(tmp_path, body="echo boo > out.txt\n"))
        sim.advance(1.0)
        assert sim.status(job_id).state is JobState.FAILED
        assert not (tmp_path / "out.txt").exists()

    def test_nonzero_exit_becomes_failed(self, tmp_path):
        sim = SimulatorBackend()
        job_id = sim.submit(_req(tmp_path, body="exit 3\n"))
        sim.advance(1.0)
        assert sim.status(job_id).state is JobState.FAILED
        assert sim.exit_code(job_id) == 3

    def test_unknown_job(self, sim):
        with pytest.raises(UnknownJob):
            sim.status(424242)

    def test_negative_advance_rejected(self, sim):
        with pytest.raises(ValueError):
            sim.advance(-1.0)

    def test_observed_transitions_respect_machine(self, tmp_path):
        scenario = SimScenario(
            rules=[
                SimRule(order=1, pending_s=0.4, running_s=0.8, final_state=JobState.TIMEOUT),
                SimRule(order=2, pending_s=0.2, cancel_at_s=0.1),
            ],
            default=SimRule(pending_s=0.3, running_s=0.5),
        )
        sim = SimulatorBackend(scenario=scenario)
        ids = [sim.submit(_req(tmp_path, name=f"j{i}.sh")) for i in range(3)]
        history = {jid: [sim.status(jid).state] for jid in ids}
        for _ in range(30):
            sim.advance(0.1)
            for jid in ids:
                history[jid].append(sim.status(jid).state)
        for jid, states in history.items():
            for a, b in zip(states, states[1:]):
                assert _reachable(a, b), f"illegal observed transition {a} -> {b}"
        assert history[ids[1]][-1] is JobState.TIMEOUT
        assert history[ids[2]][-1] is JobState.CANCELLED


class TestArrayInjection:
    def test_failed_task_breaks_aggregate(self, tmp_path):
        scenario = SimScenario(
            default=SimRule(task_final_states={3: JobState.FAILED})
        )
        sim = SimulatorBackend(scenario=scenario)
        job_id = sim.submit(_req(tmp_path, array=(0, 9)))
        sim.advance(1.0)
        status = sim.status(job_id)
        assert status.state is not JobState.COMPLETED
        assert status.state is JobState.FAILED
        states = dict(status.task_states)
        assert states[3] is JobState.FAILED
        assert all(states[t] is JobState.COMPLETED for t in range(10) if t != 3)

    def test_tasks_see_array_task_id(self, tmp_path):
        sim = SimulatorBackend()
        job_id = sim.submit(
            _req(tmp_path, body='echo "task=$SLURM_ARRAY_TASK_ID" >> tasks.txt\n', array=(0, 3))
        )
        sim.advance(1.0)
        lines = (tmp_path / "tasks.txt").read_text().splitlines()
        assert lines == [f"task={t}" for t in range(4)]


class TestDeterminism:
    def test_identical_sequences_identical_histories(self, tmp_path):
        scenario = SimScenario(default=SimRule(pending_s=0.3, running_s=0.7))

        def run(workdir: Path):
            workdir.mkdir()
            sim = SimulatorBackend(scenario=scenario)
            jid = sim.submit(_req(workdir, body="echo deterministic > out.txt\n"))
            states = []
            for _ in range(15):
                sim.advance(0.1)
                states.append(sim.status(jid).state)
            return states, (workdir / "out.txt").read_bytes(), sim.exit_code(jid)

        a = run(tmp_path / "a")
        b = run(tmp_path / "b")
        assert a == b


class TestMetadata:
    def test_contains_job_id(self, tmp_path):
        sim = SimulatorBackend(id_base=11452054)
        job_id = sim.submit(_req(tmp_path))
        sim.advance(1.0)
        meta = sim.capture_metadata(job_id)
        assert meta["SLURM_JOB_ID"] == "11452054"

    def test_pending_job_not_terminal(self, tmp_path):
        sim = SimulatorBackend(scenario=SimScenario(default=SimRule(pending_s=5.0)))
        job_id = sim.submit(_req(tmp_path))
        with pytest.raises(NotTerminal):
            sim.capture_metadata(job_id)

    def test_metadata_file_sorted_keys_round_trip(self, tmp_path, sim):
        job_id = sim.submit(_req(tmp_path))
        sim.advance(1.0)
        meta = sim.capture_metadata(job_id)
        out = tmp_path / "env.json"
        write_metadata_file(meta, out)
        text = out.read_text()
        assert text.endswith("\n")
        parsed = json.loads(text)
        assert parsed == meta
        assert list(parsed) == sorted(parsed)  # json preserves file order

    def test_array_metadata_has_task_count(self, tmp_path, sim):
        job_id = sim.submit(_req(tmp_path, array=(0, 9)))
        sim.advance(1.0)
        assert sim.capture_metadata(job_id)["SLURM_ARRAY_TASK_COUNT"] == "10"


class TestPersistence:
    def test_state_survives_reload(self, tmp_path):
        state = tmp_path / "sim.json"
        sim1 = SimulatorBackend(
            scenario=SimScenario(default=SimRule(pending_s=1.0, running_s=1.0)),
            state_path=state,
        )
        job_id = sim1.submit(_req(tmp_path))
        sim1.advance(0.5)

        sim2 = SimulatorBackend(state_path=state)
        assert sim2.status(job_id).state is JobState.PENDING
        sim2.advance(3.0)
        assert sim2.status(job_id).state is JobState.COMPLETED

        sim3 = SimulatorBackend(state_path=state)
        assert sim3.status(job_id).state is JobState.COMPLETED
        assert sim3.submit_count() == 1


class TestSlurmStateMapping:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("COMPLETED", JobState.COMPLETED),
            ("PENDING", JobState.PENDING),
            ("RUNNING", JobState.RUNNING),
            ("FAILED", JobState.FAILED),
            ("TIMEOUT", JobState.TIMEOUT),
            ("CANCELLED", JobState.CANCELLED),
            ("CANCELLED by 51234", JobState.CANCELLED),
            ("CANCELLED+", JobState.CANCELLED),
            ("NODE_FAIL", JobState.FAILED),
            ("OUT_OF_MEMORY", JobState.FAILED),
            ("PREEMPTED", JobState.FAILED),
            ("REQUEUED", JobState.PENDING),
            ("SUSPENDED", JobState.RUNNING),
        ],
    )
    def test_mapping(self, raw, expected):
        assert map_slurm_state(raw) is expected


class _FakeRuns:
    """Canned subprocess results keyed by the leading command word."""

    def __init__(self, responses):
        self.responses = responses
        self.calls = []

    def __call__(self, cmd, cwd=None):
        self.calls.append(cmd)
        stdout, code = self.responses[Path(cmd[0]).name]
        return subprocess.CompletedProcess(cmd, returncode=code, stdout=stdout, stderr="")


class TestSlurmBackend:
    def test_submit_parses_job_id(self, tmp_path, monkeypatch):
        backend = SlurmBackend()
        fake = _FakeRuns({"sbatch": ("Submitted batch job 987654\n", 0)})
        monkeypatch.setattr(backend, "_run", fake)
        job_id = backend.submit(_req(tmp_path))
        assert job_id == 987654
        assert "--output" in fake.calls[0]

    def test_submit_rejection(self, tmp_path, monkeypatch):
        backend = SlurmBackend()
        fake = _FakeRuns({"sbatch": ("", 1)})
        monkeypatch.setattr(backend, "_run", fake)
        with pytest.raises(SubmitRejected):
            backend.submit(_req(tmp_path))

    def test_status_parses_accounting_output(self, monkeypatch):
        backend = SlurmBackend()
        fake = _FakeRuns(
            {"sacct": ("123|COMPLETED\n123.batch|COMPLETED\n123.extern|COMPLETED\n", 0)}
        )
        monkeypatch.setattr(backend, "_run", fake)
        assert backend.status(123).state is JobState.COMPLETED

    def test_status_aggregates_array_rows(self, monkeypatch):
        backend = SlurmBackend()
        fake = _FakeRuns(
            {"sacct": ("77_0|COMPLETED\n77_1|FAILED\n77_0.batch|COMPLETED\n", 0)}
        )
        monkeypatch.setattr(backend, "_run", fake)
        status = backend.status(77)
        assert status.state is JobState.FAILED
        assert status.task_states == [
            (0, JobState.COMPLETED),
            (1, JobState.FAILED),
        ]

    def test_exit_code_parse(self, monkeypatch):
        backend = SlurmBackend()
        fake = _FakeRuns({"sacct": ("55|1:0\n", 0)})
        monkeypatch.setattr(backend, "_run", fake)
        assert backend.exit_code(55) == 1
