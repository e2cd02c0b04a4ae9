from __future__ import annotations

import os
import stat
from pathlib import Path

import pytest

from batchvc.registry import open_registry
from batchvc.repo import GitRepo, init_repository
from batchvc.scheduler import SimulatorBackend


@pytest.fixture
def repo(tmp_path) -> GitRepo:
    return init_repository(tmp_path / "repo")


@pytest.fixture
def registry(repo):
    return open_registry(repo)


@pytest.fixture
def sim() -> SimulatorBackend:
    return SimulatorBackend()


def write_file(root: Path, relpath: str, data: bytes | str) -> Path:
    p = root / relpath
    p.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        p.write_text(data)
    else:
        p.write_bytes(data)
    return p


def write_script(root: Path, relpath: str, body: str) -> Path:
    """Install an executable sh script (shebang included)."""
    p = write_file(root, relpath, "#!/bin/sh\n" + body)
    p.chmod(p.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return p


class SpyBackend:
    """Wraps a backend and counts submit invocations."""

    def __init__(self, inner):
        self.inner = inner
        self.submit_calls = 0
        self.requests = []

    def submit(self, req):
        self.submit_calls += 1
        self.requests.append(req)
        return self.inner.submit(req)

    def __getattr__(self, name):
        return getattr(self.inner, name)


# one pass/fail line per acceptance criterion after the run
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            verdict = "PASS" if status == "passed" else "FAIL"
            lines.append(f"ACCEPTANCE {verdict}: {name}")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
