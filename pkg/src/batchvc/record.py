"""Render and parse the reproducibility record embedded in commit messages.

The record is a JSON object between two fixed sentinel lines. Key order is
ascending lexicographic and indentation is a single space, so the block is
stable enough to diff and to parse back mechanically. Unknown keys survive a
parse/render round trip untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

from .errors import InvalidRecord, MalformedRecord

SENTINEL_BEGIN = "=== Do not change lines below ==="
SENTINEL_END = "^^^ Do not change lines above ^^^"

SLURM_HEADLINE_TAG = "[DATALAD SLURM RUN]"

_KNOWN_KEYS = (
    "chain",
    "cmd",
    "dsid",
    "exit",
    "extra_inputs",
    "inputs",
    "outputs",
    "pwd",
    "slurm_job_id",
    "slurm_outputs",
)


@dataclass
class ReproRecord:
    """Machine-actionable description of one recorded command execution.

    ``slurm_job_id``/``slurm_outputs`` are present for scheduler jobs and
    absent for plain run records; ``exit`` is recorded when the backend
    knows the exit code. ``extra`` holds unknown keys found while parsing,
    preserved verbatim for forward compatibility.
    """

    cmd: str
    dsid: str
    pwd: str = "."
    chain: list[str] = field(default_factory=list)
    inputs: list[str] = field(default_factory=list)
    extra_inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    exit: int | None = None
    slurm_job_id: int | None = None
    slurm_outputs: list[str] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.cmd:
            raise InvalidRecord("cmd must be non-empty")
        if not self.dsid:
            raise InvalidRecord("dsid must be non-empty")
        if self.pwd.startswith("/"):
            raise InvalidRecord(f"pwd must be relative, got {self.pwd!r}")
        if self.slurm_job_id is not None:
            if self.slurm_outputs is None:
                raise InvalidRecord("slurm_job_id present but slurm_outputs missing")
            missing = [p for p in self.slurm_outputs if p not in self.outputs]
            if missing:
                raise InvalidRecord(
                    f"slurm_outputs entries not listed in outputs: {missing}"
                )
        elif self.slurm_outputs is not None:
            raise InvalidRecord("slurm_outputs present without slurm_job_id")
        overlap = set(self.extra) & set(_KNOWN_KEYS)
        if overlap:
            raise InvalidRecord(f"extra keys shadow record fields: {sorted(overlap)}")

    def to_payload(self) -> dict[str, Any]:
        """JSON-ready dict; optional fields are omitted when unset."""
        payload: dict[str, Any] = {
            "chain": list(self.chain),
            "cmd": self.cmd,
            "dsid": self.dsid,
            "extra_inputs": list(self.extra_inputs),
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "pwd": self.pwd,
        }
        if self.exit is not None:
            payload["exit"] = self.exit
        if self.slurm_job_id is not None:
            payload["slurm_job_id"] = self.slurm_job_id
            payload["slurm_outputs"] = list(self.slurm_outputs or [])
        payload.update(self.extra)
        return payload

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "ReproRecord":
        if "cmd" not in payload or "dsid" not in payload:
            raise MalformedRecord("record JSON lacks required keys 'cmd'/'dsid'")
        extra = {k: v for k, v in payload.items() if k not in _KNOWN_KEYS}
        return cls(
            cmd=payload["cmd"],
            dsid=payload["dsid"],
            pwd=payload.get("pwd", "."),
            chain=list(payload.get("chain", [])),
            inputs=list(payload.get("inputs", [])),
            extra_inputs=list(payload.get("extra_inputs", [])),
            outputs=list(payload.get("outputs", [])),
            exit=payload.get("exit"),
            slurm_job_id=payload.get("slurm_job_id"),
            slurm_outputs=(
                list(payload["slurm_outputs"])
                if payload.get("slurm_outputs") is not None
                else None
            ),
            extra=extra,
        )

    def copy(self) -> "ReproRecord":
        return replace(
            self,
            chain=list(self.chain),
            inputs=list(self.inputs),
            extra_inputs=list(self.extra_inputs),
            outputs=list(self.outputs),
            slurm_outputs=list(self.slurm_outputs) if self.slurm_outputs is not None else None,
            extra=dict(self.extra),
        )


def slurm_headline(scheduler_job_id: int, state_name: str) -> str:
    """Standard headline for scheduler-job commits, e.g. '... job 7: Completed'."""
    return f"{SLURM_HEADLINE_TAG} Slurm job {scheduler_job_id}: {state_name.title()}"


def render_record(headline: str, record: ReproRecord, body: str = "") -> str:
    """Compose a full commit message carrying the record.

    Layout: headline, blank line, optional body paragraph, the sentinel-framed
    JSON block. Returns the message with a trailing newline.
    """
    if not headline or "\n" in headline:
        raise InvalidRecord("headline must be a single non-empty line")
    record.validate()
    block = json.dumps(
        record.to_payload(), indent=1, sort_keys=True, ensure_ascii=False
    )
    parts = [headline, ""]
    if body:
        parts += [body.rstrip("\n"), ""]
    parts += [SENTINEL_BEGIN, block, SENTINEL_END]
    return "\n".join(parts) + "\n"


NOT_A_RECORD = None


def parse_record(message: str) -> ReproRecord | None:
    """Extract the record from a commit message.

    Returns None (NOT_A_RECORD) when the sentinel lines are absent. Raises
    MalformedRecord when the sentinels are there but the JSON is not valid.
    Leading indentation (e.g. from pasted ``git log`` output) is tolerated.
    """
    # split on "\n" only: unicode line separators may legally occur raw
    # inside JSON strings and must not break the block apart
    lines = message.split("\n")
    begin = end = None
    for i, line in enumerate(lines):
        stripped = line.strip()
        if begin is None and stripped == SENTINEL_BEGIN:
            begin = i
        elif begin is not None and stripped == SENTINEL_END:
            end = i
            break
    if begin is None or end is None:
        return NOT_A_RECORD
    blob = "\n".join(lines[begin + 1 : end])
    try:
        payload = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"record JSON does not parse: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedRecord("record JSON is not an object")
    return ReproRecord.from_payload(payload)
