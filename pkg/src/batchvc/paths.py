"""Normalized repository-relative paths and their conflict semantics.

Two paths conflict iff they are equal or one is a whole-segment ancestor
directory of the other ("a/b" conflicts with "a/b/c" but not with "a/bc").
The repository root "." is an ancestor of everything.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import PurePosixPath
from typing import Iterable, Iterator


def normalize_path(path: str) -> str:
    """Normalize to a repository-relative, forward-slash path.

    Collapses "." segments, strips trailing separators, rejects absolute
    paths and ".." segments. "." (the repo root) is allowed.
    """
    if not isinstance(path, str):
        raise TypeError(f"path must be str, got {type(path).__name__}")
    raw = path.strip().replace("\\", "/")
    if not raw:
        raise ValueError("empty path")
    if raw.startswith("/"):
        raise ValueError(f"absolute path not allowed: {path!r}")
    parts = [p for p in raw.split("/") if p not in ("", ".")]
    if any(p == ".." for p in parts):
        raise ValueError(f"'..' segments not allowed: {path!r}")
    return "/".join(parts) if parts else "."


def paths_conflict(a: str, b: str) -> bool:
    """True iff the (normalized) paths are equal or segment-wise nested."""
    if a == b:
        return True
    if a == "." or b == ".":
        return True
    return a.startswith(b + "/") or b.startswith(a + "/")


@dataclass(frozen=True)
class Conflict:
    """One offending path pair: what was requested vs what an open job owns."""

    scheduler_job_id: int
    requested: str
    owned: str


@dataclass(frozen=True)
class PathSet:
    """Immutable set of normalized repository-relative paths."""

    entries: frozenset[str]

    def __init__(self, paths: Iterable[str] = ()):
        object.__setattr__(
            self, "entries", frozenset(normalize_path(p) for p in paths)
        )

    @classmethod
    def of(cls, *paths: str) -> "PathSet":
        return cls(paths)

    def __iter__(self) -> Iterator[str]:
        return iter(self.sorted())

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __contains__(self, path: str) -> bool:
        return normalize_path(path) in self.entries

    def sorted(self) -> list[str]:
        return sorted(self.entries)

    def union(self, other: "PathSet | Iterable[str]") -> "PathSet":
        other_entries = other.entries if isinstance(other, PathSet) else other
        return PathSet([*self.entries, *other_entries])

    def conflicting_pairs(self, other: "PathSet") -> list[tuple[str, str]]:
        """All (mine, theirs) pairs that violate exclusivity."""
        return [
            (a, b)
            for a in self.sorted()
            for b in other.sorted()
            if paths_conflict(a, b)
        ]

    def relative_to_root(self, root) -> list:
        """Absolute paths of the entries under a filesystem root."""
        return [root / PurePosixPath(p) for p in self.sorted()]


EMPTY_PATHSET = PathSet(())
