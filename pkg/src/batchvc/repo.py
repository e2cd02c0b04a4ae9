"""Content-versioned repository primitives on top of the git CLI.

Large/binary files ("annexed") keep only a symlink in version control; the
content lives in a per-clone object store under the git metadata directory,
addressed by content hash. Text files are tracked normally. All mutating
git invocations run with the repository root as working directory.
"""

from __future__ import annotations

import hashlib
import logging
import os
import shutil
import subprocess
import sys
import tempfile
import uuid
from dataclasses import dataclass
from enum import Enum
from pathlib import Path, PurePosixPath

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import (
    BackendFailure,
    BranchExists,
    MergeConflict,
    MissingInput,
    PartialAddFailure,
    RetrievalFailure,
    UnknownCommit,
)
from .paths import PathSet, normalize_path

logger = logging.getLogger(__name__)

CONFIG_RELPATH = ".batchvc/config.toml"
ANNEX_SUBDIR = "batchvc/annex"

DEFAULT_SIZE_THRESHOLD = 1024 * 1024
BINARY_SNIFF_BYTES = 8192


class FileClass(Enum):
    TRACKED_TEXT = "tracked_text"
    ANNEXED = "annexed"


class _NoChange:
    __slots__ = ()

    def __repr__(self) -> str:
        return "NO_CHANGE"

    def __bool__(self) -> bool:
        return False


#: Distinct success value: the working tree already matched HEAD.
NO_CHANGE = _NoChange()


@dataclass(frozen=True)
class RepositoryHandle:
    root_path: Path
    dataset_id: str


@dataclass(frozen=True)
class RetrievalReport:
    path: str
    was_fetched: bool


@dataclass(frozen=True)
class AnnexConfig:
    """File-classification settings, overridable via .batchvc/config.toml."""

    size_threshold_bytes: int = DEFAULT_SIZE_THRESHOLD
    sources: tuple[Path, ...] = ()

    @classmethod
    def load(cls, root: Path) -> "AnnexConfig":
        cfg_path = root / CONFIG_RELPATH
        if not cfg_path.is_file():
            return cls()
        with open(cfg_path, "rb") as fh:
            data = tomllib.load(fh)
        annex = data.get("annex", {})
        return cls(
            size_threshold_bytes=int(
                annex.get("size_threshold_bytes", DEFAULT_SIZE_THRESHOLD)
            ),
            sources=tuple(Path(p) for p in annex.get("sources", [])),
        )


def classify_content(head: bytes, size: int, threshold: int) -> FileClass:
    """Pure classification rule: same bytes + same config -> same class."""
    if size > threshold:
        return FileClass.ANNEXED
    if b"\x00" in head:
        return FileClass.ANNEXED
    return FileClass.TRACKED_TEXT


class GitRepo:
    """Handle on one repository clone.

    Mutating operations assume external serialization (the workflow lock);
    read-only operations are safe concurrently.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root).resolve()
        if not (self.root / ".git").exists():
            raise BackendFailure(f"not a repository: {self.root}")
        git_dir = self._git("rev-parse", "--absolute-git-dir").stdout.strip()
        self.git_dir = Path(git_dir)
        self.config = AnnexConfig.load(self.root)

    # -- plumbing ----------------------------------------------------------

    def _git(self, *args: str, check: bool = True) -> subprocess.CompletedProcess:
        proc = subprocess.run(
            ["git", *args],
            cwd=self.root,
            capture_output=True,
            text=True,
        )
        if check and proc.returncode != 0:
            raise BackendFailure(
                f"git {' '.join(args[:2])} failed (exit {proc.returncode})",
                stdout=proc.stdout,
                stderr=proc.stderr,
            )
        return proc

    @property
    def dataset_id(self) -> str:
        proc = self._git("config", "--local", "batchvc.dsid", check=False)
        dsid = proc.stdout.strip()
        if not dsid:
            dsid = str(uuid.uuid4())
            self._git("config", "--local", "batchvc.dsid", dsid)
        return dsid

    @property
    def handle(self) -> RepositoryHandle:
        return RepositoryHandle(root_path=self.root, dataset_id=self.dataset_id)

    def reload_config(self) -> None:
        self.config = AnnexConfig.load(self.root)

    # -- annex object store --------------------------------------------------

    @property
    def annex_store(self) -> Path:
        return self.git_dir / ANNEX_SUBDIR

    def _object_path(self, key: str, store: Path | None = None) -> Path:
        return (store or self.annex_store) / key[:2] / key

    @staticmethod
    def _hash_file(path: Path) -> str:
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        return h.hexdigest()

    def is_annex_pointer(self, abs_path: Path) -> bool:
        if not abs_path.is_symlink():
            return False
        return ANNEX_SUBDIR in os.readlink(abs_path).replace(os.sep, "/")

    def _pointer_object(self, abs_path: Path) -> Path:
        target = os.readlink(abs_path)
        return (abs_path.parent / target).resolve() if not os.path.isabs(target) else Path(target)

    def content_present(self, relpath: str) -> bool:
        abs_path = self.root / PurePosixPath(normalize_path(relpath))
        if not self.is_annex_pointer(abs_path):
            return abs_path.exists()
        return self._pointer_object(abs_path).exists()

    def classify_file(self, abs_path: Path) -> FileClass:
        size = abs_path.stat().st_size
        with open(abs_path, "rb") as fh:
            head = fh.read(BINARY_SNIFF_BYTES)
        return classify_content(head, size, self.config.size_threshold_bytes)

    def _annex_file(self, abs_path: Path) -> None:
        """Move content into the object store and leave a relative symlink."""
        key = self._hash_file(abs_path)
        obj = self._object_path(key)
        if obj.exists():
            abs_path.unlink()
        else:
            obj.parent.mkdir(parents=True, exist_ok=True)
            os.replace(abs_path, obj)
            obj.chmod(0o444)
        target = os.path.relpath(obj, start=abs_path.parent)
        os.symlink(target, abs_path)

    def _unlock_file(self, abs_path: Path) -> None:
        obj = self._pointer_object(abs_path)
        if not obj.exists():
            raise BackendFailure(
                f"cannot unlock {abs_path}: content not locally present"
            )
        abs_path.unlink()
        shutil.copyfile(obj, abs_path)
        abs_path.chmod(0o644)

    def drop_content(self, relpath: str) -> None:
        """Remove local content of an annexed file (the pointer stays).

        Refuses when no configured source holds a copy, mirroring the
        safety behavior of annex-style tools.
        """
        abs_path = self.root / PurePosixPath(normalize_path(relpath))
        if not self.is_annex_pointer(abs_path):
            raise BackendFailure(f"not an annexed file: {relpath}")
        obj = self._pointer_object(abs_path)
        if not obj.exists():
            return
        key = obj.name
        if not any(self._object_path(key, src).exists() for src in self.config.sources):
            raise BackendFailure(
                f"refusing to drop {relpath}: no configured source holds a copy"
            )
        obj.chmod(0o644)
        obj.unlink()

    def _fetch_object(self, key: str) -> bool:
        for src in self.config.sources:
            cand = self._object_path(key, src)
            if cand.exists():
                obj = self._object_path(key)
                obj.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(cand, obj)
                obj.chmod(0o444)
                return True
        return False

    # -- queries ----------------------------------------------------------------

    def tracked_files(self, prefix: str = ".") -> list[str]:
        out = self._git("ls-files", "-z", "--", prefix).stdout
        return [p for p in out.split("\0") if p]

    def count_tracked_files(self) -> int:
        return len(self.tracked_files())

    def status_entries(self, paths: PathSet | None = None) -> list[tuple[str, str]]:
        """(XY code, path) pairs from porcelain status, untracked expanded."""
        args = ["status", "--porcelain=v1", "-z", "-uall"]
        if paths is not None:
            args += ["--", *paths.sorted()]
        out = self._git(*args).stdout
        tokens = out.split("\0")
        entries = []
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            if not tok:
                i += 1
                continue
            code, path = tok[:2], tok[3:]
            entries.append((code, path))
            if code[0] in "RC":
                i += 1  # consume the rename/copy origin path
            i += 1
        return entries

    def paths_dirty(self, paths: PathSet) -> bool:
        return bool(self.status_entries(paths))

    def head_commit(self) -> str:
        return self._git("rev-parse", "HEAD").stdout.strip()

    def head_tree(self) -> str:
        return self._git("rev-parse", "HEAD^{tree}").stdout.strip()

    def current_branch(self) -> str:
        return self._git("rev-parse", "--abbrev-ref", "HEAD").stdout.strip()

    def resolve_commit(self, ref: str) -> str:
        proc = self._git("rev-parse", "--verify", "--quiet", f"{ref}^{{commit}}", check=False)
        if proc.returncode != 0:
            raise UnknownCommit(f"cannot resolve commit {ref!r}")
        return proc.stdout.strip()

    def parents_of(self, commit: str) -> list[str]:
        commit = self.resolve_commit(commit)
        out = self._git("log", "-1", "--format=%P", commit).stdout.strip()
        return out.split() if out else []

    def commit_count(self, ref: str = "HEAD") -> int:
        return int(self._git("rev-list", "--count", ref).stdout.strip())

    def list_branches(self) -> list[str]:
        out = self._git(
            "for-each-ref", "refs/heads", "--format=%(refname:short)"
        ).stdout
        return [b for b in out.splitlines() if b]

    def branch_exists(self, name: str) -> bool:
        proc = self._git(
            "show-ref", "--verify", "--quiet", f"refs/heads/{name}", check=False
        )
        return proc.returncode == 0

    # -- spec operations ----------------------------------------------------------

    def ensure_inputs_present(self, inputs: PathSet) -> list[RetrievalReport]:
        """Make annexed input content locally available; report per file."""
        report: list[RetrievalReport] = []
        for entry in inputs:
            files = self.tracked_files(entry)
            if not files:
                raise MissingInput(f"input path is not tracked: {entry!r}")
            for relpath in files:
                abs_path = self.root / PurePosixPath(relpath)
                if not self.is_annex_pointer(abs_path):
                    report.append(RetrievalReport(relpath, was_fetched=False))
                    continue
                obj = self._pointer_object(abs_path)
                if obj.exists():
                    report.append(RetrievalReport(relpath, was_fetched=False))
                elif self._fetch_object(obj.name):
                    report.append(RetrievalReport(relpath, was_fetched=True))
                else:
                    raise RetrievalFailure(
                        f"content for {relpath!r} unavailable locally and in "
                        f"{len(self.config.sources)} configured source(s)"
                    )
        return report

    def unlock_outputs(self, outputs: PathSet) -> None:
        """Make existing annexed files among *outputs* writable."""
        for entry in outputs:
            abs_path = self.root / PurePosixPath(entry)
            if self.is_annex_pointer(abs_path):
                self._unlock_file(abs_path)
            elif abs_path.is_dir():
                for relpath in self.tracked_files(entry):
                    candidate = self.root / PurePosixPath(relpath)
                    if self.is_annex_pointer(candidate):
                        self._unlock_file(candidate)
            # nonexistent paths and plain files: no-op

    def annex_convert_paths(self, paths: PathSet) -> None:
        """Apply the file-class rule to work-tree files beneath *paths*."""
        for entry in paths:
            base = self.root / PurePosixPath(entry)
            for abs_path in self._worktree_files(base):
                if self.classify_file(abs_path) is FileClass.ANNEXED:
                    self._annex_file(abs_path)

    def _worktree_files(self, base: Path):
        if base.is_symlink() or base.is_file():
            if not base.is_symlink():
                yield base
            return
        if not base.is_dir():
            return
        for dirpath, dirnames, filenames in os.walk(base):
            dirnames[:] = [d for d in dirnames if d != ".git"]
            for name in filenames:
                p = Path(dirpath) / name
                if not p.is_symlink() and p.is_file():
                    yield p

    def commit_paths(self, paths: PathSet, message: str) -> str | _NoChange:
        """Stage and commit changes under *paths*; NO_CHANGE if tree == HEAD.

        Binary/configured files become annexed entries first. The message is
        stored verbatim (byte-exact round trip via read_commit_message).
        """
        if not message:
            raise ValueError("commit message must be non-empty")
        self.annex_convert_paths(paths)
        addable = [
            e
            for e in paths
            if (self.root / PurePosixPath(e)).exists()
            or (self.root / PurePosixPath(e)).is_symlink()
            or self.tracked_files(e)
        ]
        if addable:
            proc = self._git("add", "-A", "--", *addable, check=False)
            if proc.returncode != 0:
                self._git("reset", "-q", check=False)
                raise PartialAddFailure(
                    "could not stage all paths",
                    stdout=proc.stdout,
                    stderr=proc.stderr,
                )
        staged = self._git("diff", "--cached", "--quiet", check=False)
        if staged.returncode == 0:
            return NO_CHANGE
        if staged.returncode != 1:
            raise BackendFailure(
                "diff --cached failed", stdout=staged.stdout, stderr=staged.stderr
            )
        with tempfile.NamedTemporaryFile(
            "w", dir=self.git_dir, suffix=".commitmsg", delete=False
        ) as fh:
            fh.write(message)
            msg_file = fh.name
        try:
            self._git("commit", "-q", "--cleanup=verbatim", "-F", msg_file)
        finally:
            os.unlink(msg_file)
        return self.head_commit()

    def create_job_branch(self, base: str, name: str) -> str:
        """Branch *name* at *base* without touching the current checkout."""
        if self.branch_exists(name):
            raise BranchExists(f"branch already exists: {name}")
        base_commit = self.resolve_commit(base)
        self._git("branch", name, base_commit)
        return name

    def delete_branch(self, name: str) -> None:
        self._git("branch", "-D", name)

    def checkout(self, ref: str) -> None:
        self._git("checkout", "-q", ref)

    def merge_branch(self, branch: str) -> str:
        """Plain (fast-forward capable) merge of a single branch."""
        self._git("merge", "-q", branch)
        return self.head_commit()

    def octopus_merge(self, branches: list[str], message: str) -> str:
        """Merge several disjoint branches in one commit (1 + k parents).

        Conflicts indicate an upstream registry invariant violation: the
        merge is aborted, HEAD restored, branches left intact.
        """
        if len(branches) < 2:
            raise ValueError(
                f"octopus merge needs >= 2 branches, got {len(branches)}; "
                "use the fast-forward path for a single branch"
            )
        pre = self.head_commit()
        proc = self._git("merge", "--no-ff", "-m", message, *branches, check=False)
        if proc.returncode != 0:
            self._git("merge", "--abort", check=False)
            self._git("reset", "--hard", pre, check=False)
            raise MergeConflict(
                f"octopus merge of {len(branches)} branches conflicted",
                stdout=proc.stdout,
                stderr=proc.stderr,
            )
        return self.head_commit()

    def restore_paths(self, paths: PathSet) -> None:
        """Throw away uncommitted state under *paths* (tracked and untracked)."""
        entries = paths.sorted()
        if not entries:
            return
        tracked = [e for e in entries if self.tracked_files(e)]
        if tracked:
            self._git("checkout", "-q", "HEAD", "--", *tracked)
        self._git("clean", "-qfd", "--", *entries, check=False)

    def read_commit_message(self, commit: str) -> str:
        """Full commit message, byte-exact as stored."""
        resolved = self.resolve_commit(commit)
        return self._git("show", "-s", "--pretty=format:%B", resolved).stdout


def init_repository(
    path: Path | str,
    dataset_id: str | None = None,
    size_threshold_bytes: int = DEFAULT_SIZE_THRESHOLD,
    sources: tuple[Path, ...] = (),
) -> GitRepo:
    """Create a fresh repository with batchvc config committed.

    Sets a clone-local committer identity so operation does not depend on
    global git configuration.
    """
    root = Path(path).resolve()
    root.mkdir(parents=True, exist_ok=True)
    subprocess.run(
        ["git", "init", "-q", "-b", "main", str(root)],
        check=True,
        capture_output=True,
    )

    def _cfg(key: str, value: str) -> None:
        subprocess.run(
            ["git", "config", "--local", key, value],
            cwd=root,
            check=True,
            capture_output=True,
        )

    _cfg("user.name", "batchvc")
    _cfg("user.email", "batchvc@localhost")
    _cfg("commit.gpgsign", "false")
    _cfg("batchvc.dsid", dataset_id or str(uuid.uuid4()))

    cfg_path = root / CONFIG_RELPATH
    cfg_path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["[annex]", f"size_threshold_bytes = {size_threshold_bytes}"]
    if sources:
        quoted = ", ".join(f'"{s}"' for s in sources)
        lines.append(f"sources = [{quoted}]")
    cfg_path.write_text("\n".join(lines) + "\n")

    repo = GitRepo(root)
    repo.commit_paths(PathSet.of(CONFIG_RELPATH), "Initialize data repository\n")
    return repo
