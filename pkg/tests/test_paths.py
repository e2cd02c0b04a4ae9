from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchvc.paths import PathSet, normalize_path, paths_conflict


class TestNormalize:
    def test_forward_slashes_and_trailing_sep(self):
        assert normalize_path("a/b/") == "a/b"
        assert normalize_path("a//b") == "a/b"
        assert normalize_path("./a/./b") == "a/b"

    def test_dot_is_repo_root(self):
        assert normalize_path(".") == "."
        assert normalize_path("./") == "."

    def test_idempotent(self):
        for raw in ("a/b/", "./x", "a//b/c/", "."):
            once = normalize_path(raw)
            assert normalize_path(once) == once

    @pytest.mark.parametrize("bad", ["", "/abs/path", "a/../b", ".."])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            normalize_path(bad)


def oracle_conflict(a: str, b: str) -> bool:
    """Brute-force segment-wise ancestor/equality check."""
    sa = [] if a == "." else a.split("/")
    sb = [] if b == "." else b.split("/")
    n = min(len(sa), len(sb))
    return sa[:n] == sb[:n]


class TestConflictRule:
    def test_equal_paths_conflict(self):
        assert paths_conflict("a/b", "a/b")

    def test_ancestor_conflicts(self):
        assert paths_conflict("test_01_output_dir_18", "test_01_output_dir_18/part.csv")
        assert paths_conflict("a/b/c", "a")

    def test_string_prefix_is_not_ancestor(self):
        assert not paths_conflict("a/b", "a/bc")
        assert not paths_conflict("data", "database")

    def test_root_conflicts_with_everything(self):
        assert paths_conflict(".", "deep/nested/file")
        assert paths_conflict("x", ".")

    def test_siblings_do_not_conflict(self):
        assert not paths_conflict("a/b", "a/c")


_segments = st.text(alphabet="ab.c_0", min_size=1, max_size=3).filter(
    lambda s: s not in (".", "..")
)
_paths = st.lists(_segments, min_size=1, max_size=4).map("/".join)


@given(_paths, _paths)
def test_conflict_matches_bruteforce_oracle(a, b):
    assert paths_conflict(a, b) == oracle_conflict(a, b)


@given(_paths, _paths)
def test_conflict_is_symmetric(a, b):
    assert paths_conflict(a, b) == paths_conflict(b, a)


class TestPathSet:
    def test_normalizes_on_construction(self):
        ps = PathSet.of("a/b/", "./a/b", "c")
        assert ps.sorted() == ["a/b", "c"]

    def test_conflicting_pairs(self):
        ps = PathSet.of("out/dir")
        other = PathSet.of("out/dir/file.csv", "elsewhere")
        assert ps.conflicting_pairs(other) == [("out/dir", "out/dir/file.csv")]

    def test_empty_is_falsy(self):
        assert not PathSet()
        assert PathSet.of("x")

    def test_union(self):
        assert PathSet.of("a").union(["b/"]).sorted() == ["a", "b"]

    def test_contains(self):
        assert "a/b/" in PathSet.of("a/b")
