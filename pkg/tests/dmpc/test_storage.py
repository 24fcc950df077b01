# tests/dmpc/test_storage.py
# Tests for atomic result files

import os

import pytest

from dmpc.models import UpdateMetrics
from dmpc.storage import (
    atomic_write,
    format_components,
    format_forest,
    format_matching,
    read_forest_total,
    read_json,
    read_metrics,
    write_json,
    write_metrics,
)


class TestAtomicWrite:
    def test_creates_parent_directories(self, tmp_path):
        """Test missing parents are created and the content lands."""
        target = tmp_path / "a" / "b" / "out.txt"
        atomic_write(target, "x\ny\n")
        assert target.read_bytes() == b"x\ny\n"

    def test_no_temp_file_left_on_failure(self, tmp_path, monkeypatch):
        """Test a failed rename keeps the old file and removes the temporary one."""
        target = tmp_path / "out.txt"
        target.write_text("old", encoding="utf-8")

        def broken(src, dst):
            raise OSError("rename failed")

        monkeypatch.setattr(os, "replace", broken)
        with pytest.raises(OSError):
            atomic_write(target, "new")
        assert target.read_text(encoding="utf-8") == "old"
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


class TestFiles:
    def test_metrics_csv(self, tmp_path):
        """Test the header row and values survive a write and a read."""
        rows = [
            UpdateMetrics(0, "preprocess", 12, 5, 40, 200, 7),
            UpdateMetrics(1, "+", 6, 3, 9, 30, 7),
        ]
        path = tmp_path / "m.csv"
        write_metrics(path, rows)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "update_idx,op,rounds,active_max,comm_max_round,comm_total,machines_used"
        assert lines[2] == "1,+,6,3,9,30,7"
        assert read_metrics(path) == rows

    def test_dumps(self):
        """Test dump lines are sorted and weights printed as decimals."""
        assert format_matching([(5, 4), (1, 0)]) == "0 1\n4 5\n"
        assert format_components({2: 0, 0: 0, 1: 1}) == "0 0\n1 1\n2 0\n"
        assert format_forest({}) == "total_weight 0\n"

    def test_forest_total(self, tmp_path):
        """Test the trailer total reads back as a fixed-point word."""
        path = tmp_path / "f.txt"
        atomic_write(path, format_forest({(0, 1): 1250, (1, 2): 500}))
        assert read_forest_total(path) == 1750

    def test_json(self, tmp_path):
        """Test JSON is written with sorted keys."""
        path = tmp_path / "s.json"
        write_json(path, {"b": 1, "a": [1, 2]})
        assert read_json(path) == {"a": [1, 2], "b": 1}
        assert path.read_text(encoding="utf-8").index('"a"') < path.read_text(encoding="utf-8").index('"b"')
