"""
dmpc/storage.py - Result Files

Every file a run produces is written atomically: content goes to a
temporary file in the target directory, which is then renamed over the
target, so an interrupted run never leaves a truncated CSV or dump.

Files:
    metrics CSV     one row per update (update_idx 0 for preprocessing)
    solution dump   matching: "u v" per matched edge
                    cc:       "vertex component_id" per vertex
                    mst:      "u v w" per forest edge, then "total_weight W"
    summary JSON    totals and maxima of a run
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from .models import UpdateMetrics
from .utils import DEFAULT_WEIGHT_SCALE, canonical_edge, from_fixed, to_fixed


def atomic_write(path: Path, content: str, encoding: str = "utf-8") -> None:
    """
    Write ``content`` to ``path`` through a temporary file and a rename.

    The parent directory is created when missing. Lines end in ``\\n`` on
    every platform so identical runs give identical bytes.

    Raises:
        OSError: If the file cannot be written or renamed.
    """
    path = Path(path)
    dir_path = path.parent
    dir_path.mkdir(parents=True, exist_ok=True)
    # Same directory, so the rename stays on one filesystem.
    fd, temp_path = tempfile.mkstemp(dir=str(dir_path), suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding=encoding, newline="\n") as f:
            f.write(content)
        os.replace(temp_path, path)
    except Exception:
        try:
            os.unlink(temp_path)
        except OSError:
            pass
        raise


# ---------------------------------------------------------------------------
# Metrics CSV
# ---------------------------------------------------------------------------

def format_metrics(rows: Iterable[UpdateMetrics]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(UpdateMetrics.CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.to_row())
    return buffer.getvalue()


def write_metrics(path: Path, rows: Iterable[UpdateMetrics]) -> None:
    atomic_write(path, format_metrics(rows))


def read_metrics(path: Path) -> List[UpdateMetrics]:
    with open(path, encoding="utf-8", newline="") as handle:
        return [UpdateMetrics.from_dict(row) for row in csv.DictReader(handle)]


# ---------------------------------------------------------------------------
# Solution dumps
# ---------------------------------------------------------------------------

def format_matching(edges: Iterable[Tuple[int, int]]) -> str:
    """
    Example:
        >>> format_matching([(3, 2), (0, 1)])
        '0 1\\n2 3\\n'
    """
    return "".join(f"{u} {v}\n" for u, v in sorted(canonical_edge(u, v) for u, v in edges))


def format_components(labels: Mapping[int, int]) -> str:
    return "".join(f"{v} {labels[v]}\n" for v in sorted(labels))


def format_forest(forest: Mapping[Tuple[int, int], Optional[int]], scale: int = DEFAULT_WEIGHT_SCALE) -> str:
    """
    Forest edges sorted, weights as decimals, then the total.

    Example:
        >>> format_forest({(1, 2): 2000, (0, 2): 1500})
        '0 2 1.5\\n1 2 2\\ntotal_weight 3.5\\n'
    """
    lines = []
    total = 0
    for (u, v), weight in sorted((canonical_edge(*edge), w or 0) for edge, w in forest.items()):
        lines.append(f"{u} {v} {from_fixed(weight, scale)}\n")
        total += weight
    lines.append(f"total_weight {from_fixed(total, scale)}\n")
    return "".join(lines)


def read_forest_total(path: Path, scale: int = DEFAULT_WEIGHT_SCALE) -> int:
    """The fixed-point total from an mst dump's trailer line."""
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("total_weight"):
            return to_fixed(line.split()[1], scale)
    raise ValueError(f"{path} has no total_weight line")


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def write_json(path: Path, data: Dict[str, Any]) -> None:
    atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
