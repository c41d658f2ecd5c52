"""Per-epoch metrics CSV and cross-run summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

from .errors import FormatError


@dataclass
class MetricsRow:
    epoch: int
    lr: float
    accuracy: List[float]
    train_ce: List[float]
    mean_lambda: float
    promotions: List[int]


def header(ladder_size: int) -> List[str]:
    cols = ["epoch", "lr"]
    cols += [f"acc_{i}" for i in range(ladder_size)]
    cols += [f"train_ce_{i}" for i in range(ladder_size)]
    cols += ["mean_lambda"]
    cols += [f"promoted_{i}" for i in range(ladder_size)]
    return cols


def _f(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def format_row(row: MetricsRow) -> List[str]:
    return ([str(row.epoch), _f(row.lr)]
            + [_f(a) for a in row.accuracy]
            + [_f(c) for c in row.train_ce]
            + [_f(row.mean_lambda)]
            + [str(int(p)) for p in row.promotions])


def write_metrics(rows: Sequence[MetricsRow], path, ladder_size: int) -> Path:
    """Header plus one line per epoch; floats at 6 decimals, ``\\n`` line endings."""
    path = Path(path)
    cols = header(ladder_size)
    lines = [",".join(cols)]
    for row in rows:
        if not (len(row.accuracy) == len(row.train_ce) == len(row.promotions) == ladder_size):
            raise ValueError(f"row for epoch {row.epoch} does not match ladder size {ladder_size}")
        lines.append(",".join(format_row(row)))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_metrics(path) -> List[dict]:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such metrics file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if cols[:2] != ["epoch", "lr"] or not any(c.startswith("acc_") for c in cols):
            raise FormatError(f"{path}: unrecognized header")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != len(cols):
                raise FormatError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(rec)}")
            try:
                rows.append({c: float(v) for c, v in zip(cols, rec)})
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from None
    return rows


def best_accuracies(path) -> List[float]:
    rows = read_metrics(path)
    n = sum(1 for c in (rows[0] if rows else {}) if c.startswith("acc_"))
    if not rows:
        return []
    return [max(r[f"acc_{i}"] for r in rows) for i in range(n)]


def summarize(paths: Sequence) -> str:
    """Best-epoch accuracy (%) per network per run, with deltas against the first run."""
    if not paths:
        raise FormatError("summarize needs at least one CSV")
    results = [(str(p), best_accuracies(p)) for p in paths]
    width = max(len(b) for _, b in results)
    names = ["pivot"] + [f"net{i}" for i in range(1, width)]
    label_w = max(len("run"), *(len(p) for p, _ in results))
    lines = ["run".ljust(label_w) + " | " + " | ".join(n.rjust(7) for n in names)]
    lines.append("-" * len(lines[0]))
    for p, best in results:
        cells = [f"{100 * b:7.2f}" for b in best] + ["      -"] * (width - len(best))
        lines.append(p.ljust(label_w) + " | " + " | ".join(cells))
    if len(results) > 1:
        ref_path, ref = results[0]
        lines.append("")
        lines.append(f"delta vs {ref_path} (points)")
        for p, best in results[1:]:
            cells = [f"{100 * (b - r):+7.2f}" for b, r in zip(best, ref)]
            lines.append(p.ljust(label_w) + " | " + " | ".join(cells))
    return "\n".join(lines) + "\n"
