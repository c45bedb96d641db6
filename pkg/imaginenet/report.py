"""Comparison tables over a results directory: method, mAP, Δ, mmit mAP, Δ, GFLOPs."""

from __future__ import annotations

from collections.abc import Sequence
import csv
from dataclasses import dataclass
import io
import json
import logging
from pathlib import Path

from rich.console import Console
from rich.table import Table

from .errors import ArtifactMissing
from .pipeline import RunRecord
from .runner import deltas

logger = logging.getLogger(__name__)

COLUMNS = (
    "method",
    "tag",
    "mAP",
    "delta",
    "mmit_mAP",
    "mmit_delta",
    "GFLOPs",
    "status",
)


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    tag: str
    macro_map: float | None
    delta: float | None
    mmit_map: float | None
    mmit_delta: float | None
    gflops: float
    status: str


def load_records(results_dir: str | Path) -> list[RunRecord]:
    """Every readable record under ``results_dir/records``, sorted by tag then name."""
    records_dir = Path(results_dir) / "records"
    paths = sorted(records_dir.glob("*.json")) if records_dir.is_dir() else []
    if not paths:
        raise ArtifactMissing(records_dir, "run records")
    records = []
    for path in paths:
        try:
            records.append(RunRecord.from_dict(json.loads(path.read_text())))
        except (json.JSONDecodeError, TypeError) as exc:
            logger.warning("Skipping malformed record %s: %s", path.name, exc)
    if not records:
        raise ArtifactMissing(records_dir, "readable run records")
    return sorted(records, key=_row_order)


def _row_order(record: RunRecord) -> tuple:
    return (record.tag, record.mode != "direct", record.name, record.config_hash)


def _method(record: RunRecord) -> str:
    if record.mode == "direct":
        return f"Direct migration ({record.name})"
    return f"{record.variant} / {record.aggregation}"


def comparison_rows(records: Sequence[RunRecord]) -> list[ComparisonRow]:
    """One row per record, baselines first within each tag."""
    gains = deltas(records)
    rows = []
    for r in sorted(records, key=_row_order):
        ok = r.status == "ok" and r.report is not None
        gain = gains.get(r.config_hash, {})
        rows.append(
            ComparisonRow(
                method=_method(r),
                tag=r.tag,
                macro_map=r.report["macro_map"] if ok else None,
                delta=gain.get("macro"),
                mmit_map=r.report["mmit_map"] if ok else None,
                mmit_delta=gain.get("mmit"),
                gflops=r.gflops,
                status=r.status,
            )
        )
    return rows


def _fmt(value: float | None, signed: bool = False) -> str:
    if value is None:
        return "-"
    return f"{value * 100:+.2f}" if signed else f"{value * 100:.2f}"


def _cells(row: ComparisonRow) -> list[str]:
    return [
        row.method,
        row.tag,
        _fmt(row.macro_map),
        _fmt(row.delta, signed=True),
        _fmt(row.mmit_map),
        _fmt(row.mmit_delta, signed=True),
        f"{row.gflops:.4f}",
        row.status,
    ]


def to_csv(rows: Sequence[ComparisonRow]) -> str:
    """Raw fractions, not percentages; empty cells for missing values."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        values = (row.macro_map, row.delta, row.mmit_map, row.mmit_delta)
        writer.writerow(
            [
                row.method,
                row.tag,
                *("" if v is None else repr(v) for v in values),
                repr(row.gflops),
                row.status,
            ]
        )
    return buf.getvalue()


def build_table(rows: Sequence[ComparisonRow], title: str = "Comparison") -> Table:
    table = Table(title=title)
    table.add_column("Method", style="cyan")
    table.add_column("Tag")
    table.add_column("mAP (%)", justify="right", style="green")
    table.add_column("Δ", justify="right")
    table.add_column("mmit mAP (%)", justify="right", style="blue")
    table.add_column("Δ", justify="right")
    table.add_column("GFLOPs", justify="right", style="yellow")
    table.add_column("Status")
    for row in rows:
        table.add_row(*_cells(row))
    return table


def to_text(rows: Sequence[ComparisonRow], title: str = "Comparison") -> str:
    console = Console(file=io.StringIO(), width=120, color_system=None)
    console.print(build_table(rows, title))
    return console.file.getvalue()


def write_report(results_dir: str | Path) -> tuple[Path, Path]:
    """Write ``comparison.csv`` and ``comparison.txt`` next to the records."""
    results_dir = Path(results_dir)
    rows = comparison_rows(load_records(results_dir))
    csv_path = results_dir / "comparison.csv"
    txt_path = results_dir / "comparison.txt"
    csv_path.write_text(to_csv(rows))
    txt_path.write_text(to_text(rows))
    logger.info("Report written to %s (%d rows)", results_dir, len(rows))
    return csv_path, txt_path
