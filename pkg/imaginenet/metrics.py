"""Ranking metrics: average precision, macro / mmit mAP and Top-k accuracy.

AP is the uninterpolated "precision at every positive rank" mean. Ties in
score are broken by ascending index so results are reproducible.
"""

from __future__ import annotations

from collections.abc import Collection, Sequence
import csv
from dataclasses import asdict, dataclass, field
import io
import json
import logging
from typing import Any

import numpy as np

from .errors import MetricError, ShapeMismatch, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Scores in [0, 1] and binary labels, both N×C."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        if scores.ndim != 2:
            raise ShapeMismatch("ScoreTable", "(N, C)", scores.shape)
        if labels.shape != scores.shape:
            raise ShapeMismatch("ScoreTable", scores.shape, labels.shape)
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError("ScoreTable labels must be 0 or 1")
        if not np.all(np.isfinite(scores)) or scores.min() < 0 or scores.max() > 1:
            raise ValidationError("ScoreTable scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int8))

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise ShapeMismatch("average_precision", scores.shape, labels.shape)
    if not labels.any():
        raise MetricError("Average precision is undefined without positives")
    hits = labels[np.argsort(-scores, kind="stable")] > 0
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].mean())


def per_class_ap(table: ScoreTable) -> list[float | None]:
    """AP down each column; None for columns without positives."""
    aps: list[float | None] = []
    for c in range(table.n_classes):
        column = table.labels[:, c]
        ap = average_precision(table.scores[:, c], column) if column.any() else None
        aps.append(ap)
    return aps


def macro_map(table: ScoreTable, *, expected_empty: Collection[int] = ()) -> float:
    """Mean per-class AP over classes with at least one positive.

    Empty classes are skipped; those not listed in ``expected_empty`` are
    logged.
    """
    aps = per_class_ap(table)
    skipped = [c for c, ap in enumerate(aps) if ap is None and c not in expected_empty]
    if skipped:
        logger.warning("macro mAP skips classes without positives: %s", skipped)
    usable = [ap for ap in aps if ap is not None]
    if not usable:
        raise MetricError("No class has a positive sample")
    return float(np.mean(usable))


def mmit_map(table: ScoreTable) -> float:
    """Mean of per-sample AP computed across classes."""
    empty = np.flatnonzero(~table.labels.any(axis=1))
    if empty.size:
        raise MetricError(f"Rows without positives: {empty[:10].tolist()}")
    return float(
        np.mean([average_precision(s, y) for s, y in zip(table.scores, table.labels)])
    )


def topk_accuracy(table: ScoreTable, k: int) -> float:
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    positives = table.labels.sum(axis=1)
    if np.any(positives != 1):
        raise MetricError("Top-k accuracy needs exactly one positive per row")
    true = table.labels.argmax(axis=1)
    s_true = table.scores[np.arange(table.n_samples), true][:, None]
    cols = np.arange(table.n_classes)[None, :]
    rank = (table.scores > s_true).sum(axis=1) + (
        (table.scores == s_true) & (cols < true[:, None])
    ).sum(axis=1)
    return float(np.mean(rank < k))


@dataclass
class EvalReport:
    macro_map: float | None = None
    mmit_map: float | None = None
    per_class_ap: list[float | None] = field(default_factory=list)
    top1: float | None = None
    top3: float | None = None
    counts: dict[str, Any] = field(default_factory=dict)
    class_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EvalReport:
        return cls(**data)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row", "name", "value", "positives"])
        positives = self.counts.get("positives", [])
        for c, ap in enumerate(self.per_class_ap):
            name = self.class_names[c] if c < len(self.class_names) else str(c)
            pos = positives[c] if c < len(positives) else ""
            writer.writerow([f"class_{c}", name, "" if ap is None else repr(ap), pos])
        for key in ("macro_map", "mmit_map", "top1", "top3"):
            value = getattr(self, key)
            writer.writerow([key, "", "" if value is None else repr(value), ""])
        return buf.getvalue()


def _counts(table: ScoreTable) -> dict[str, Any]:
    positives = table.labels.sum(axis=0)
    return {
        "n_samples": table.n_samples,
        "n_classes": table.n_classes,
        "positives": positives.tolist(),
        "skipped_classes": int((positives == 0).sum()),
    }


def evaluate_multilabel(
    table: ScoreTable,
    class_names: Sequence[str] = (),
    *,
    expected_empty: Collection[int] = (),
) -> EvalReport:
    aps = per_class_ap(table)
    return EvalReport(
        macro_map=macro_map(table, expected_empty=expected_empty),
        mmit_map=mmit_map(table),
        per_class_ap=aps,
        counts=_counts(table),
        class_names=list(class_names),
    )


def evaluate_single(table: ScoreTable, class_names: Sequence[str] = ()) -> EvalReport:
    report = evaluate_multilabel(table, class_names)
    report.top1 = topk_accuracy(table, 1)
    report.top3 = topk_accuracy(table, min(3, table.n_classes))
    return report
