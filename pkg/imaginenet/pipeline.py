"""Experiment operations: single-class training, direct migration, imagination
training, composite evaluation and view fusion."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
import json
import logging
import math
from pathlib import Path
import time
from typing import Any

import anyio
import numpy as np

from .aggregation import VANILLA_SUM, AggregationStrategy
from .config import SUBSETS, ExperimentConfig
from .errors import NumericError, ShapeMismatch, TrainingDiverged, ValidationError
from .feature_data import FeatureSpec, read_split, to_storage_precision
from .fusion import (
    FusionHead,
    FusionHeadConfig,
    HeadKind,
    embed,
    estimate_flops,
    infer,
    save_head,
    variant_name,
)
from .label_space import (
    CORRECT,
    CompositeLabel,
    LabelSpace,
    encode_multi_hot,
    excluded_subsets,
)
from .metrics import EvalReport, ScoreTable, evaluate_multilabel, evaluate_single
from .nn_core import bce_loss, ce_loss, multi_margin_loss
from .optim import SgdState, sgd_step
from .synth_data import ClipSample, DatasetSplit, make_prototypes, synth_split

logger = logging.getLogger(__name__)

LOSS_FUNCTIONS: dict[str, Callable[..., tuple[float, np.ndarray]]] = {
    "ce": ce_loss,
    "margin": multi_margin_loss,
}
SUBSET_MAX_SIZE = {"pairs": 2, "pairs+triples": 3, "all": 4}
EVAL_BATCH = 256


@dataclass
class RunRecord:
    config_hash: str
    name: str = ""
    tag: str = ""
    mode: str = "imagine"
    seed: int = 0
    variant: str = ""
    aggregation: str = ""
    gflops: float = 0.0
    loss_curve: list[float] = field(default_factory=list)
    report: dict[str, Any] | None = None
    single_report: dict[str, Any] | None = None
    checkpoint_hash: str | None = None
    wall_time: float = 0.0
    status: str = "ok"
    error: str | None = None
    config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunRecord:
        return cls(**data)


def new_record(config: ExperimentConfig) -> RunRecord:
    head = config.head
    return RunRecord(
        config_hash=config.hash,
        name=config.name,
        tag=config.tag,
        mode=config.mode,
        seed=config.seed,
        variant=variant_name(head) if config.mode == "imagine" else "direct",
        aggregation=head.aggregation.kind if config.mode == "imagine" else "",
        gflops=estimate_flops(
            head if config.mode == "imagine" else single_class_head_config(config)
        )
        / 1e9,
        config=config.to_dict(),
    )


# data


def quantize_split(split: DatasetSplit) -> DatasetSplit:
    """Round every clip through the float32 storage format."""
    spec = FeatureSpec(split.T, split.D)

    def _q(clips: list[ClipSample]) -> list[ClipSample]:
        return [
            replace(c, features=to_storage_precision(c.features, spec)) for c in clips
        ]

    return replace(
        split,
        set1_train=_q(split.set1_train),
        set1_test=_q(split.set1_test),
        set2=_q(split.set2),
    )


def prepare_split(config: ExperimentConfig, label_space: LabelSpace) -> DatasetSplit:
    """Generate the synthetic split described by ``config`` at storage precision."""
    ds = config.dataset
    bank = make_prototypes(
        config.seed,
        label_space.n_classes,
        ds.D,
        n_views=ds.n_views,
        view_shift=ds.view_shift,
        view_noise_scale=ds.view_noise_scale,
        shared_rank=ds.shared_rank,
        shared_weight=ds.shared_weight,
    )
    split = synth_split(
        bank,
        label_space,
        ds.counts,
        ds.T,
        ds.noise,
        ds.n_views,
        config.seed,
        temporal_amp=ds.temporal_amp,
    )
    split.meta["label_space_digest"] = label_space.digest()
    return quantize_split(split)


def load_split(root: str | Path, label_space: LabelSpace) -> DatasetSplit:
    split = anyio.run(read_split, root)
    digest = split.meta.get("label_space_digest")
    if digest and digest != label_space.digest():
        raise ValidationError(
            f"Dataset at {root} was generated for a different label space"
        )
    return split


def _stack(clips: Sequence[ClipSample]) -> np.ndarray:
    return np.stack([c.features for c in clips])


# scoring


def fuse_views(per_view_scores: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of per-view score vectors."""
    if len(per_view_scores) == 0:
        raise ValidationError("fuse_views needs at least one view")
    anchor = np.asarray(per_view_scores[0], dtype=np.float64)
    fused = anchor.copy()
    for scores in per_view_scores[1:]:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != anchor.shape:
            raise ShapeMismatch("fuse_views", anchor.shape, scores.shape)
        fused += (scores - anchor) / len(per_view_scores)
    return fused


def score_clips(head: FusionHead, clips: Sequence[ClipSample]) -> np.ndarray:
    """Sigmoid scores per clip, in clip order."""
    out = [
        infer(head, _stack(clips[i : i + EVAL_BATCH]))
        for i in range(0, len(clips), EVAL_BATCH)
    ]
    return np.concatenate(out) if out else np.zeros((0, head.config.n_classes))


def score_samples(
    head: FusionHead,
    clips: Sequence[ClipSample],
    views: Sequence[int] | None = None,
) -> tuple[list[int], list[CompositeLabel], np.ndarray]:
    """Per logical sample: views scored separately, then fused."""
    if views is not None:
        wanted = set(views)
        clips = [c for c in clips if c.view_id in wanted]
    if not clips:
        raise ValidationError("No clips left to score")
    scores = score_clips(head, clips)
    grouped: dict[int, list[int]] = {}
    for i, clip in enumerate(clips):
        grouped.setdefault(clip.sample_id, []).append(i)
    ids = sorted(grouped)
    fused = np.stack([fuse_views([scores[i] for i in grouped[s]]) for s in ids])
    labels = [clips[grouped[s][0]].label for s in ids]
    return ids, labels, fused


def _multi_hot(labels: Sequence[CompositeLabel], n_classes: int) -> np.ndarray:
    return np.stack([encode_multi_hot(label, n_classes) for label in labels])


def filter_subset(clips: Sequence[ClipSample], subset: str) -> list[ClipSample]:
    if subset not in SUBSET_MAX_SIZE:
        raise ValidationError(f"Unknown subset {subset!r}; expected one of {SUBSETS}")
    limit = SUBSET_MAX_SIZE[subset]
    return [c for c in clips if 2 <= c.label.size <= limit]


def evaluate_composite(
    head: FusionHead,
    set2: Sequence[ClipSample],
    label_space: LabelSpace,
    subset: str = "all",
    views: Sequence[int] | None = None,
) -> EvalReport:
    """macro / mmit mAP of ``head`` on the composite clips of ``subset``."""
    clips = filter_subset(set2, subset)
    if not clips:
        raise ValidationError(f"Subset {subset!r} holds no composite clips")
    _, labels, scores = score_samples(head, clips, views)
    names = [label_space.name_of(c) for c in range(label_space.n_classes)]
    report = evaluate_multilabel(
        ScoreTable(scores, _multi_hot(labels, label_space.n_classes)),
        names,
        expected_empty=(CORRECT,),
    )
    report.counts.update(
        subset=subset,
        views=sorted({c.view_id for c in clips} if views is None else set(views)),
        composite_classes=len(set(labels)),
    )
    return report


def direct_migration_eval(
    classifier: FusionHead,
    set2: Sequence[ClipSample],
    label_space: LabelSpace,
    subset: str = "all",
    views: Sequence[int] | None = None,
) -> EvalReport:
    """Score composite clips with a classifier trained on single classes only."""
    return evaluate_composite(classifier, set2, label_space, subset, views)


def evaluate_single_class(
    classifier: FusionHead,
    clips: Sequence[ClipSample],
    label_space: LabelSpace,
    views: Sequence[int] | None = None,
) -> EvalReport:
    _, labels, scores = score_samples(classifier, clips, views)
    names = [label_space.name_of(c) for c in range(label_space.n_classes)]
    return evaluate_single(
        ScoreTable(scores, _multi_hot(labels, label_space.n_classes)), names
    )


def perspective_sweep(
    head: FusionHead,
    split: DatasetSplit,
    label_space: LabelSpace,
    views: Sequence[int] | None = None,
    subset: str = "all",
) -> list[tuple[tuple[int, ...], EvalReport]]:
    """One report per non-empty combination of the available views."""
    available = sorted(views if views is not None else range(split.n_views))
    results = []
    for size in range(1, len(available) + 1):
        for combo in combinations(available, size):
            report = evaluate_composite(head, split.set2, label_space, subset, combo)
            results.append((combo, report))
    return results


def subset_sweep(
    head: FusionHead,
    split: DatasetSplit,
    label_space: LabelSpace,
    views: Sequence[int] | None = None,
) -> dict[str, EvalReport]:
    return {
        subset: evaluate_composite(head, split.set2, label_space, subset, views)
        for subset in SUBSETS
    }


def dump_embeddings(
    head: FusionHead,
    clips: Sequence[ClipSample],
    label_space: LabelSpace,
    out_dir: str | Path,
) -> Path:
    """Write ``embeddings.npy`` (float32, N×hidden) and ``embeddings.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chunks = [
        embed(head, _stack(clips[i : i + EVAL_BATCH]))
        for i in range(0, len(clips), EVAL_BATCH)
    ]
    np.save(out_dir / "embeddings.npy", np.concatenate(chunks).astype(np.float32))
    meta = [
        {
            "members": list(c.label.members),
            "name": label_space.name_of(c.label),
            "sample_id": c.sample_id,
            "view": c.view_id,
        }
        for c in clips
    ]
    (out_dir / "embeddings.json").write_text(json.dumps(meta, indent=2))
    return out_dir


# training


def _sgd_state(config: ExperimentConfig, lr: float | None = None) -> SgdState:
    t = config.train
    return SgdState(lr=lr or t.lr, momentum=t.momentum, schedule=t.schedule)


def _diverged(record: RunRecord, epoch: int, reason: str) -> TrainingDiverged:
    record.status = "failed"
    record.error = f"{reason} at epoch {epoch}"
    return TrainingDiverged(epoch, record)


def _fit(
    record: RunRecord, epochs: int, run_epoch: Callable[[int], list[float]]
) -> None:
    """Run ``epochs`` epochs, appending the mean loss of each to the record."""
    for epoch in range(epochs):
        try:
            losses = run_epoch(epoch)
        except NumericError as e:
            raise _diverged(record, epoch, str(e)) from e
        mean = float(np.mean(losses))
        record.loss_curve.append(mean)
        if not math.isfinite(mean):
            raise _diverged(record, epoch, "non-finite loss")
        logger.debug("%s epoch %d loss %.6f", record.name, epoch, mean)


def single_class_head_config(config: ExperimentConfig) -> FusionHeadConfig:
    return FusionHeadConfig(
        kind=HeadKind.FC,
        hidden=config.head.hidden,
        n_classes=config.head.n_classes,
        T=config.dataset.T,
        D=config.dataset.D,
        aggregation=AggregationStrategy(kind=VANILLA_SUM, seed=config.seed),
        seed=config.seed,
    )


def train_single_class(
    config: ExperimentConfig,
    split: DatasetSplit,
    label_space: LabelSpace,
) -> tuple[FusionHead, RunRecord]:
    """FC classifier over time-pooled single-class features, reporting Top-1/Top-3."""
    record = new_record(config)
    head = FusionHead(single_class_head_config(config))
    X = _stack(split.set1_train)
    y = np.array([c.label.members[0] for c in split.set1_train])
    C = label_space.n_classes
    onehot = np.eye(C, dtype=np.uint8)[y]
    loss_name = config.train.loss
    state = _sgd_state(config)
    rng = np.random.default_rng([config.seed, 11])
    B = config.train.batch_size

    def run_epoch(epoch: int) -> list[float]:
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), B):
            idx = order[start : start + B]
            logits, cache = head.forward(X[idx])
            if loss_name == "bce":
                loss, dlogits = bce_loss(logits, onehot[idx])
            else:
                loss, dlogits = LOSS_FUNCTIONS[loss_name](logits, y[idx])
            head.backward(dlogits, cache)
            sgd_step(head.parameters(), state, epoch)
            losses.append(loss)
        return losses

    _fit(record, config.train.epochs, run_epoch)
    report = evaluate_single_class(head, split.set1_test, label_space)
    record.single_report = report.to_dict()
    logger.info(
        "%s: top1 %.4f top3 %.4f on held-out singles",
        record.name,
        report.top1,
        report.top3,
    )
    return head, record


def imagination_pool(
    config: ExperimentConfig, label_space: LabelSpace
) -> list[tuple[int, ...]]:
    """Class combinations the imagination step draws from."""
    first = CORRECT if config.train.include_correct else 1
    classes = range(first, label_space.n_classes)
    k = config.train.k
    pool = []
    for combo in combinations(classes, k):
        if config.train.pair_pool == "valid":
            errors = tuple(c for c in combo if c != CORRECT)
            if len(errors) >= 2 and excluded_subsets(
                CompositeLabel(errors), label_space.exclusions
            ):
                continue
        pool.append(combo)
    if not pool:
        raise ValidationError(f"No valid {k}-class combinations to imagine")
    return pool


def train_imagine(
    config: ExperimentConfig,
    split: DatasetSplit,
    label_space: LabelSpace,
) -> tuple[FusionHead, RunRecord]:
    """Train a fusion head on imagined composites built from single-class clips.

    Every step draws ``batch_size`` class combinations, picks a random clip of
    each member class, aggregates them and fits BCE against the multi-hot union.
    """
    record = new_record(config)
    head = FusionHead(config.head)
    pool = imagination_pool(config, label_space)
    X = _stack(split.set1_train)
    by_class: dict[int, np.ndarray] = {}
    for i, clip in enumerate(split.set1_train):
        by_class.setdefault(clip.label.members[0], []).append(i)
    by_class = {c: np.asarray(ids) for c, ids in by_class.items()}
    missing = {c for combo in pool for c in combo} - set(by_class)
    if missing:
        raise ValidationError(f"Training split lacks classes {sorted(missing)}")

    C = label_space.n_classes
    k = config.train.k
    B = config.train.batch_size
    steps = math.ceil(len(X) / B)
    state = _sgd_state(config, config.train.imagine_lr)
    rng = np.random.default_rng([config.seed, 23])

    def run_epoch(epoch: int) -> list[float]:
        losses = []
        for _ in range(steps):
            combos = [pool[i] for i in rng.integers(len(pool), size=B)]
            picks = np.empty((k, B), dtype=np.int64)
            targets = np.zeros((B, C), dtype=np.uint8)
            for b, combo in enumerate(combos):
                for slot, c in enumerate(rng.permutation(combo)):
                    ids = by_class[int(c)]
                    picks[slot, b] = ids[rng.integers(len(ids))]
                targets[b, list(combo)] = 1
            logits, cache = head.imagine([X[p] for p in picks], rng)
            loss, dlogits = bce_loss(logits, targets)
            head.backward(dlogits, cache)
            sgd_step(head.parameters(), state, epoch)
            losses.append(loss)
        return losses

    _fit(record, config.train.epochs, run_epoch)
    return head, record


# single run


def run_experiment(
    config: ExperimentConfig,
    split: DatasetSplit | None = None,
    out_dir: str | Path | None = None,
) -> RunRecord:
    """Train and evaluate one configuration; persist artefacts under ``out_dir``."""
    started = time.perf_counter()
    label_space = config.build_label_space()
    if split is None:
        split = prepare_split(config, label_space)
    logger.info("Run %s [%s] started (%s)", config.name, config.hash, config.mode)
    subset, views = config.eval.subset, config.eval.views
    if config.mode == "direct":
        head, record = train_single_class(config, split, label_space)
        report = direct_migration_eval(head, split.set2, label_space, subset, views)
    else:
        head, record = train_imagine(config, split, label_space)
        report = evaluate_composite(head, split.set2, label_space, subset, views)
    record.report = report.to_dict()
    if out_dir is not None:
        out_dir = Path(out_dir)
        record.checkpoint_hash = save_head(
            out_dir / "checkpoints" / f"{config.hash}.ckpt",
            head,
            {"experiment": config.to_dict()},
        )
    record.wall_time = time.perf_counter() - started
    if out_dir is not None:
        write_record(record, out_dir)
        config_path = out_dir / "configs" / f"{config.hash}.yaml"
        config_path.parent.mkdir(parents=True, exist_ok=True)
        config_path.write_text(config.to_yaml())
    logger.info(
        "Run %s finished: mAP %.4f, mmit mAP %.4f (%.1fs)",
        config.name,
        report.macro_map,
        report.mmit_map,
        record.wall_time,
    )
    return record


def write_record(record: RunRecord, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "records" / f"{record.config_hash}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.to_json())
    return path
