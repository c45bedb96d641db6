"""Seeded synthetic clip features with compositional structure.

A clip of label {a, b} is a Dirichlet mixture of the (view-rotated) class
prototypes, plus a small periodic component along a shared temporal axis,
plus Gaussian noise.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .errors import ShapeMismatch, ValidationError
from .label_space import CompositeLabel, LabelSpace

logger = logging.getLogger(__name__)

DEFAULT_VIEW_NOISE_SCALE = (1.0, 1.1, 0.8, 1.6)
MAX_COSINE = 0.99

SPLIT_CODES = {"set1_train": 1, "set1_test": 2, "set2": 3}


@dataclass(frozen=True, eq=False)
class PrototypeBank:
    """Unit-norm class prototypes, one rotated copy per view."""

    prototypes: np.ndarray  # (n_classes, D)
    view_prototypes: np.ndarray  # (n_views, n_classes, D)
    temporal_axis: np.ndarray  # (D,)
    view_noise_scale: tuple[float, ...]
    seed: int

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def D(self) -> int:
        return self.prototypes.shape[1]

    @property
    def n_views(self) -> int:
        return self.view_prototypes.shape[0]

    def for_view(self, view_id: int) -> np.ndarray:
        if not 0 <= view_id < self.n_views:
            raise ValidationError(f"view_id {view_id} outside 0..{self.n_views - 1}")
        return self.view_prototypes[view_id]

    def equals(self, other: PrototypeBank) -> bool:
        return (
            self.seed == other.seed
            and self.view_noise_scale == other.view_noise_scale
            and np.array_equal(self.view_prototypes, other.view_prototypes)
            and np.array_equal(self.temporal_axis, other.temporal_axis)
        )


@dataclass(frozen=True, eq=False)
class ClipSample:
    features: np.ndarray  # (T, D)
    label: CompositeLabel
    view_id: int
    seed: int
    sample_id: int = 0

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ShapeMismatch("ClipSample", "(T, D)", self.features.shape)
        T, D = self.features.shape
        if T < 1 or D < 2:
            raise ValidationError(f"ClipSample needs T >= 1 and D >= 2, got {T}x{D}")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("ClipSample features must be finite")


@dataclass(frozen=True)
class SplitCounts:
    train_per_class: int = 24
    test_per_class: int = 16
    per_composite: int = 8

    def __post_init__(self):
        for name in ("train_per_class", "test_per_class", "per_composite"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")


@dataclass(eq=False)
class DatasetSplit:
    set1_train: list[ClipSample]
    set1_test: list[ClipSample]
    set2: list[ClipSample]
    counts: SplitCounts
    n_views: int = 1
    meta: dict = field(default_factory=dict)

    def part(self, name: str) -> list[ClipSample]:
        if name not in SPLIT_CODES:
            raise ValidationError(f"Unknown split part {name!r}")
        return getattr(self, name)

    @property
    def T(self) -> int:
        return self.set1_train[0].features.shape[0]

    @property
    def D(self) -> int:
        return self.set1_train[0].features.shape[1]

    def per_class_counts(self, name: str) -> dict[CompositeLabel, int]:
        """Number of logical samples (not clips) per label."""
        seen: dict[CompositeLabel, set[int]] = {}
        for clip in self.part(name):
            seen.setdefault(clip.label, set()).add(clip.sample_id)
        return {label: len(ids) for label, ids in sorted(seen.items())}


def _orthonormal_rows(rng: np.random.Generator, n: int, D: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((D, n)))
    q = q * np.sign(np.diag(r))
    return q.T.copy()


def _spread_rows(rng: np.random.Generator, n: int, D: int) -> np.ndarray:
    # More classes than dimensions: random unit vectors, redrawn on near-collisions.
    while True:
        rows = rng.standard_normal((n, D))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        cos = rows @ rows.T
        np.fill_diagonal(cos, -1.0)
        if cos.max() < MAX_COSINE:
            return rows


def _view_rotation(seed: int, view_id: int, D: int, shift: float) -> np.ndarray:
    rng = np.random.default_rng([seed, view_id, 7])
    m = np.eye(D) + shift * rng.standard_normal((D, D)) / math.sqrt(D)
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))


def _shared_rows(
    rng: np.random.Generator, n: int, D: int, rank: int, weight: float
) -> np.ndarray:
    # sqrt(1 - w)·own + sqrt(w)·shared, with own ⟂ shared: rows stay unit norm
    # and pairwise cosines are w·(s_a·s_b), at most w.
    basis = _orthonormal_rows(rng, n + rank, D)
    mix = rng.standard_normal((n, rank))
    mix /= np.linalg.norm(mix, axis=1, keepdims=True)
    shared = mix @ basis[n:]
    return math.sqrt(1.0 - weight) * basis[:n] + math.sqrt(weight) * shared


def make_prototypes(
    seed: int,
    n_classes: int,
    D: int,
    *,
    n_views: int = 1,
    view_shift: float = 0.3,
    view_noise_scale: Sequence[float] = DEFAULT_VIEW_NOISE_SCALE,
    shared_rank: int = 3,
    shared_weight: float = 0.0,
) -> PrototypeBank:
    """Deterministic prototype bank for ``(seed, n_classes, D)``.

    Prototypes are orthonormal whenever ``n_classes <= D`` and
    ``shared_weight`` is 0. A positive ``shared_weight`` mixes every prototype
    with a direction drawn from a common ``shared_rank``-dimensional subspace,
    so related errors overlap while each keeps an own component. View 0 is the
    unrotated bank; every other view applies a fixed near-identity rotation.
    """
    if D < 2:
        raise ValidationError(f"D must be >= 2, got {D}")
    if n_classes < 1:
        raise ValidationError(f"n_classes must be >= 1, got {n_classes}")
    if n_views < 1:
        raise ValidationError(f"n_views must be >= 1, got {n_views}")
    if not 0.0 <= shared_weight < MAX_COSINE:
        raise ValidationError(
            f"shared_weight must be in [0, {MAX_COSINE}), got {shared_weight}"
        )
    rng = np.random.default_rng(seed)
    if shared_weight > 0.0:
        if shared_rank < 1 or n_classes + shared_rank > D:
            raise ValidationError(
                f"shared_rank {shared_rank} needs 1 <= rank <= D - n_classes "
                f"({D - n_classes})"
            )
        protos = _shared_rows(rng, n_classes, D, shared_rank, shared_weight)
    elif n_classes <= D:
        protos = _orthonormal_rows(rng, n_classes, D)
    else:
        protos = _spread_rows(rng, n_classes, D)
    axis = rng.standard_normal(D)
    axis /= np.linalg.norm(axis)

    views = [protos]
    for v in range(1, n_views):
        rot = _view_rotation(seed, v, D, view_shift)
        views.append(protos @ rot.T)
    scales = tuple(float(s) for s in view_noise_scale[:n_views])
    scales += (1.0,) * (n_views - len(scales))
    return PrototypeBank(
        prototypes=protos,
        view_prototypes=np.stack(views),
        temporal_axis=axis,
        view_noise_scale=scales,
        seed=seed,
    )


def _as_label(label: CompositeLabel | Iterable[int]) -> CompositeLabel:
    if isinstance(label, CompositeLabel):
        return label
    return CompositeLabel(tuple(label))


def synth_clip(
    bank: PrototypeBank,
    label: CompositeLabel | Iterable[int],
    T: int,
    noise_sigma: float,
    view_id: int = 0,
    seed: int = 0,
    *,
    temporal_amp: float = 0.1,
    sample_id: int = 0,
) -> ClipSample:
    """One T×D clip feature.

    Mixture weights and phase depend on ``seed`` only, so views of the same
    logical sample share them; the noise stream depends on ``(seed, view_id)``.
    """
    label = _as_label(label)
    if noise_sigma < 0:
        raise ValidationError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if label.members[-1] >= bank.n_classes:
        raise ValidationError(
            f"Label {label} outside the bank's {bank.n_classes} classes"
        )
    protos = bank.for_view(view_id)

    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(label.size))
    phase = rng.uniform(0.0, 2.0 * math.pi)

    mixture = weights @ protos[list(label.members)]
    wave = np.sin(2.0 * math.pi * np.arange(T) / T + phase)
    features = mixture[None, :] + temporal_amp * wave[:, None] * bank.temporal_axis

    noise = np.random.default_rng([seed, view_id]).standard_normal((T, bank.D))
    features = features + noise_sigma * bank.view_noise_scale[view_id] * noise
    return ClipSample(features, label, view_id, seed, sample_id)


def sample_seed(seed: int, split: str, label_index: int, rep: int) -> int:
    """Per-sample seed, a pure function of its coordinates in the split."""
    ss = np.random.SeedSequence([seed, SPLIT_CODES[split], label_index, rep])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _generate(
    bank: PrototypeBank,
    split: str,
    labels: Sequence[CompositeLabel],
    per_label: int,
    T: int,
    noise: float,
    n_views: int,
    seed: int,
    temporal_amp: float,
) -> list[ClipSample]:
    clips = []
    sample_id = 0
    for label_index, label in enumerate(labels):
        for rep in range(per_label):
            s = sample_seed(seed, split, label_index, rep)
            for view in range(n_views):
                clips.append(
                    synth_clip(
                        bank,
                        label,
                        T,
                        noise,
                        view,
                        s,
                        temporal_amp=temporal_amp,
                        sample_id=sample_id,
                    )
                )
            sample_id += 1
    return clips


def synth_split(
    bank: PrototypeBank,
    label_space: LabelSpace,
    counts: SplitCounts,
    T: int,
    noise: float,
    n_views: int,
    seed: int,
    *,
    temporal_amp: float = 0.1,
) -> DatasetSplit:
    """Set-1 (singles, train/test) and Set-2 (composites) for one seed."""
    if n_views > bank.n_views:
        raise ValidationError(f"Bank holds {bank.n_views} views, {n_views} requested")
    if bank.n_classes < label_space.n_classes:
        raise ValidationError(
            f"Bank holds {bank.n_classes} classes, label space needs "
            f"{label_space.n_classes}"
        )
    args = (T, noise, n_views, seed, temporal_amp)
    split = DatasetSplit(
        set1_train=_generate(
            bank, "set1_train", label_space.singles, counts.train_per_class, *args
        ),
        set1_test=_generate(
            bank, "set1_test", label_space.singles, counts.test_per_class, *args
        ),
        set2=_generate(
            bank, "set2", label_space.composites, counts.per_composite, *args
        ),
        counts=counts,
        n_views=n_views,
    )
    logger.info(
        "Generated split: %d train / %d test / %d composite clips (%d views)",
        len(split.set1_train),
        len(split.set1_test),
        len(split.set2),
        n_views,
    )
    return split


def oracle_rank(sample: ClipSample, bank: PrototypeBank) -> list[tuple[int, float]]:
    """Classes ranked by cosine between the time-mean and each prototype."""
    protos = bank.for_view(sample.view_id)
    if sample.features.shape[1] != protos.shape[1]:
        raise ShapeMismatch("oracle_rank", protos.shape[1], sample.features.shape[1])
    mean = sample.features.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValidationError("Cannot rank a zero-norm feature")
    scores = protos @ mean / (np.linalg.norm(protos, axis=1) * norm)
    order = sorted(range(len(scores)), key=lambda c: (-scores[c], c))
    return [(c, float(scores[c])) for c in order]


def oracle_topk_accuracy(
    samples: Iterable[ClipSample], bank: PrototypeBank, k: int = 1
) -> float:
    """Fraction of single-class samples whose class the oracle ranks within top-k."""
    hits = total = 0
    for sample in samples:
        if sample.label.size != 1:
            raise ValidationError("oracle_topk_accuracy expects single-class samples")
        top = [c for c, _ in oracle_rank(sample, bank)[:k]]
        hits += sample.label.members[0] in top
        total += 1
    if total == 0:
        raise ValidationError("No samples to score")
    return hits / total
