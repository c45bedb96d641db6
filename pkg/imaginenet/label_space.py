"""Single-class and composite label spaces.

Class 0 is the correct action and lives in the score space only; composite
labels are built from the error classes 1..n_errors.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
import hashlib
from itertools import combinations
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import LabelSpaceError

CORRECT = 0


class LabelKind(str, Enum):
    SINGLE = "single"
    PAIR = "pair"
    TRIPLE = "triple"
    QUADRUPLE = "quadruple"


_KIND_BY_SIZE = {
    1: LabelKind.SINGLE,
    2: LabelKind.PAIR,
    3: LabelKind.TRIPLE,
    4: LabelKind.QUADRUPLE,
}


@dataclass(frozen=True, order=True)
class CompositeLabel:
    """Sorted, duplicate-free set of class ids (1 to 4 members)."""

    members: tuple[int, ...]

    def __post_init__(self):
        members = tuple(int(m) for m in self.members)
        if not members:
            raise LabelSpaceError("A label needs at least one member")
        if len(members) not in _KIND_BY_SIZE:
            raise LabelSpaceError("A label holds at most 4 members", members)
        if any(m < 0 for m in members):
            raise LabelSpaceError("Class ids are non-negative", members)
        if len(set(members)) != len(members):
            raise LabelSpaceError("Duplicate class id in label", members)
        if len(members) > 1 and CORRECT in members:
            raise LabelSpaceError(
                "Correct class cannot be part of a composite", members
            )
        object.__setattr__(self, "members", tuple(sorted(members)))

    @classmethod
    def of(cls, *members: int) -> CompositeLabel:
        return cls(tuple(members))

    @property
    def kind(self) -> LabelKind:
        return _KIND_BY_SIZE[len(self.members)]

    @property
    def size(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __str__(self) -> str:
        return "+".join(str(m) for m in self.members)


def _canonical_pair(pair: Iterable[int]) -> tuple[int, int]:
    items = tuple(int(p) for p in pair)
    if len(items) != 2 or items[0] == items[1]:
        raise LabelSpaceError("An exclusion is a pair of two distinct ids", items)
    a, b = sorted(items)
    return a, b


@dataclass(frozen=True)
class ExclusionList:
    """Unordered error-class pairs that cannot co-occur."""

    pairs: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        canonical = frozenset(_canonical_pair(p) for p in self.pairs)
        for a, b in canonical:
            if a <= CORRECT:
                raise LabelSpaceError("Exclusions reference error classes only", (a, b))
        object.__setattr__(self, "pairs", canonical)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Iterable[int]]) -> ExclusionList:
        return cls(frozenset(_canonical_pair(p) for p in pairs))

    def validate(self, n_errors: int) -> None:
        for pair in sorted(self.pairs):
            if pair[1] > n_errors:
                raise LabelSpaceError(
                    f"Exclusion references an id outside 1..{n_errors}", pair
                )

    def __contains__(self, pair: object) -> bool:
        try:
            return _canonical_pair(pair) in self.pairs  # type: ignore[arg-type]
        except (LabelSpaceError, TypeError, ValueError):
            return False

    def __len__(self) -> int:
        return len(self.pairs)

    def sorted_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.pairs)


def enumerate_pairs(n_errors: int, exclusions: ExclusionList) -> list[CompositeLabel]:
    """All unordered error pairs that are not excluded, in lexicographic order."""
    if n_errors < 2:
        raise LabelSpaceError("Pair enumeration needs n_errors >= 2", n_errors)
    exclusions.validate(n_errors)
    return [
        CompositeLabel((a, b))
        for a, b in combinations(range(1, n_errors + 1), 2)
        if (a, b) not in exclusions.pairs
    ]


def filter_composite(candidate: CompositeLabel, exclusions: ExclusionList) -> bool:
    """True iff no 2-subset of the candidate is excluded."""
    return not any(
        pair in exclusions.pairs for pair in combinations(candidate.members, 2)
    )


def excluded_subsets(
    candidate: CompositeLabel, exclusions: ExclusionList
) -> list[tuple[int, int]]:
    return [p for p in combinations(candidate.members, 2) if p in exclusions.pairs]


def encode_multi_hot(label: CompositeLabel, n_classes: int) -> np.ndarray:
    """Binary vector with ones at the member positions."""
    if label.members[-1] >= n_classes:
        raise LabelSpaceError(
            f"Class id outside the {n_classes}-class score space", label.members
        )
    vec = np.zeros(n_classes, dtype=np.uint8)
    vec[list(label.members)] = 1
    return vec


def label_hash(label: CompositeLabel) -> str:
    """Short stable digest used in file paths."""
    return hashlib.sha256(str(label).encode()).hexdigest()[:10]


@dataclass(frozen=True)
class LabelSpaceConfig:
    n_errors: int = 13
    exclusions: tuple[tuple[int, int], ...] = ()
    triples: tuple[tuple[int, ...], ...] = ()
    quadruples: tuple[tuple[int, ...], ...] = ()
    display_names: Mapping[int, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LabelSpaceConfig:
        known = {"n_errors", "exclusions", "triples", "quadruples", "display_names"}
        unknown = set(data) - known
        if unknown:
            raise LabelSpaceError("Unknown label-space keys", sorted(unknown))
        names = data.get("display_names") or {}
        return cls(
            n_errors=int(data.get("n_errors", 13)),
            exclusions=tuple(tuple(p) for p in data.get("exclusions") or ()),
            triples=tuple(tuple(t) for t in data.get("triples") or ()),
            quadruples=tuple(tuple(q) for q in data.get("quadruples") or ()),
            display_names={int(k): str(v) for k, v in names.items()},
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> LabelSpaceConfig:
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})


@dataclass(frozen=True)
class LabelSpace:
    n_errors: int
    singles: tuple[CompositeLabel, ...]
    pairs: tuple[CompositeLabel, ...]
    triples: tuple[CompositeLabel, ...]
    quadruples: tuple[CompositeLabel, ...]
    exclusions: ExclusionList
    display_names: Mapping[int, str] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return self.n_errors + 1

    @property
    def error_ids(self) -> list[int]:
        return list(range(1, self.n_errors + 1))

    @property
    def composites(self) -> tuple[CompositeLabel, ...]:
        return self.pairs + self.triples + self.quadruples

    def name_of(self, label: CompositeLabel | int) -> str:
        if isinstance(label, int):
            default = "Correct" if label == CORRECT else f"E{label}"
            return self.display_names.get(label, default)
        return "+".join(self.name_of(m) for m in label.members)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_errors": self.n_errors,
            "n_classes": self.n_classes,
            "exclusions": [list(p) for p in self.exclusions.sorted_pairs()],
            "singles": [list(s.members) for s in self.singles],
            "pairs": [list(p.members) for p in self.pairs],
            "triples": [list(t.members) for t in self.triples],
            "quadruples": [list(q.members) for q in self.quadruples],
            "display_names": dict(sorted(self.display_names.items())),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    def digest(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()


def _checked_multi(
    groups: Iterable[Iterable[int]],
    size: int,
    n_errors: int,
    exclusions: ExclusionList,
) -> tuple[CompositeLabel, ...]:
    labels = set()
    for members in groups:
        label = CompositeLabel(tuple(members))
        if label.size != size:
            raise LabelSpaceError(f"Expected {size} members", label.members)
        if label.members[0] < 1 or label.members[-1] > n_errors:
            raise LabelSpaceError(f"Members must lie in 1..{n_errors}", label.members)
        bad = excluded_subsets(label, exclusions)
        if bad:
            raise LabelSpaceError(
                f"Composite {label.members} contains excluded pairs", bad
            )
        labels.add(label)
    return tuple(sorted(labels))


def build_label_space(config: LabelSpaceConfig) -> LabelSpace:
    exclusions = ExclusionList.from_pairs(config.exclusions)
    if len(exclusions) != len(config.exclusions):
        raise LabelSpaceError("Duplicate exclusion pair", config.exclusions)
    pairs = enumerate_pairs(config.n_errors, exclusions)
    return LabelSpace(
        n_errors=config.n_errors,
        singles=tuple(CompositeLabel((c,)) for c in range(config.n_errors + 1)),
        pairs=tuple(pairs),
        triples=_checked_multi(config.triples, 3, config.n_errors, exclusions),
        quadruples=_checked_multi(config.quadruples, 4, config.n_errors, exclusions),
        exclusions=exclusions,
        display_names=dict(config.display_names),
    )


# Synthetic placeholder lists; the real lists drop in through configs/label_space.yaml.
DEFAULT_EXCLUSIONS: tuple[tuple[int, int], ...] = (
    (1, 3), (1, 5), (2, 4), (2, 6), (3, 4), (3, 7), (4, 8), (4, 13), (5, 6), (5, 9),
    (6, 10), (7, 8), (7, 11), (8, 12), (9, 10), (9, 13), (10, 11), (11, 12), (12, 13),
)  # fmt: skip
DEFAULT_TRIPLES: tuple[tuple[int, int, int], ...] = (
    (1, 2, 7), (1, 4, 6), (1, 8, 10), (2, 3, 5), (2, 8, 9),
    (3, 6, 12), (4, 5, 7), (5, 8, 11), (6, 9, 11), (7, 10, 13),
)  # fmt: skip
DEFAULT_QUADRUPLES: tuple[tuple[int, int, int, int], ...] = (
    (1, 2, 7, 9), (1, 4, 6, 12), (2, 3, 5, 10), (3, 6, 9, 12), (5, 8, 11, 13),
)  # fmt: skip
DEFAULT_DISPLAY_NAMES = {0: "Correct", 1: "Overlap Hands", 2: "Bending Arms"}


def default_label_space_config() -> LabelSpaceConfig:
    return LabelSpaceConfig(
        n_errors=13,
        exclusions=DEFAULT_EXCLUSIONS,
        triples=DEFAULT_TRIPLES,
        quadruples=DEFAULT_QUADRUPLES,
        display_names=dict(DEFAULT_DISPLAY_NAMES),
    )


def default_label_space() -> LabelSpace:
    return build_label_space(default_label_space_config())
