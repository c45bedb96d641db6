"""Experiment configuration: YAML files parsed into frozen dataclasses.

Seed precedence is ``--seed`` flag, then the ``IMAGINE_SEED`` environment
variable, then ``seed:`` in the file.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import product
import os
from pathlib import Path
from typing import Any

import yaml

from .aggregation import COUNT_SKETCH_CBP, AggregationStrategy
from .errors import ConfigError, ValidationError
from .fusion import FusionHeadConfig, variant_name
from .label_space import (
    LabelSpace,
    LabelSpaceConfig,
    build_label_space,
    default_label_space_config,
)
from .synth_data import DEFAULT_VIEW_NOISE_SCALE, MAX_COSINE, SplitCounts
from .utils import short_hash

SEED_ENV = "IMAGINE_SEED"
LOSSES = ("ce", "bce", "margin")
MODES = ("imagine", "direct")
SUBSETS = ("pairs", "pairs+triples", "all")
PAIR_POOLS = ("valid", "all")


@dataclass(frozen=True)
class DatasetConfig:
    D: int = 128
    T: int = 8
    noise: float = 0.8
    n_views: int = 1
    view_shift: float = 0.3
    view_noise_scale: tuple[float, ...] = DEFAULT_VIEW_NOISE_SCALE
    temporal_amp: float = 0.1
    shared_rank: int = 3
    shared_weight: float = 0.0
    train_per_class: int = 24
    test_per_class: int = 16
    per_composite: int = 8

    def __post_init__(self):
        object.__setattr__(self, "view_noise_scale", tuple(self.view_noise_scale))
        if self.noise < 0:
            raise ValidationError("dataset.noise must be >= 0")
        if not 0.0 <= self.shared_weight < MAX_COSINE:
            raise ValidationError(
                f"dataset.shared_weight must be in [0, {MAX_COSINE})"
            )
        if self.shared_rank < 1:
            raise ValidationError("dataset.shared_rank must be >= 1")

    @property
    def counts(self) -> SplitCounts:
        return SplitCounts(
            self.train_per_class, self.test_per_class, self.per_composite
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 0.001
    momentum: float = 0.9
    schedule: tuple[tuple[int, float], ...] = ((20, 0.1), (40, 0.1))
    batch_size: int = 32
    loss: str = "ce"
    k: int = 2
    pair_pool: str = "valid"
    include_correct: bool = False
    # Imagination runs only; None falls back to lr.
    imagine_lr: float | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "schedule", tuple((int(e), float(m)) for e, m in self.schedule)
        )
        if self.epochs < 1:
            raise ValidationError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("train.batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ValidationError(f"train.loss must be one of {LOSSES}")
        if not 2 <= self.k <= 4:
            raise ValidationError("train.k must be 2, 3 or 4")
        if self.pair_pool not in PAIR_POOLS:
            raise ValidationError(f"train.pair_pool must be one of {PAIR_POOLS}")
        if self.imagine_lr is not None and self.imagine_lr <= 0:
            raise ValidationError("train.imagine_lr must be > 0")


@dataclass(frozen=True)
class EvalConfig:
    subset: str = "all"
    views: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.subset not in SUBSETS:
            raise ValidationError(f"eval.subset must be one of {SUBSETS}")
        if self.views is not None:
            object.__setattr__(self, "views", tuple(int(v) for v in self.views))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    tag: str = ""
    mode: str = "imagine"
    seed: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    head: FusionHeadConfig = field(default_factory=FusionHeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    label_space: LabelSpaceConfig = field(default_factory=default_label_space_config)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.head.aggregation.kind == COUNT_SKETCH_CBP and self.train.k != 2:
            raise ValidationError("count_sketch_cbp aggregates exactly two members")
        if self.head.kind == "CA" and self.train.k > 2 and not self.head.ca_fold:
            raise ValidationError("The CA head imagines pairs unless ca_fold is set")
        # Head geometry always follows the dataset, label space and seed.
        head = replace(
            self.head,
            T=self.dataset.T,
            D=self.dataset.D,
            n_classes=self.label_space.n_errors + 1,
            seed=self.seed,
            aggregation=replace(self.head.aggregation, seed=self.seed),
        )
        object.__setattr__(self, "head", head)

    def build_label_space(self) -> LabelSpace:
        return build_label_space(self.label_space)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["head"] = self.head.to_dict()
        data["label_space"]["display_names"] = {
            str(k): v for k, v in sorted(self.label_space.display_names.items())
        }
        return data

    def to_yaml(self) -> str:
        return yaml.safe_dump(_plain(self.to_dict()), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        """Inverse of :meth:`to_dict`."""
        return cls(
            name=data["name"],
            tag=data["tag"],
            mode=data["mode"],
            seed=data["seed"],
            dataset=DatasetConfig(**data["dataset"]),
            head=FusionHeadConfig.from_dict(data["head"]),
            train=TrainConfig(**data["train"]),
            eval=EvalConfig(**data["eval"]),
            label_space=LabelSpaceConfig.from_dict(data["label_space"]),
        )

    @property
    def hash(self) -> str:
        return config_hash(self)


def _plain(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_hash(config: ExperimentConfig) -> str:
    """First 16 hex chars of SHA-256 over the canonical JSON of the config."""
    return short_hash(config.to_dict())


def _build(cls: type, data: Mapping[str, Any] | None, section: str) -> Any:
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"Unknown keys in {section}: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValidationError) as e:
        raise ConfigError(f"Invalid {section}: {e}") from e


_HEAD_KEYS = {
    "kind",
    "depth",
    "pos_emb",
    "hidden",
    "projections",
    "ffn_mult",
    "ca_fold",
}


def parse_head_variant(name: str) -> dict[str, Any]:
    """'FC', 'SA', 'SAx2', 'CA', 'CA+SA', 'CA+SAx2' → kind and depth."""
    text = name.strip()
    if text == "FC":
        return {"kind": "FC", "depth": 1}
    if text.startswith("CA"):
        rest = text[2:]
        if not rest:
            return {"kind": "CA", "depth": 1}
        if rest.startswith("+"):
            return {"kind": "CA", "depth": 1 + parse_head_variant(rest[1:])["depth"]}
    elif text.startswith("SA"):
        rest = text[2:]
        if not rest:
            return {"kind": "SA", "depth": 1}
        if rest.startswith("x") and rest[1:].isdigit():
            return {"kind": "SA", "depth": int(rest[1:])}
    raise ConfigError(f"Unknown head variant {name!r}")


def _load_label_space(value: Any, base_dir: Path) -> LabelSpaceConfig:
    if value is None:
        path = base_dir / "label_space.yaml"
        if path.is_file():
            return LabelSpaceConfig.from_yaml(path)
        return default_label_space_config()
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"Label-space file not found: {path}")
        return LabelSpaceConfig.from_yaml(path)
    if isinstance(value, Mapping):
        return LabelSpaceConfig.from_dict(value)
    raise ConfigError("label_space must be a path or a mapping")


def resolve_seed(file_seed: int, override: int | None = None) -> int:
    if override is not None:
        return int(override)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from e
    return int(file_seed)


def experiment_from_dict(
    data: Mapping[str, Any], base_dir: Path, seed_override: int | None = None
) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)} | {"aggregation"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown top-level keys: {unknown}")
    head_data = dict(data.get("head") or {})
    if "variant" in head_data:
        head_data.update(parse_head_variant(head_data.pop("variant")))
    bad = sorted(set(head_data) - _HEAD_KEYS)
    if bad:
        raise ConfigError(f"Unknown keys in head: {bad}")
    aggregation = _build(AggregationStrategy, data.get("aggregation"), "aggregation")
    try:
        label_space = _load_label_space(data.get("label_space"), base_dir)
        seed = resolve_seed(data.get("seed", 1), seed_override)
        head = FusionHeadConfig(aggregation=aggregation, **head_data)
        return ExperimentConfig(
            name=str(data.get("name", "experiment")),
            tag=str(data.get("tag", "")),
            mode=str(data.get("mode", "imagine")),
            seed=seed,
            dataset=_build(DatasetConfig, data.get("dataset"), "dataset"),
            head=head,
            train=_build(TrainConfig, data.get("train"), "train"),
            eval=_build(EvalConfig, data.get("eval"), "eval"),
            label_space=label_space,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid experiment config: {e}") from e


def read_yaml(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} must contain a mapping")
    return dict(data)


def load_experiment(
    path: str | Path, seed_override: int | None = None
) -> ExperimentConfig:
    path = Path(path)
    return experiment_from_dict(read_yaml(path), path.parent, seed_override)


@dataclass(frozen=True)
class MatrixSpec:
    """Axes of an ablation matrix; every combination becomes one run."""

    heads: tuple[str, ...] = ("FC",)
    aggregations: tuple[str, ...] = ("weighted_random",)
    pos_emb: tuple[bool, ...] = (True,)
    losses: tuple[str, ...] = ("ce",)
    seeds: tuple[int, ...] = ()
    baseline: bool = True

    def __post_init__(self):
        for name in ("heads", "aggregations", "pos_emb", "losses", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.heads or not self.aggregations:
            raise ValidationError("A matrix needs at least one head and aggregation")


def expand_matrix(
    base: Mapping[str, Any],
    spec: MatrixSpec,
    base_dir: Path,
    seed_override: int | None = None,
) -> list[ExperimentConfig]:
    """Direct-migration baselines (one per loss and seed) plus imagination runs.

    Runs sharing a seed share the tag, which is how comparisons find the
    baseline of each imagination run.
    """
    if spec.seeds and seed_override is None and not os.environ.get(SEED_ENV):
        seeds = spec.seeds
    else:
        seeds = (resolve_seed(base.get("seed", 1), seed_override),)
    base_head = {k: v for k, v in (base.get("head") or {}).items() if k != "variant"}
    configs = []
    for seed in seeds:
        tag = f"seed{seed}"
        if spec.baseline:
            for loss in spec.losses:
                data = _merged(
                    base,
                    tag=tag,
                    mode="direct",
                    name=f"direct-{loss}",
                    train={"loss": loss},
                )
                configs.append(experiment_from_dict(data, base_dir, seed))
        for head, agg, pos in product(spec.heads, spec.aggregations, spec.pos_emb):
            data = _merged(base, tag=tag, mode="imagine", aggregation={"kind": agg})
            data["head"] = {**base_head, **parse_head_variant(head), "pos_emb": pos}
            config = experiment_from_dict(data, base_dir, seed)
            name = f"{variant_name(config.head)}/{agg}"
            configs.append(replace(config, name=name))
    return configs


def _merged(base: Mapping[str, Any], **overrides: Any) -> dict[str, Any]:
    data = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping):
            data[key] = {**(data.get(key) or {}), **value}
        else:
            data[key] = value
    return data


def load_matrix(
    path: str | Path, seed_override: int | None = None
) -> list[ExperimentConfig]:
    """An ablation file holds ``base:`` (path or mapping) and ``matrix:``."""
    path = Path(path)
    data = read_yaml(path)
    unknown = sorted(set(data) - {"base", "matrix"})
    if unknown:
        raise ConfigError(f"Unknown keys in matrix file: {unknown}")
    base = data.get("base") or {}
    base_dir = path.parent
    if isinstance(base, str):
        base_path = base_dir / base
        base = read_yaml(base_path)
        base_dir = base_path.parent
    spec = _build(MatrixSpec, data.get("matrix"), "matrix")
    return expand_matrix(base, spec, base_dir, seed_override)

