# Import aggregators to register them
from . import aggregators  # noqa: F401
from .aggregation import AggregationStrategy, aggregate, manager
from .config import ExperimentConfig, load_experiment, load_matrix
from .fusion import FusionHead, FusionHeadConfig, HeadKind, infer
from .label_space import CompositeLabel, LabelSpace, build_label_space
from .metrics import EvalReport, ScoreTable, evaluate_multilabel
from .pipeline import (
    RunRecord,
    evaluate_composite,
    fuse_views,
    run_experiment,
    train_imagine,
    train_single_class,
)
from .synth_data import ClipSample, DatasetSplit, make_prototypes, synth_split

__all__ = [
    "AggregationStrategy",
    "ClipSample",
    "CompositeLabel",
    "DatasetSplit",
    "EvalReport",
    "ExperimentConfig",
    "FusionHead",
    "FusionHeadConfig",
    "HeadKind",
    "LabelSpace",
    "RunRecord",
    "ScoreTable",
    "aggregate",
    "build_label_space",
    "evaluate_composite",
    "evaluate_multilabel",
    "fuse_views",
    "infer",
    "load_experiment",
    "load_matrix",
    "make_prototypes",
    "manager",
    "run_experiment",
    "synth_split",
    "train_imagine",
    "train_single_class",
]
