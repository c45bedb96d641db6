"""
Tests for config - experiment files, seed precedence and ablation matrices.
"""

from pathlib import Path

import pytest
import yaml

from imaginenet.aggregation import COUNT_SKETCH_CBP, AggregationStrategy
from imaginenet.config import (
    SEED_ENV,
    ExperimentConfig,
    MatrixSpec,
    TrainConfig,
    expand_matrix,
    load_experiment,
    load_matrix,
    parse_head_variant,
    resolve_seed,
)
from imaginenet.errors import ConfigError, ValidationError
from imaginenet.fusion import FusionHeadConfig, HeadKind
from imaginenet.label_space import default_label_space

from .conftest import TINY, tiny_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_yaml(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


class TestLoadExperiment:
    """Test load_experiment."""

    def test_tiny(self, tiny_yaml):
        """Test a small file fills in the defaults."""
        config = load_experiment(tiny_yaml)
        assert config.name == "tiny"
        assert config.dataset.D == 16
        assert config.head.kind is HeadKind.FC
        assert config.head.hidden == 32
        assert config.train.schedule == ((2, 0.1),)
        assert config.eval.subset == "all"

    def test_head_geometry_follows_dataset(self, tiny_yaml):
        """Test T, D, class count and seed are copied into the head."""
        config = load_experiment(tiny_yaml)
        assert (config.head.T, config.head.D) == (4, 16)
        assert config.head.n_classes == 14
        assert config.head.seed == config.seed
        assert config.head.aggregation.seed == config.seed

    def test_shipped_configs(self):
        """Test the shipped configs in the repository load."""
        bench = load_experiment(CONFIGS / "benchmark.yaml")
        assert bench.build_label_space().digest() == default_label_space().digest()
        assert bench.train.lr == 0.05
        assert bench.train.imagine_lr == 0.5
        assert bench.dataset.shared_weight == 0.7
        views = load_experiment(CONFIGS / "perspectives.yaml")
        assert views.dataset.n_views == 4

    def test_missing_file(self, tmp_path):
        """Test a missing path is a config error."""
        with pytest.raises(ConfigError):
            load_experiment(tmp_path / "absent.yaml")

    def test_unparsable(self, tmp_path):
        """Test malformed YAML is a config error."""
        path = tmp_path / "bad.yaml"
        path.write_text("name: [unclosed")
        with pytest.raises(ConfigError):
            load_experiment(path)

    @pytest.mark.parametrize(
        "patch",
        [
            {"extra": 1},
            {"dataset": {"D": 16, "colour": "red"}},
            {"head": {"variant": "FC", "width": 3}},
            {"train": {"loss": "hinge"}},
            {"head": {"variant": "MLP"}},
            {"aggregation": {"kind": "weighted_random", "alpha": 1}},
            {"dataset": {"D": 16, "shared_weight": 0.99}},
            {"dataset": {"D": 16, "shared_weight": 0.5, "shared_rank": 0}},
            {"train": {"imagine_lr": 0.0}},
        ],
    )
    def test_invalid_keys_and_values(self, tmp_path, patch):
        """Test unknown keys and invalid values are rejected."""
        path = write_yaml(tmp_path / "c.yaml", {**TINY, **patch})
        with pytest.raises(ConfigError):
            load_experiment(path)

    def test_label_space_path(self, tmp_path):
        """Test label_space may point at a separate file."""
        write_yaml(tmp_path / "space.yaml", {"n_errors": 3})
        path = write_yaml(tmp_path / "c.yaml", {**TINY, "label_space": "space.yaml"})
        config = load_experiment(path)
        assert config.head.n_classes == 4
        assert len(config.build_label_space().pairs) == 3


class TestSeeds:
    """Test seed precedence."""

    def test_file_seed(self, tiny_yaml):
        """Test the file seed applies without overrides."""
        assert load_experiment(tiny_yaml).seed == 1

    def test_environment(self, tiny_yaml, monkeypatch):
        """Test IMAGINE_SEED overrides the file."""
        monkeypatch.setenv(SEED_ENV, "9")
        assert load_experiment(tiny_yaml).seed == 9

    def test_flag_wins(self, tiny_yaml, monkeypatch):
        """Test an explicit override beats the environment."""
        monkeypatch.setenv(SEED_ENV, "9")
        assert load_experiment(tiny_yaml, seed_override=4).seed == 4

    def test_bad_environment(self, monkeypatch):
        """Test a non-integer environment seed is rejected."""
        monkeypatch.setenv(SEED_ENV, "many")
        with pytest.raises(ConfigError):
            resolve_seed(1)


class TestExperimentConfig:
    """Test ExperimentConfig invariants and hashing."""

    def test_hash_is_stable(self):
        """Test equal configs share a hash and changes alter it."""
        a, b = tiny_experiment(), tiny_experiment()
        assert a.hash == b.hash
        assert len(a.hash) == 16
        assert tiny_experiment(seed=2).hash != a.hash

    def test_dict_round_trip(self):
        """Test from_dict inverts to_dict."""
        config = tiny_experiment()
        assert ExperimentConfig.from_dict(config.to_dict()) == config

    def test_yaml_is_plain(self):
        """Test the YAML dump has no Python tags."""
        text = tiny_experiment().to_yaml()
        assert "!!python" not in text
        assert yaml.safe_load(text)["dataset"]["D"] == 16

    def test_cbp_needs_pairs(self):
        """Test CBP runs imagine pairs only."""
        head = FusionHeadConfig(
            aggregation=AggregationStrategy(kind=COUNT_SKETCH_CBP, sketch_dim=8)
        )
        with pytest.raises(ValidationError):
            tiny_experiment(head=head, train=TrainConfig(k=3))

    def test_ca_needs_fold_beyond_pairs(self):
        """Test CA with k > 2 needs ca_fold."""
        with pytest.raises(ValidationError):
            tiny_experiment(head=FusionHeadConfig(kind="CA"), train=TrainConfig(k=3))
        config = tiny_experiment(
            head=FusionHeadConfig(kind="CA", ca_fold=True), train=TrainConfig(k=3)
        )
        assert config.head.ca_fold

    def test_invalid_mode(self):
        """Test unknown modes are rejected."""
        with pytest.raises(ValidationError):
            tiny_experiment(mode="transfer")


class TestHeadVariants:
    """Test parse_head_variant."""

    @pytest.mark.parametrize(
        ("name", "kind", "depth"),
        [
            ("FC", "FC", 1),
            ("SA", "SA", 1),
            ("SAx3", "SA", 3),
            ("CA", "CA", 1),
            ("CA+SA", "CA", 2),
            ("CA+SAx2", "CA", 3),
        ],
    )
    def test_parse(self, name, kind, depth):
        """Test variant names map to kind and depth."""
        assert parse_head_variant(name) == {"kind": kind, "depth": depth}

    @pytest.mark.parametrize("name", ["", "SAx", "CA+", "FCx2", "RNN"])
    def test_unknown(self, name):
        """Test malformed names are rejected."""
        with pytest.raises(ConfigError):
            parse_head_variant(name)


class TestMatrix:
    """Test ablation matrix expansion."""

    def test_expansion_count(self, tmp_path):
        """Test baselines per loss and seed plus every head/aggregation/pos combo."""
        spec = MatrixSpec(
            heads=("FC", "SA", "CA"),
            aggregations=("weighted_random", "vanilla_sum"),
            pos_emb=(True, False),
            losses=("ce", "bce"),
            seeds=(1, 2),
        )
        configs = expand_matrix(TINY, spec, tmp_path)
        direct = [c for c in configs if c.mode == "direct"]
        assert len(direct) == 2 * 2
        assert len(configs) - len(direct) == 2 * 3 * 2 * 2
        assert {c.tag for c in configs} == {"seed1", "seed2"}
        assert len({c.hash for c in configs}) == len(configs)

    def test_names(self, tmp_path):
        """Test runs are named after variant and aggregation."""
        spec = MatrixSpec(heads=("SAx2",), pos_emb=(False,), baseline=False)
        (config,) = expand_matrix(TINY, spec, tmp_path)
        assert config.name == "SAx2 w/o PosEmb/weighted_random"
        assert config.head.depth == 2

    def test_seed_override_collapses_seeds(self, tmp_path):
        """Test an explicit seed replaces the seed axis."""
        spec = MatrixSpec(seeds=(1, 2, 3))
        configs = expand_matrix(TINY, spec, tmp_path, seed_override=7)
        assert {c.seed for c in configs} == {7}

    def test_shipped_ablation(self):
        """Test the shipped ablation file expands to 3 seeds of 1 + 8 runs."""
        configs = load_matrix(CONFIGS / "ablation.yaml")
        assert len(configs) == 3 * (1 + 4 * 2)

    def test_unknown_matrix_key(self, tmp_path):
        """Test typos in the matrix block are rejected."""
        data = {"base": TINY, "matrix": {"head": ["FC"]}}
        path = write_yaml(tmp_path / "m.yaml", data)
        with pytest.raises(ConfigError):
            load_matrix(path)
