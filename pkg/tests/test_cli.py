"""
Tests for the command line - subcommands, outputs and exit codes.
"""

import io

import pytest
from rich.console import Console
import yaml

from imaginenet import cli, runner
from imaginenet.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_MISSING, EXIT_OK, main
from imaginenet.config import load_experiment
from imaginenet.errors import TrainingDiverged
from imaginenet.pipeline import new_record

from .conftest import TINY


def invoke(*argv):
    buffer = io.StringIO()
    code = main(list(argv), console=Console(file=buffer, width=120))
    return code, buffer.getvalue()


@pytest.fixture
def dataset(tmp_path, tiny_yaml):
    out = tmp_path / "data"
    code, _ = invoke("gen-data", "--config", str(tiny_yaml), "--out", str(out))
    assert code == EXIT_OK
    return out


@pytest.fixture
def trained(tmp_path, tiny_yaml, dataset):
    out = tmp_path / "results"
    code, _ = invoke(
        "train-imagine",
        "--config",
        str(tiny_yaml),
        "--data",
        str(dataset),
        "--out",
        str(out),
    )
    assert code == EXIT_OK
    return out, load_experiment(tiny_yaml).hash


class TestErrors:
    """Test error exit codes."""

    def test_missing_config_flag(self, tmp_path):
        """Test commands that need --config fail without it."""
        code, text = invoke("train-imagine", "--out", str(tmp_path))
        assert code == EXIT_CONFIG
        assert "needs --config" in text

    def test_invalid_config(self, tmp_path):
        """Test unknown keys give the config exit code."""
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({**TINY, "colour": "red"}))
        code, _ = invoke("train-single", "--config", str(path), "--out", str(tmp_path))
        assert code == EXIT_CONFIG

    def test_missing_checkpoint(self, tmp_path):
        """Test evaluating an absent checkpoint is a missing artifact."""
        code, _ = invoke("eval", "--checkpoint", str(tmp_path / "none.ckpt"))
        assert code == EXIT_MISSING

    def test_empty_results(self, tmp_path):
        """Test report without records is a missing artifact."""
        code, _ = invoke("report", str(tmp_path))
        assert code == EXIT_MISSING

    def test_bad_views(self):
        """Test malformed --views is an argument error."""
        with pytest.raises(SystemExit):
            invoke("eval", "--checkpoint", "x.ckpt", "--views", "a,b")

    def test_divergence(self, tmp_path, tiny_yaml, monkeypatch):
        """Test a diverged run exits with failure and keeps its record."""
        config = load_experiment(tiny_yaml)

        def diverge(config, split=None, out_dir=None):
            raise TrainingDiverged(0, new_record(config))

        monkeypatch.setattr(cli, "run_experiment", diverge)
        code, _ = invoke(
            "train-imagine", "--config", str(tiny_yaml), "--out", str(tmp_path)
        )
        assert code == EXIT_FAILED
        assert (tmp_path / "records" / f"{config.hash}.json").is_file()


class TestGenData:
    """Test gen-data."""

    def test_writes_dataset(self, dataset):
        """Test the manifest and shards are written."""
        assert (dataset / "manifest.json").is_file()
        assert any(dataset.iterdir())

    def test_refuses_overwrite(self, dataset, tiny_yaml):
        """Test an existing dataset needs --force."""
        args = ("gen-data", "--config", str(tiny_yaml), "--out", str(dataset))
        assert invoke(*args)[0] == EXIT_CONFIG
        assert invoke(*args, "--force")[0] == EXIT_OK


class TestTrain:
    """Test train-single and train-imagine."""

    def test_imagine_writes_artifacts(self, trained):
        """Test the record and checkpoint are written."""
        out, config_hash = trained
        assert (out / "records" / f"{config_hash}.json").is_file()
        assert (out / "checkpoints" / f"{config_hash}.ckpt").is_file()

    def test_rerun_skips(self, trained, tiny_yaml):
        """Test an existing record is not recomputed."""
        out, _ = trained
        code, text = invoke(
            "train-imagine", "--config", str(tiny_yaml), "--out", str(out)
        )
        assert code == EXIT_OK
        assert "already recorded" in text

    def test_single(self, tmp_path, tiny_yaml, dataset):
        """Test direct migration also reports the single-class score."""
        code, text = invoke(
            "train-single",
            "--config",
            str(tiny_yaml),
            "--data",
            str(dataset),
            "--out",
            str(tmp_path / "single"),
            "--loss",
            "bce",
        )
        assert code == EXIT_OK
        assert "Single-class" in text
        assert "macro_map" in text


class TestEval:
    """Test eval."""

    def test_checkpoint(self, trained, dataset, tmp_path):
        """Test a checkpoint evaluates with its embedded config."""
        out, config_hash = trained
        ckpt = out / "checkpoints" / f"{config_hash}.ckpt"
        code, text = invoke(
            "eval",
            "--checkpoint",
            str(ckpt),
            "--data",
            str(dataset),
            "--subset",
            "pairs",
            "--dump-features",
            str(tmp_path / "emb"),
        )
        assert code == EXIT_OK
        assert "mmit_map" in text
        assert "Embeddings written" in text

    def test_all_views(self, trained, dataset):
        """Test --views all prints the perspective table."""
        out, config_hash = trained
        ckpt = out / "checkpoints" / f"{config_hash}.ckpt"
        code, text = invoke(
            "eval", "--checkpoint", str(ckpt), "--data", str(dataset), "--views", "all"
        )
        assert code == EXIT_OK
        assert "Perspective combinations" in text
        assert "#1" in text


class TestAblateAndReport:
    """Test ablate and report."""

    def test_matrix(self, tmp_path, monkeypatch):
        """Test a small matrix runs, reports and skips recorded cells."""

        calls = []

        async def in_threads(configs, *, jobs, out_dir):
            calls.append(len(configs))
            return await runner.run_matrix(
                configs, jobs=jobs, out_dir=out_dir, use_processes=False
            )

        monkeypatch.setattr(cli, "run_matrix", in_threads)
        path = tmp_path / "matrix.yaml"
        path.write_text(
            yaml.safe_dump({"base": TINY, "matrix": {"heads": ["FC"], "seeds": [1]}})
        )
        out = tmp_path / "ablation"
        args = ("ablate", "--config", str(path), "--out", str(out), "--jobs", "2")
        code, text = invoke(*args)
        assert code == EXIT_OK
        assert "Direct migration" in text
        assert len(list((out / "records").glob("*.json"))) == 2
        assert (out / "comparison.csv").is_file()

        assert invoke(*args)[0] == EXIT_OK
        assert calls == [2]

        code, text = invoke("report", str(out))
        assert code == EXIT_OK
        assert "CSV written" in text

    def test_selftest(self):
        """Test the self-test passes from the command line."""
        code, text = invoke("selftest")
        assert code == EXIT_OK
        assert "PASS" in text
