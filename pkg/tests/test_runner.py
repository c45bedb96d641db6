"""
Tests for runner - concurrent matrix execution and baseline deltas.
"""

import time

import pytest

from imaginenet.errors import TrainingDiverged, ValidationError
from imaginenet.pipeline import RunRecord, new_record
from imaginenet.runner import MatrixRunner, deltas, run_cell, run_matrix

from .conftest import tiny_experiment


def fake_cell(config, out_dir):
    # later cells finish first
    time.sleep(0.01 * (5 - config.seed))
    record = new_record(config)
    record.report = {"macro_map": 0.1 * config.seed, "mmit_map": 0.2}
    return record


def make_record(tag, mode, macro, mmit=0.5, status="ok", name="r", loss=None):
    return RunRecord(
        config_hash=f"{tag}-{mode}-{name}",
        name=name,
        tag=tag,
        mode=mode,
        report={"macro_map": macro, "mmit_map": mmit} if status == "ok" else None,
        status=status,
        config={"train": {"loss": loss}} if loss else {},
    )


class TestMatrixRunner:
    """Test MatrixRunner ordering and failure handling."""

    @pytest.mark.asyncio
    async def test_submission_order(self):
        """Test records come back in config order regardless of finish order."""
        configs = [tiny_experiment(seed=s) for s in range(1, 5)]
        runner = MatrixRunner(jobs=4, use_processes=False, cell=fake_cell)
        records = await runner.run(configs)
        assert [r.seed for r in records] == [1, 2, 3, 4]

    @pytest.mark.asyncio
    async def test_stream(self):
        """Test streaming yields every record once."""
        configs = [tiny_experiment(seed=s) for s in (1, 2)]
        runner = MatrixRunner(jobs=2, use_processes=False, cell=fake_cell)
        hashes = [r.config_hash async for r in runner.stream(configs)]
        assert hashes == [c.hash for c in configs]

    @pytest.mark.asyncio
    async def test_empty_matrix(self):
        """Test an empty matrix is rejected."""
        runner = MatrixRunner(use_processes=False, cell=fake_cell)
        with pytest.raises(ValidationError):
            await runner.run([])

    def test_invalid_jobs(self):
        """Test at least one worker is required."""
        with pytest.raises(ValidationError):
            MatrixRunner(jobs=0)

    @pytest.mark.asyncio
    async def test_real_cells_in_threads(self, tmp_path):
        """Test two tiny runs end to end with records on disk."""
        configs = [tiny_experiment(mode="direct"), tiny_experiment()]
        records, gains = await run_matrix(
            configs, jobs=2, out_dir=tmp_path, use_processes=False
        )
        assert [r.mode for r in records] == ["direct", "imagine"]
        assert all(r.status == "ok" for r in records)
        assert len(list((tmp_path / "records").glob("*.json"))) == 2
        gain = gains[configs[1].hash]
        expected = records[1].report["macro_map"] - records[0].report["macro_map"]
        assert gain["macro"] == pytest.approx(expected)

    @pytest.mark.asyncio
    async def test_real_cell_in_process(self, tmp_path):
        """Test a cell runs in a worker process."""
        records, _ = await run_matrix([tiny_experiment()], jobs=1, out_dir=tmp_path)
        assert records[0].status == "ok"
        assert records[0].checkpoint_hash


class TestRunCell:
    """Test run_cell failure capture."""

    def test_exception_becomes_failed_record(self, tmp_path, monkeypatch):
        """Test an unexpected error is recorded rather than raised."""

        def boom(config, split=None, out_dir=None):
            raise RuntimeError("boom")

        monkeypatch.setattr("imaginenet.runner.run_experiment", boom)
        config = tiny_experiment()
        result = run_cell(config, str(tmp_path))
        assert result.status == "failed"
        assert result.error == "RuntimeError: boom"
        assert (tmp_path / "records" / f"{config.hash}.json").is_file()

    def test_divergence_keeps_partial_record(self, monkeypatch):
        """Test the partial record of a diverged run is kept."""
        config = tiny_experiment()
        partial = new_record(config)
        partial.loss_curve = [0.7, float("inf")]

        def diverge(config, split=None, out_dir=None):
            raise TrainingDiverged(1, partial)

        monkeypatch.setattr("imaginenet.runner.run_experiment", diverge)
        result = run_cell(config, None)
        assert result.status == "failed"
        assert result.loss_curve == [0.7, float("inf")]
        assert "epoch 1" in result.error

    @pytest.mark.asyncio
    async def test_failed_cell_does_not_stop_matrix(self, monkeypatch):
        """Test the remaining cells still run after a failure."""

        def flaky(config, split=None, out_dir=None):
            if config.seed == 2:
                raise RuntimeError("bad seed")
            return new_record(config)

        monkeypatch.setattr("imaginenet.runner.run_experiment", flaky)
        configs = [tiny_experiment(seed=s) for s in (1, 2, 3)]
        records, _ = await run_matrix(configs, jobs=2, use_processes=False)
        assert [r.status for r in records] == ["ok", "failed", "ok"]


class TestDeltas:
    """Test deltas."""

    def test_gain_over_baseline(self):
        """Test the gain is measured against the baseline with the same tag."""
        records = [
            make_record("seed1", "direct", 0.20, 0.40),
            make_record("seed1", "imagine", 0.35, 0.50),
            make_record("seed2", "direct", 0.10, 0.30),
            make_record("seed2", "imagine", 0.15, 0.35),
        ]
        out = deltas(records)
        assert out["seed1-imagine-r"]["macro"] == pytest.approx(0.15)
        assert out["seed1-imagine-r"]["mmit"] == pytest.approx(0.10)
        assert out["seed2-imagine-r"]["macro"] == pytest.approx(0.05)
        assert "seed1-direct-r" not in out

    def test_missing_or_failed_baseline(self):
        """Test runs without a usable baseline get None."""
        records = [
            make_record("seed1", "direct", 0.0, status="failed"),
            make_record("seed1", "imagine", 0.3),
            make_record("seed2", "imagine", 0.3),
        ]
        out = deltas(records)
        assert out["seed1-imagine-r"] == {"macro": None, "mmit": None}
        assert out["seed2-imagine-r"] == {"macro": None, "mmit": None}

    def test_failed_run(self):
        """Test failed imagination runs get None."""
        records = [
            make_record("seed1", "direct", 0.2),
            make_record("seed1", "imagine", 0.0, status="failed"),
        ]
        assert deltas(records)["seed1-imagine-r"]["macro"] is None

    def test_baseline_matches_loss(self):
        """Test the baseline trained with the run's loss is chosen in any order."""
        ce = make_record("seed1", "direct", 0.20, 0.40, name="direct-ce", loss="ce")
        bce = make_record("seed1", "direct", 0.30, 0.20, name="direct-bce", loss="bce")
        run = make_record("seed1", "imagine", 0.35, 0.50, name="fc", loss="ce")
        first = deltas([ce, bce, run])
        assert first == deltas([bce, ce, run]) == deltas([run, bce, ce])
        assert first["seed1-imagine-fc"]["macro"] == pytest.approx(0.15)

        run_bce = make_record("seed1", "imagine", 0.35, 0.50, name="fc", loss="bce")
        assert deltas([ce, bce, run_bce])["seed1-imagine-fc"]["macro"] == (
            pytest.approx(0.05)
        )

    def test_baseline_preference_without_loss(self):
        """Test ce is preferred when the run does not name its loss."""
        margin = make_record("seed1", "direct", 0.10, name="m", loss="margin")
        ce = make_record("seed1", "direct", 0.20, name="c", loss="ce")
        run = make_record("seed1", "imagine", 0.35)
        for order in ([margin, ce, run], [ce, margin, run]):
            assert deltas(order)["seed1-imagine-r"]["macro"] == pytest.approx(0.15)
