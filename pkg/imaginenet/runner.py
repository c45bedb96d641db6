"""Runs a matrix of experiment cells concurrently and collects their records.

A producer feeds indexed cells to a pool of workers, each cell runs in a
separate process (or thread), and a consumer restores submission order.
"""

from __future__ import annotations

from collections.abc import AsyncIterator, Callable, Sequence
from functools import partial
import logging
from pathlib import Path

import anyio
import anyio.abc
import anyio.to_process
import anyio.to_thread

from .config import LOSSES, ExperimentConfig
from .errors import TrainingDiverged, ValidationError
from .pipeline import RunRecord, new_record, run_experiment, write_record

logger = logging.getLogger(__name__)

Cell = tuple[int, ExperimentConfig]


def run_cell(config: ExperimentConfig, out_dir: str | None) -> RunRecord:
    """One matrix cell; failures come back as records instead of exceptions."""
    try:
        return run_experiment(config, out_dir=out_dir)
    except TrainingDiverged as exc:
        record = exc.record if exc.record is not None else new_record(config)
        record.status = "failed"
        record.error = str(exc)
    except Exception as exc:
        record = new_record(config)
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
    if out_dir is not None:
        write_record(record, out_dir)
    return record


class MatrixRunner:
    def __init__(
        self,
        *,
        jobs: int = 1,
        out_dir: str | Path | None = None,
        use_processes: bool = True,
        cell: Callable[[ExperimentConfig, str | None], RunRecord] = run_cell,
    ):
        if jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {jobs}")
        self._jobs = jobs
        self._out_dir = str(out_dir) if out_dir is not None else None
        self._use_processes = use_processes
        self._cell = cell

    async def stream(
        self, configs: Sequence[ExperimentConfig]
    ) -> AsyncIterator[RunRecord]:
        """Yield one record per config, in the order the configs were given."""
        if not configs:
            raise ValidationError("The experiment matrix is empty")

        cell_send, cell_recv = anyio.create_memory_object_stream(
            max_buffer_size=len(configs)
        )
        record_send, record_recv = anyio.create_memory_object_stream(
            max_buffer_size=len(configs)
        )
        limiter = anyio.CapacityLimiter(self._jobs)

        async with anyio.create_task_group() as tg:
            tg.start_soon(self._producer, configs, cell_send)
            async with record_send:
                for _ in range(self._jobs):
                    tg.start_soon(
                        self._worker, cell_recv.clone(), record_send.clone(), limiter
                    )
            await cell_recv.aclose()

            async for record in self._reorder_consumer(record_recv):
                yield record

    async def run(self, configs: Sequence[ExperimentConfig]) -> list[RunRecord]:
        return [record async for record in self.stream(configs)]

    async def _producer(
        self,
        configs: Sequence[ExperimentConfig],
        send_stream: anyio.abc.ObjectSendStream[Cell],
    ) -> None:
        async with send_stream:
            for index, config in enumerate(configs):
                await send_stream.send((index, config))

    async def _worker(
        self,
        recv_stream: anyio.abc.ObjectReceiveStream[Cell],
        send_stream: anyio.abc.ObjectSendStream[tuple[int, RunRecord]],
        limiter: anyio.CapacityLimiter,
    ) -> None:
        async with recv_stream, send_stream:
            async for index, config in recv_stream:
                logger.info("Cell %d: %s (%s)", index, config.name, config.tag)
                if self._use_processes:
                    call = partial(
                        anyio.to_process.run_sync,
                        self._cell,
                        config,
                        self._out_dir,
                        limiter=limiter,
                    )
                else:
                    call = partial(
                        anyio.to_thread.run_sync,
                        self._cell,
                        config,
                        self._out_dir,
                        limiter=limiter,
                    )
                record = await call()
                if record.status != "ok":
                    logger.error(
                        "Cell %d (%s) failed: %s", index, config.name, record.error
                    )
                await send_stream.send((index, record))

    async def _reorder_consumer(
        self, recv_stream: anyio.abc.ObjectReceiveStream[tuple[int, RunRecord]]
    ) -> AsyncIterator[RunRecord]:
        expected = 0
        pending: dict[int, RunRecord] = {}
        async with recv_stream:
            async for index, record in recv_stream:
                pending[index] = record
                while expected in pending:
                    yield pending.pop(expected)
                    expected += 1


def _delta(run: RunRecord, base: RunRecord, key: str) -> float:
    return run.report[key] - base.report[key]


def _train_loss(record: RunRecord) -> str | None:
    return (record.config.get("train") or {}).get("loss")


def _baseline_order(base: RunRecord, loss: str | None) -> tuple:
    own = _train_loss(base)
    rank = LOSSES.index(own) if own in LOSSES else len(LOSSES)
    return (own != loss, rank, base.config_hash)


def deltas(records: Sequence[RunRecord]) -> dict[str, dict[str, float | None]]:
    """Imagination mAP gain over the direct-migration baseline with the same tag.

    Among several baselines of a tag, the one trained with the imagination
    run's ``train.loss`` wins, then ce, bce and margin in that order, then the
    lower config hash; record order never matters. Keyed by config hash; a
    run without a usable baseline gets None deltas.
    """
    baselines: dict[str, list[RunRecord]] = {}
    for r in records:
        if r.mode == "direct" and r.status == "ok":
            baselines.setdefault(r.tag, []).append(r)
    out: dict[str, dict[str, float | None]] = {}
    for r in records:
        if r.mode != "imagine":
            continue
        loss = _train_loss(r)
        pool = baselines.get(r.tag, [])
        base = min(pool, key=lambda b: _baseline_order(b, loss)) if pool else None
        usable = r.status == "ok" and base is not None
        out[r.config_hash] = {
            "macro": _delta(r, base, "macro_map") if usable else None,
            "mmit": _delta(r, base, "mmit_map") if usable else None,
        }
    return out


async def run_matrix(
    configs: Sequence[ExperimentConfig],
    *,
    jobs: int = 1,
    out_dir: str | Path | None = None,
    use_processes: bool = True,
) -> tuple[list[RunRecord], dict[str, dict[str, float | None]]]:
    runner = MatrixRunner(jobs=jobs, out_dir=out_dir, use_processes=use_processes)
    records = await runner.run(configs)
    failed = sum(r.status != "ok" for r in records)
    logger.info("Matrix finished: %d cells, %d failed", len(records), failed)
    return records, deltas(records)
