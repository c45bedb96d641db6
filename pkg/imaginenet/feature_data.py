from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import partial
import json
from pathlib import Path
from typing import Any

import anyio
import anyio.to_thread
import numpy as np

from .errors import ArtifactMissing, FeatureFormatError, ShapeMismatch
from .label_space import CompositeLabel, label_hash
from .synth_data import SPLIT_CODES, ClipSample, DatasetSplit, SplitCounts

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class FeatureSpec:
    """On-disk feature layout: row-major T×D, little-endian."""

    T: int
    D: int
    dtype: str = "<f4"

    @property
    def nbytes(self) -> int:
        return self.T * self.D * np.dtype(self.dtype).itemsize


class FeatureCodec:
    """Encodes clip features to the flat binary interchange format and back."""

    @staticmethod
    def encode(features: np.ndarray, spec: FeatureSpec) -> bytes:
        if features.shape != (spec.T, spec.D):
            raise ShapeMismatch("FeatureCodec.encode", (spec.T, spec.D), features.shape)
        return np.ascontiguousarray(features, dtype=spec.dtype).tobytes()

    @staticmethod
    def decode(data: bytes, spec: FeatureSpec) -> np.ndarray:
        if len(data) != spec.nbytes:
            raise FeatureFormatError(spec, f"{len(data)} bytes")
        flat = np.frombuffer(data, dtype=spec.dtype)
        return flat.reshape(spec.T, spec.D).astype(np.float64)


def to_storage_precision(features: np.ndarray, spec: FeatureSpec) -> np.ndarray:
    """Round features through the storage dtype so in-memory and on-disk runs agree."""
    return np.asarray(features, dtype=spec.dtype).astype(np.float64)


def clip_path(split: str, clip: ClipSample) -> str:
    return f"{split}/{label_hash(clip.label)}/{clip.sample_id:05d}_{clip.view_id}.bin"


def _entry(split: str, clip: ClipSample) -> dict[str, Any]:
    return {
        "split": split,
        "members": list(clip.label.members),
        "sample_id": clip.sample_id,
        "view": clip.view_id,
        "seed": clip.seed,
        "path": clip_path(split, clip),
    }


async def write_split(
    split: DatasetSplit,
    root: str | Path,
    *,
    dataset: dict[str, Any] | None = None,
    label_space_digest: str | None = None,
    max_workers: int = 8,
) -> Path:
    """Write ``manifest.json`` plus one ``.bin`` file per clip under ``root``."""
    root = Path(root)
    spec = FeatureSpec(split.T, split.D)
    entries = []
    jobs = []
    for name in SPLIT_CODES:
        for clip in split.part(name):
            entry = _entry(name, clip)
            entries.append(entry)
            payload = FeatureCodec.encode(clip.features, spec)
            jobs.append((root / entry["path"], payload))

    limiter = anyio.CapacityLimiter(max_workers)

    def _write(path: Path, payload: bytes) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)

    async with anyio.create_task_group() as tg:
        for path, payload in jobs:
            tg.start_soon(
                partial(
                    anyio.to_thread.run_sync, _write, path, payload, limiter=limiter
                )
            )

    manifest = {
        "version": MANIFEST_VERSION,
        "T": spec.T,
        "D": spec.D,
        "dtype": spec.dtype,
        "n_views": split.n_views,
        "counts": asdict(split.counts),
        "dataset": dataset or {},
        "label_space_digest": label_space_digest,
        "clips": entries,
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def read_manifest(root: str | Path) -> dict[str, Any]:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise ArtifactMissing(path, "dataset manifest")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FeatureFormatError("JSON manifest", path) from e
    if manifest.get("version") != MANIFEST_VERSION:
        raise FeatureFormatError(
            f"manifest version {MANIFEST_VERSION}", manifest.get("version")
        )
    return manifest


async def read_split(root: str | Path, *, max_workers: int = 8) -> DatasetSplit:
    """Load a split written by :func:`write_split`."""
    root = Path(root)
    manifest = read_manifest(root)
    spec = FeatureSpec(manifest["T"], manifest["D"], manifest["dtype"])
    entries = manifest["clips"]
    raw: list[bytes] = [b""] * len(entries)
    limiter = anyio.CapacityLimiter(max_workers)

    for entry in entries:
        if not (root / entry["path"]).is_file():
            raise ArtifactMissing(root / entry["path"], "feature file")

    def _read(index: int) -> None:
        raw[index] = (root / entries[index]["path"]).read_bytes()

    async with anyio.create_task_group() as tg:
        for i in range(len(entries)):
            tg.start_soon(partial(anyio.to_thread.run_sync, _read, i, limiter=limiter))

    parts: dict[str, list[ClipSample]] = {name: [] for name in SPLIT_CODES}
    for entry, data in zip(entries, raw):
        parts[entry["split"]].append(
            ClipSample(
                features=FeatureCodec.decode(data, spec),
                label=CompositeLabel(tuple(entry["members"])),
                view_id=entry["view"],
                seed=entry["seed"],
                sample_id=entry["sample_id"],
            )
        )
    return DatasetSplit(
        set1_train=parts["set1_train"],
        set1_test=parts["set1_test"],
        set2=parts["set2"],
        counts=SplitCounts(**manifest["counts"]),
        n_views=manifest["n_views"],
        meta={
            "dataset": manifest.get("dataset", {}),
            "label_space_digest": manifest.get("label_space_digest"),
        },
    )
