"""Dataset ingestion, browsing, and the per-checkpoint prediction cache.

Datasets follow the class-per-directory layout
`<data_root>/{train,test}/<class_name>/<file>.{png,jpg}`. Image ids are the
split-qualified POSIX relative paths, which stay stable across restarts and
double as mask and cache keys.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DatasetConfig
from .errors import (
    DimensionMismatch,
    InvalidArgument,
    MissingSplit,
    PredictionsUnavailable,
    UnknownClassDirectory,
    UnknownImageId,
)
from .imgio import content_type_for, decode_image_file

SPLITS = ("train", "test")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
LIST_FILTERS = ("all", "correct", "misclassified", "annotated")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    split: str
    class_label: int
    relative_path: str
    width: int
    height: int
    channels: int


@dataclass(frozen=True)
class PredictionSummary:
    image_id: str
    predicted_label: int
    probabilities: tuple[float, ...]
    correct: bool
    checkpoint_id: str

    def to_dict(self) -> dict:
        return {
            "predicted_label": self.predicted_label,
            "probabilities": list(self.probabilities),
            "correct": self.correct,
        }


class Dataset:
    """Immutable enumeration of one ingested dataset."""

    def __init__(self, root: Path, config: DatasetConfig, records: list[ImageRecord]):
        self.root = Path(root)
        self.config = config
        self.records = records
        self.by_id = {r.image_id: r for r in records}
        self._array_cache: dict[str, np.ndarray] = {}

    @property
    def class_names(self) -> list[str]:
        return self.config.class_names

    def split_records(self, split: str) -> list[ImageRecord]:
        return [r for r in self.records if r.split == split]

    def record(self, image_id: str) -> ImageRecord:
        rec = self.by_id.get(image_id)
        if rec is None:
            raise UnknownImageId(f"unknown image id: {image_id!r}")
        return rec

    def file_path(self, image_id: str) -> Path:
        return self.root / self.record(image_id).image_id

    def image_bytes(self, image_id: str) -> tuple[bytes, str]:
        """Original file bytes, unmodified, plus the content type."""
        rec = self.record(image_id)
        data = (self.root / rec.image_id).read_bytes()
        return data, content_type_for(rec.relative_path)

    def image_array(self, image_id: str) -> np.ndarray:
        """Canonical (C, H, W) float64 array in [0, 1]; cached per id."""
        arr = self._array_cache.get(image_id)
        if arr is None:
            arr = decode_image_file(self.root / self.record(image_id).image_id)
            self._array_cache[image_id] = arr
        return arr

    def list_images(
        self,
        split: str,
        page: int,
        page_size: int,
        flt: str = "all",
        predictions: dict[str, PredictionSummary] | None = None,
        annotated_ids: set[str] | None = None,
    ) -> tuple[list[ImageRecord], int]:
        """One page of the filtered split, plus the filtered total.

        `predictions` must cover the split for the correct/misclassified
        filters; `annotated_ids` is required for the annotated filter. Pages
        beyond the end return an empty list with the correct total.
        """
        if split not in SPLITS:
            raise InvalidArgument(f"split must be one of {SPLITS}, got {split!r}")
        if flt not in LIST_FILTERS:
            raise InvalidArgument(f"filter must be one of {LIST_FILTERS}, got {flt!r}")
        if page < 0 or page_size < 1:
            raise InvalidArgument("page must be >= 0 and page_size >= 1")

        candidates = self.split_records(split)
        if flt in ("correct", "misclassified"):
            if predictions is None:
                raise PredictionsUnavailable(
                    f"filter {flt!r} requires a populated prediction cache"
                )
            missing = [r.image_id for r in candidates if r.image_id not in predictions]
            if missing:
                raise PredictionsUnavailable(
                    f"prediction cache missing {len(missing)} records "
                    f"(first: {missing[0]!r})"
                )
            want_correct = flt == "correct"
            candidates = [
                r for r in candidates if predictions[r.image_id].correct == want_correct
            ]
        elif flt == "annotated":
            if annotated_ids is None:
                raise PredictionsUnavailable("filter 'annotated' requires the annotation store")
            candidates = [r for r in candidates if r.image_id in annotated_ids]

        total = len(candidates)
        start = page * page_size
        return candidates[start: start + page_size], total


def ingest_dataset(data_root, config: DatasetConfig) -> Dataset:
    """Enumerate the directory tree into ImageRecords.

    Class label order comes from config.class_names, not the directory
    listing; record order is lexicographic by relative path so two ingestions
    of the same tree enumerate identically.
    """
    root = Path(data_root)
    for split in SPLITS:
        if not (root / split).is_dir():
            raise MissingSplit(f"data root has no {split}/ directory: {root}")

    label_of = {name: i for i, name in enumerate(config.class_names)}
    channels_cfg, height_cfg, width_cfg = config.input_shape
    records: list[ImageRecord] = []
    for split in SPLITS:
        split_dir = root / split
        for entry in sorted(os.listdir(split_dir)):
            class_dir = split_dir / entry
            if not class_dir.is_dir():
                continue
            if entry not in label_of:
                raise UnknownClassDirectory(f"{split}/{entry}")
            for fname in sorted(os.listdir(class_dir)):
                if not fname.lower().endswith(IMAGE_EXTENSIONS):
                    continue
                rel = f"{split}/{entry}/{fname}"
                arr = decode_image_file(class_dir / fname)
                c, h, w = arr.shape
                if (c, h, w) != (channels_cfg, height_cfg, width_cfg):
                    raise DimensionMismatch(
                        f"{rel}: decoded shape {(c, h, w)} does not match "
                        f"configured input_shape {config.input_shape}"
                    )
                records.append(
                    ImageRecord(
                        image_id=rel,
                        split=split,
                        class_label=label_of[entry],
                        relative_path=rel,
                        width=w,
                        height=h,
                        channels=c,
                    )
                )
    records.sort(key=lambda r: r.relative_path)
    return Dataset(root, config, records)


class PredictionCache:
    """One JSON file per checkpoint: image_id -> prediction summary.

    Writes are temp-then-rename so a crash never leaves a torn cache file.
    """

    def __init__(self, predictions_dir):
        self.dir = Path(predictions_dir)

    def path_for(self, checkpoint_id: str) -> Path:
        return self.dir / f"{checkpoint_id}.json"

    def available_checkpoints(self) -> list[str]:
        if not self.dir.is_dir():
            return []
        return sorted(p.stem for p in self.dir.glob("*.json"))

    def load(self, checkpoint_id: str) -> dict[str, PredictionSummary] | None:
        path = self.path_for(checkpoint_id)
        if not path.is_file():
            return None
        data = json.loads(path.read_text())
        out = {}
        for image_id, entry in data.items():
            out[image_id] = PredictionSummary(
                image_id=image_id,
                predicted_label=int(entry["predicted_label"]),
                probabilities=tuple(float(p) for p in entry["probabilities"]),
                correct=bool(entry["correct"]),
                checkpoint_id=checkpoint_id,
            )
        return out

    def store(self, checkpoint_id: str, summaries: dict[str, PredictionSummary]) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.path_for(checkpoint_id)
        tmp = path.with_name(path.name + ".tmp")
        payload = {image_id: s.to_dict() for image_id, s in sorted(summaries.items())}
        tmp.write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")))
        tmp.replace(path)


def score_dataset(dataset: Dataset, backend, checkpoint,
                  progress=None) -> dict[str, PredictionSummary]:
    """Run deterministic inference over both splits.

    predicted_label is the argmax with lowest-index tie-break (np.argmax).
    """
    summaries: dict[str, PredictionSummary] = {}
    n = len(dataset.records)
    for i, rec in enumerate(dataset.records):
        logits = backend.forward(checkpoint.parameters, dataset.image_array(rec.image_id))
        shifted = logits - np.max(logits)
        exp = np.exp(shifted)
        probs = exp / exp.sum()
        predicted = int(np.argmax(probs))
        summaries[rec.image_id] = PredictionSummary(
            image_id=rec.image_id,
            predicted_label=predicted,
            probabilities=tuple(float(p) for p in probs),
            correct=predicted == rec.class_label,
            checkpoint_id=checkpoint.checkpoint_id,
        )
        if progress is not None and (i + 1) % 32 == 0:
            progress((i + 1) / n)
    return summaries
