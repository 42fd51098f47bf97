"""Session wiring: one object owning the stores, model, engine, and task queue.

The CLI and the HTTP API both operate on a Workspace. The active checkpoint
is swapped atomically; derived caches (predictions, influence) are keyed by
checkpoint id, so activation never mutates them, it only changes which slice
is considered current.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path

import numpy as np

from .annotations import MaskStore, SegmentationRegistry
from .config import DatasetConfig, WorkspaceLayout
from .datastore import Dataset, PredictionCache, ingest_dataset, score_dataset
from .errors import InvalidPayload, JobCancelled, PredictionsUnavailable
from .influence import SCOPES, InfluenceEngine, InfluenceSolverConfig
from .runtime import (
    BackendRegistry,
    Checkpoint,
    CheckpointStore,
    ExternalProcessBackend,
    LogisticBackend,
)
from .tasks import TaskCenter
from .training import TrainingJobConfig, collect_training_data, run_paired_training

INITIAL_CHECKPOINT_ID = "zero-init"


class Workspace:
    def __init__(self, layout: WorkspaceLayout, config: DatasetConfig,
                 dataset: Dataset, active_checkpoint: Checkpoint):
        self.layout = layout
        self.config = config
        self.dataset = dataset

        self.registry = BackendRegistry()
        if config.backend_name == "logreg":
            backend = LogisticBackend(config.num_classes, config.input_shape)
        else:
            manifest = config.backend_params.get("manifest")
            if not manifest:
                raise InvalidPayload(
                    f"backend {config.backend_name!r} requires backend_params.manifest"
                )
            backend = ExternalProcessBackend(manifest)
        self.registry.register(backend)
        self.backend = backend

        self.checkpoints = CheckpointStore(layout.ckpt_root, self.registry)
        self.masks = MaskStore(layout.mask_root, dataset)
        self.predictions = PredictionCache(layout.predictions_dir)
        self.influence = InfluenceEngine(layout.influence_root, dataset, backend)
        self.segmentation = SegmentationRegistry()
        for name, executable in config.segmentation_plugins.items():
            self.segmentation.register_executable(name, executable)

        self._active_lock = threading.Lock()
        self._active = active_checkpoint

        self.tasks = TaskCenter(layout.task_log_path)
        self.tasks.register_executor("train", self._validate_train, self._run_train)
        self.tasks.register_executor("influence", self._validate_influence, self._run_influence)
        self.tasks.register_executor("predict", self._validate_predict, self._run_predict)

    # --- lifecycle ---

    @classmethod
    def open(cls, layout: WorkspaceLayout, config: DatasetConfig,
             checkpoint_id: str | None = None) -> "Workspace":
        """Ingest the dataset and resolve the starting checkpoint.

        Without an explicit checkpoint the reference backend starts from zero
        parameters, persisted once under the id "zero-init" so job configs can
        reference it.
        """
        layout.create_writable_roots()
        dataset = ingest_dataset(layout.data_root, config)
        placeholder = Checkpoint(
            checkpoint_id=INITIAL_CHECKPOINT_ID,
            backend_name=config.backend_name,
            parameters=np.zeros(0),
        )
        ws = cls(layout, config, dataset, active_checkpoint=placeholder)
        if checkpoint_id is not None:
            ws._active = ws.checkpoints.load(checkpoint_id)
        elif ws.checkpoints.exists(INITIAL_CHECKPOINT_ID):
            ws._active = ws.checkpoints.load(INITIAL_CHECKPOINT_ID)
        else:
            ckpt = Checkpoint(
                checkpoint_id=INITIAL_CHECKPOINT_ID,
                backend_name=ws.backend.descriptor.backend_name,
                parameters=ws.backend.init_params(),
                metadata={"created_at": time.time(), "tag": "zero-init"},
            )
            ws.checkpoints.save(ckpt)
            ws._active = ckpt
        return ws

    def start(self) -> None:
        self.tasks.start()

    def close(self) -> None:
        self.tasks.stop()

    # --- active checkpoint ---

    @property
    def active_checkpoint(self) -> Checkpoint:
        with self._active_lock:
            return self._active

    def activate(self, checkpoint_id: str) -> Checkpoint:
        ckpt = self.checkpoints.load(checkpoint_id)
        with self._active_lock:
            self._active = ckpt
        return ckpt

    # --- prediction summaries ---

    def predictions_for(self, checkpoint_id: str):
        return self.predictions.load(checkpoint_id)

    def active_predictions(self):
        return self.predictions.load(self.active_checkpoint.checkpoint_id)

    def latest_scored_checkpoint(self) -> str | None:
        """Most recently refreshed checkpoint id (mtime order), if any."""
        candidates = [
            (path.stat().st_mtime, path.stem)
            for path in self.predictions.dir.glob("*.json")
        ] if self.predictions.dir.is_dir() else []
        if not candidates:
            return None
        return max(candidates)[1]

    def refresh_predictions(self, checkpoint_id: str | None = None,
                            progress=None) -> int:
        """Score every image in both splits with the given (default active) checkpoint."""
        if checkpoint_id is None or checkpoint_id == self.active_checkpoint.checkpoint_id:
            ckpt = self.active_checkpoint
        else:
            ckpt = self.checkpoints.load(checkpoint_id)
        summaries = score_dataset(self.dataset, self.backend, ckpt, progress=progress)
        self.predictions.store(ckpt.checkpoint_id, summaries)
        return len(summaries)

    # --- task executors ---

    def _validate_train(self, payload: dict) -> None:
        TrainingJobConfig.from_dict(payload)

    def _run_train(self, payload: dict, ctx) -> str:
        cfg = TrainingJobConfig.from_dict(payload)
        base = self.checkpoints.load(cfg.base_checkpoint_id)
        examples = collect_training_data(self.dataset, self.masks, cfg.include_unannotated)
        test_items = [
            (self.dataset.image_array(r.image_id), r.class_label)
            for r in self.dataset.split_records("test")
        ]
        self.layout.jobs_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.layout.jobs_dir / f"{ctx.job_id}.metrics.jsonl"

        def sink(row: dict) -> None:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

        result = run_paired_training(
            self.backend, base.parameters, examples, test_items, cfg,
            progress=lambda f: ctx.progress(f),
            cancel_check=ctx.is_cancelled,
            metrics_sink=sink,
        )
        if result.cancelled and result.epochs_completed == 0:
            raise JobCancelled()
        new_ckpt = Checkpoint(
            checkpoint_id=f"{ctx.job_id}-model",
            backend_name=self.backend.descriptor.backend_name,
            parameters=result.parameters,
            metadata={
                "created_at": time.time(),
                "parent_job_id": ctx.job_id,
                "tag": "paired-training",
                "epochs_completed": result.epochs_completed,
            },
        )
        self.checkpoints.save(new_ckpt)
        if result.cancelled:
            raise JobCancelled(result_ref=new_ckpt.checkpoint_id)
        final = result.metrics[-1] if result.metrics else {}
        ctx.progress(1.0, message=f"test_acc={final.get('test_acc')}")
        return new_ckpt.checkpoint_id

    def _validate_influence(self, payload: dict) -> None:
        cfg, scope, _ = self._parse_influence_payload(payload)
        cfg.validate()
        if scope not in SCOPES:
            raise InvalidPayload(f"scope must be one of {SCOPES}, got {scope!r}")

    def _parse_influence_payload(self, payload: dict):
        if not isinstance(payload, dict):
            raise InvalidPayload("influence payload must be a JSON object")
        known = {"scope", "k", "damping", "solver", "cg_max_iters", "cg_tolerance",
                 "checkpoint_id"}
        unknown = set(payload) - known
        if unknown:
            raise InvalidPayload(f"unknown influence payload fields: {sorted(unknown)}")
        try:
            cfg = InfluenceSolverConfig(
                damping=float(payload.get("damping", 0.01)),
                solver=str(payload.get("solver", "exact")),
                cg_max_iters=int(payload.get("cg_max_iters", 100)),
                cg_tolerance=float(payload.get("cg_tolerance", 1e-8)),
                k=int(payload.get("k", 8)),
            )
        except (TypeError, ValueError) as exc:
            raise InvalidPayload(f"bad influence payload: {exc}") from exc
        scope = payload.get("scope", "misclassified_only")
        checkpoint_id = payload.get("checkpoint_id")
        return cfg, scope, checkpoint_id

    def _run_influence(self, payload: dict, ctx) -> str:
        cfg, scope, checkpoint_id = self._parse_influence_payload(payload)
        ckpt = self.active_checkpoint if checkpoint_id is None \
            else self.checkpoints.load(checkpoint_id)
        predictions = self.predictions_for(ckpt.checkpoint_id)
        if scope == "misclassified_only" and predictions is None:
            raise PredictionsUnavailable(
                "scope=misclassified_only needs predictions; run a predict task first"
            )
        count = self.influence.precompute(
            ckpt, cfg, scope,
            predictions=predictions,
            progress=lambda f: ctx.progress(f),
            cancel_check=ctx.is_cancelled,
        )
        if ctx.is_cancelled():
            raise JobCancelled(result_ref=f"{count} test samples scored")
        return f"{count} test samples scored"

    def _validate_predict(self, payload: dict) -> None:
        if not isinstance(payload, dict):
            raise InvalidPayload("predict payload must be a JSON object")
        unknown = set(payload) - {"checkpoint_id"}
        if unknown:
            raise InvalidPayload(f"unknown predict payload fields: {sorted(unknown)}")
        ckpt_id = payload.get("checkpoint_id")
        if ckpt_id is not None and not isinstance(ckpt_id, str):
            raise InvalidPayload("checkpoint_id must be a string")

    def _run_predict(self, payload: dict, ctx) -> str:
        count = self.refresh_predictions(
            payload.get("checkpoint_id"), progress=lambda f: ctx.progress(f)
        )
        ctx.checkpoint()
        return f"{count} images scored"


def open_workspace(data_root, mask_root, influence_root, ckpt_root, cache_root,
                   config_path, checkpoint_id: str | None = None) -> Workspace:
    """Convenience constructor from raw paths (the CLI's flag set)."""
    layout = WorkspaceLayout(
        data_root=Path(data_root),
        mask_root=Path(mask_root),
        influence_root=Path(influence_root),
        ckpt_root=Path(ckpt_root),
        cache_root=Path(cache_root),
    )
    config = DatasetConfig.load(config_path)
    return Workspace.open(layout, config, checkpoint_id=checkpoint_id)
