import threading
import time

import numpy as np
import pytest

from despur.config import DatasetConfig, WorkspaceLayout
from despur.errors import UnknownCheckpoint
from despur.runtime import Checkpoint
from despur.workspace import Workspace


def _layout(paths):
    return WorkspaceLayout(
        data_root=paths["data_root"], mask_root=paths["mask_root"],
        influence_root=paths["influence_root"], ckpt_root=paths["ckpt_root"],
        cache_root=paths["cache_root"],
    )


class TestOpen:
    def test_zero_init_created_and_reused(self, workspace_paths):
        config = DatasetConfig.load(workspace_paths["config"])
        ws = Workspace.open(_layout(workspace_paths), config)
        assert ws.active_checkpoint.checkpoint_id == "zero-init"
        assert np.all(ws.active_checkpoint.parameters == 0.0)
        ws.close()
        # a second open loads the persisted zero checkpoint instead of recreating
        again = Workspace.open(_layout(workspace_paths), config)
        assert again.active_checkpoint.checkpoint_id == "zero-init"
        again.close()

    def test_open_with_explicit_checkpoint(self, workspace_paths, rng):
        config = DatasetConfig.load(workspace_paths["config"])
        ws = Workspace.open(_layout(workspace_paths), config)
        params = rng.normal(size=ws.backend.descriptor.parameter_count)
        ws.checkpoints.save(Checkpoint("warm", "logreg", params))
        ws.close()
        warm = Workspace.open(_layout(workspace_paths), config, checkpoint_id="warm")
        assert warm.active_checkpoint.checkpoint_id == "warm"
        assert np.array_equal(warm.active_checkpoint.parameters, params)
        warm.close()

    def test_open_with_unknown_checkpoint(self, workspace_paths):
        config = DatasetConfig.load(workspace_paths["config"])
        with pytest.raises(UnknownCheckpoint):
            Workspace.open(_layout(workspace_paths), config, checkpoint_id="ghost")


class TestTaskRecordInvariants:
    def test_progress_non_decreasing_and_finished_at_iff_terminal(self, workspace):
        workspace.start()
        job_id = workspace.tasks.submit("train", {
            "base_checkpoint_id": "zero-init", "epochs": 6, "batch_size": 1,
            "learning_rate": 0.05, "seed": 0,
        })
        seen = []
        deadline = time.time() + 60
        while time.time() < deadline:
            record = workspace.tasks.get_status(job_id)
            seen.append((record.status, record.progress, record.finished_at))
            if record.status in ("done", "failed", "cancelled"):
                break
            time.sleep(0.01)
        progresses = [p for status, p, _ in seen if status == "running"]
        assert all(a <= b for a, b in zip(progresses, progresses[1:]))
        for status, _, finished_at in seen:
            if status in ("done", "failed", "cancelled"):
                assert finished_at is not None
            else:
                assert finished_at is None
        assert seen[-1][0] == "done"
        assert seen[-1][1] == 1.0

    def test_list_sorted_by_submission_desc_and_status_filter(self, workspace):
        ids = []
        for _ in range(3):
            ids.append(workspace.tasks.submit("predict", {}))
            time.sleep(0.01)
        listed = [r.job_id for r in workspace.tasks.list_tasks()]
        assert listed == sorted(ids, reverse=True)
        queued = workspace.tasks.list_tasks(status="queued")
        assert {r.job_id for r in queued} == set(ids)
        assert len(workspace.tasks.list_tasks(status="running")) <= 1


class TestConcurrentMaskWrites:
    def test_parallel_saves_to_distinct_images(self, workspace):
        records = workspace.dataset.split_records("train")[:4]
        errors = []

        def worker(rec, value):
            try:
                bits = np.full((rec.height, rec.width), value, dtype=np.uint8)
                for _ in range(5):
                    workspace.masks.save_mask(rec.image_id, bits)
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(rec, i % 2))
                   for i, rec in enumerate(records)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert errors == []
        for i, rec in enumerate(records):
            assert workspace.masks.load_revision(rec.image_id) == 5
            assert np.all(workspace.masks.load_mask(rec.image_id) == i % 2)
