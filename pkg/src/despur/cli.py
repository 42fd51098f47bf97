"""Command line entry point: serve the workbench or run batch jobs headless.

Exit codes: 0 success, 2 configuration or user error, 1 internal error. All
flags can also be set through DESPUR_* environment variables (e.g.
DESPUR_DATA_ROOT).
"""

from __future__ import annotations

import errno
import json
import socket
import sys
from pathlib import Path

import click

from .errors import DespurError, InvalidPayload
from .influence import SCOPES, SOLVERS, InfluenceSolverConfig
from .tasks import TERMINAL_STATUSES
from .training import TrainingJobConfig
from .workspace import Workspace, open_workspace

_PATH_FLAGS = [
    click.option("--data-root", required=True, type=click.Path(exists=True, file_okay=False),
                 help="Dataset root containing train/ and test/."),
    click.option("--mask-root", required=True, type=click.Path(file_okay=False),
                 help="Mask directory (created if missing)."),
    click.option("--influence-root", required=True, type=click.Path(file_okay=False),
                 help="Influence cache directory, precomputed or empty (created if missing)."),
    click.option("--ckpt-root", required=True, type=click.Path(file_okay=False),
                 help="Checkpoint directory (created if missing)."),
    click.option("--cache-root", required=True, type=click.Path(file_okay=False),
                 help="Prediction/job/task cache directory (created if missing)."),
    click.option("--config", "config_path", required=True,
                 type=click.Path(exists=True, dir_okay=False),
                 help="JSON config file (class_names, input_shape, backend)."),
]


def _with_path_flags(fn):
    for flag in reversed(_PATH_FLAGS):
        fn = flag(fn)
    return fn


def _open(data_root, mask_root, influence_root, ckpt_root, cache_root,
          config_path, checkpoint=None) -> Workspace:
    return open_workspace(
        data_root, mask_root, influence_root, ckpt_root, cache_root,
        config_path, checkpoint_id=checkpoint,
    )


def _fail(err: DespurError) -> None:
    click.echo(f"error [{err.code}]: {err.message}", err=True)
    sys.exit(2)


@click.group(context_settings={"auto_envvar_prefix": "DESPUR"})
def main() -> None:
    """Workbench for spurious-pixel annotation and invariance retraining."""


@main.command()
@_with_path_flags
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--checkpoint", default=None, help="Checkpoint id to activate at startup.")
@click.option("--ui-root", type=click.Path(file_okay=False), default=None,
              help="Directory with the built web UI (served at /).")
def serve(data_root, mask_root, influence_root, ckpt_root, cache_root,
          config_path, port, host, checkpoint, ui_root):
    """Ingest the dataset and serve the API plus the web UI."""
    try:
        workspace = _open(data_root, mask_root, influence_root, ckpt_root,
                          cache_root, config_path, checkpoint)
    except DespurError as err:
        _fail(err)
        return

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            click.echo(f"error [PORT_IN_USE]: port {port} is already in use", err=True)
            sys.exit(2)
        raise
    finally:
        probe.close()

    from .api import create_app
    import uvicorn

    app = create_app(workspace, ui_root=ui_root)
    workspace.start()
    click.echo(f"serving {len(workspace.dataset.records)} images at http://{host}:{port}/")
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        workspace.close()


@main.command("precompute-influence")
@_with_path_flags
@click.option("--checkpoint", default=None, help="Checkpoint id (default: zero-init/active).")
@click.option("--scope", type=click.Choice(SCOPES), default="all_test", show_default=True)
@click.option("--k", type=int, default=8, show_default=True)
@click.option("--damping", type=float, default=0.01, show_default=True)
@click.option("--solver", type=click.Choice(SOLVERS), default="exact", show_default=True)
def precompute_influence(data_root, mask_root, influence_root, ckpt_root,
                         cache_root, config_path, checkpoint, scope, k, damping, solver):
    """Precompute influence cache files without starting the server."""
    try:
        workspace = _open(data_root, mask_root, influence_root, ckpt_root,
                          cache_root, config_path, checkpoint)
        cfg = InfluenceSolverConfig(damping=damping, solver=solver, k=k)
        cfg.validate()
        ckpt = workspace.active_checkpoint
        predictions = workspace.predictions_for(ckpt.checkpoint_id)
        if scope == "misclassified_only" and predictions is None:
            workspace.refresh_predictions(ckpt.checkpoint_id)
            predictions = workspace.predictions_for(ckpt.checkpoint_id)
        count = workspace.influence.precompute(ckpt, cfg, scope, predictions=predictions)
    except DespurError as err:
        _fail(err)
        return
    click.echo(f"{count} test samples scored into {influence_root}")


@main.command()
@_with_path_flags
@click.option("--checkpoint", default=None, help="Overrides base_checkpoint_id from the job file.")
@click.option("--job-config", "job_config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON training job config.")
def train(data_root, mask_root, influence_root, ckpt_root, cache_root,
          config_path, checkpoint, job_config_path):
    """Run one paired-training job headless and persist the new checkpoint."""
    try:
        raw = json.loads(Path(job_config_path).read_text())
    except json.JSONDecodeError as exc:
        click.echo(f"error [CONFIG_INVALID]: job config is not valid JSON: {exc}", err=True)
        sys.exit(2)
        return
    try:
        if checkpoint is not None:
            raw["base_checkpoint_id"] = checkpoint
        if isinstance(raw, dict) and "base_checkpoint_id" not in raw:
            raw["base_checkpoint_id"] = "zero-init"
        cfg = TrainingJobConfig.from_dict(raw)
        workspace = _open(data_root, mask_root, influence_root, ckpt_root,
                          cache_root, config_path)
        workspace.start()
        try:
            job_id = workspace.tasks.submit("train", cfg.to_dict())
            record = workspace.tasks.wait(job_id, timeout=3600)
        finally:
            workspace.close()
    except (DespurError, InvalidPayload) as err:
        _fail(err)
        return
    if record.status not in TERMINAL_STATUSES or record.status == "failed":
        click.echo(f"error [TRAINING_FAILED]: {record.message}", err=True)
        sys.exit(1)
    metrics_path = workspace.layout.jobs_dir / f"{job_id}.metrics.jsonl"
    final_test_acc = None
    if metrics_path.is_file():
        lines = [ln for ln in metrics_path.read_text().splitlines() if ln.strip()]
        if lines:
            final_test_acc = json.loads(lines[-1]).get("test_acc")
    click.echo(f"job {job_id} {record.status}; checkpoint {record.result_ref}; "
               f"final test accuracy {final_test_acc}")


@main.command()
@click.option("--metrics", "metrics_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Per-epoch metrics JSONL file written by a training job.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False),
              help="Directory for metrics.csv and the rendered figures.")
def report(metrics_path, out_dir):
    """Render training metrics to CSV plus loss/accuracy figures."""
    from .report import write_training_report

    try:
        written = write_training_report(metrics_path, out_dir)
    except DespurError as err:
        _fail(err)
        return
    for path in written:
        click.echo(str(path))


def entrypoint() -> None:
    try:
        main(standalone_mode=True)
    except DespurError as err:  # pragma: no cover - belt and braces
        _fail(err)


if __name__ == "__main__":
    main()
