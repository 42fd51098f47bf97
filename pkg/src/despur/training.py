"""Continued training on original/augmented pairs.

Each annotated image trains together with a twin whose spurious pixels are
replaced by fresh uniform noise, plus a squared-L2 penalty on the logit gap
between the two views, so the model is pushed to ignore whatever sits inside
the mask. Unannotated images keep contributing plain cross-entropy so classes
without annotations are not forgotten.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidPayload,
    NoTrainingData,
    NonFiniteLoss,
)
from .runtime import CAP_TRAIN, LogisticBackend

NOISE_KINDS = ("uniform01",)

TRAINING_CONFIG_KEYS = {
    "base_checkpoint_id", "epochs", "batch_size", "learning_rate",
    "lambda", "noise", "seed", "include_unannotated",
}


@dataclass
class TrainingJobConfig:
    base_checkpoint_id: str
    epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1
    lam: float = 1.0
    noise: str = "uniform01"
    seed: int = 0
    include_unannotated: bool = True

    def validate(self, require_positive_lr: bool = True) -> None:
        """Check the invariants. Job submission requires learning_rate > 0;
        the trainer itself tolerates 0 (a zero step is well-defined)."""
        if not self.base_checkpoint_id or not isinstance(self.base_checkpoint_id, str):
            raise InvalidPayload("base_checkpoint_id must be a non-empty string")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise InvalidPayload(f"epochs must be an integer >= 1, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise InvalidPayload(f"batch_size must be an integer >= 1, got {self.batch_size!r}")
        lr_floor_ok = self.learning_rate > 0 if require_positive_lr else self.learning_rate >= 0
        if not (isinstance(self.learning_rate, (int, float))
                and np.isfinite(self.learning_rate) and lr_floor_ok):
            raise InvalidPayload(f"learning_rate must be finite and > 0, got {self.learning_rate!r}")
        if not (isinstance(self.lam, (int, float)) and np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidPayload(f"lambda must be finite and >= 0, got {self.lam!r}")
        if self.noise not in NOISE_KINDS:
            raise InvalidPayload(f"noise must be one of {NOISE_KINDS}, got {self.noise!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise InvalidPayload(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.include_unannotated, bool):
            raise InvalidPayload("include_unannotated must be a boolean")

    def to_dict(self) -> dict:
        return {
            "base_checkpoint_id": self.base_checkpoint_id,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lambda": self.lam,
            "noise": self.noise,
            "seed": self.seed,
            "include_unannotated": self.include_unannotated,
        }

    @staticmethod
    def from_dict(data: dict) -> "TrainingJobConfig":
        if not isinstance(data, dict):
            raise InvalidPayload("training config must be a JSON object")
        unknown = set(data) - TRAINING_CONFIG_KEYS
        if unknown:
            raise InvalidPayload(f"unknown training config fields: {sorted(unknown)}")
        if "base_checkpoint_id" not in data:
            raise InvalidPayload("training config missing base_checkpoint_id")
        cfg = TrainingJobConfig(
            base_checkpoint_id=data["base_checkpoint_id"],
            epochs=data.get("epochs", 1),
            batch_size=data.get("batch_size", 32),
            learning_rate=data.get("learning_rate", 0.1),
            lam=data.get("lambda", 1.0),
            noise=data.get("noise", "uniform01"),
            seed=data.get("seed", 0),
            include_unannotated=data.get("include_unannotated", True),
        )
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class PairedBatchLoss:
    ce_original: float
    ce_augmented: float
    consistency: float
    total: float


@dataclass
class TrainingExample:
    image_id: str
    image: np.ndarray
    label: int
    mask: np.ndarray | None = None

    @property
    def paired(self) -> bool:
        return self.mask is not None and bool(self.mask.any())


@dataclass
class TrainingResult:
    parameters: np.ndarray
    metrics: list[dict]
    cancelled: bool = False
    epochs_completed: int = 0


def augment_with_noise(image: np.ndarray, mask: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Replace masked pixels with i.i.d. uniform [0, 1] noise.

    The noise block is drawn for the full image shape regardless of mask
    content, so the generator state advances identically for any mask and a
    fixed seed replays the exact stream.
    """
    image = np.asarray(image, dtype=np.float64)
    if mask.shape != image.shape[1:]:
        raise DimensionMismatch(
            f"mask shape {mask.shape} does not match image {image.shape[1:]}"
        )
    noise = rng.random(image.shape)
    return np.where(mask.astype(bool)[np.newaxis, :, :], noise, image)


def logit_gap_gradient(backend, params, image, augmented) -> np.ndarray:
    """Parameter gradient of ||logits(image) - logits(augmented)||^2."""
    if isinstance(backend, LogisticBackend):
        gap = backend.forward(params, image) - backend.forward(params, augmented)
        dx = backend._augment(image) - backend._augment(augmented)
        return 2.0 * np.outer(gap, dx).ravel()
    raise NotImplementedError(
        f"backend {backend.descriptor.backend_name!r} must supply its own paired gradient"
    )


def paired_loss(backend, params: np.ndarray, image: np.ndarray,
                augmented: np.ndarray, label: int,
                lam: float) -> tuple[PairedBatchLoss, np.ndarray]:
    """Cross-entropy on both views plus the weighted logit-consistency term.

    total = ce_original + ce_augmented + lam * ||logits gap||^2, with the
    exact parameter gradient of that sum.
    """
    if image.shape != augmented.shape:
        raise DimensionMismatch(
            f"augmented shape {augmented.shape} does not match image {image.shape}"
        )
    ce_o, g_o = backend.loss_and_gradient(params, image, label)
    ce_a, g_a = backend.loss_and_gradient(params, augmented, label)
    gap = backend.forward(params, image) - backend.forward(params, augmented)
    consistency = float(gap @ gap)
    grad = g_o + g_a
    if lam != 0.0:
        grad = grad + lam * logit_gap_gradient(backend, params, image, augmented)
    loss = PairedBatchLoss(
        ce_original=float(ce_o),
        ce_augmented=float(ce_a),
        consistency=consistency,
        total=float(ce_o) + float(ce_a) + float(lam) * consistency,
    )
    return loss, grad


def collect_training_data(dataset, mask_store, include_unannotated: bool) -> list[TrainingExample]:
    """Materialize the train split with masks attached where they exist."""
    annotated = mask_store.annotated_set()
    examples = []
    for rec in dataset.split_records("train"):
        mask = mask_store.load_mask(rec.image_id) if rec.image_id in annotated else None
        if mask is None and not include_unannotated:
            continue
        examples.append(TrainingExample(
            image_id=rec.image_id,
            image=dataset.image_array(rec.image_id),
            label=rec.class_label,
            mask=mask,
        ))
    return examples


def _accuracy(backend, params, images, labels) -> float | None:
    if not len(images):
        return None
    logits = backend.forward_batch(params, np.stack(images))
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def run_paired_training(
    backend,
    base_params: np.ndarray,
    train_examples: list[TrainingExample],
    test_items: list[tuple[np.ndarray, int]],
    cfg: TrainingJobConfig,
    progress: Callable[[float], None] | None = None,
    cancel_check: Callable[[], bool] | None = None,
    metrics_sink: Callable[[dict], None] | None = None,
) -> TrainingResult:
    """Mini-batch gradient descent over paired and plain examples.

    Each epoch deterministically reshuffles from the seed and draws fresh
    noise for the augmented twins. Cancellation is observed between batches
    and rolls back to the last completed epoch.
    """
    backend._require(CAP_TRAIN)
    cfg.validate(require_positive_lr=False)
    if not train_examples:
        raise NoTrainingData("no training images available for this job")

    params = np.array(base_params, dtype=np.float64)
    snapshot = params.copy()
    test_images = [img for img, _ in test_items]
    test_labels = [lbl for _, lbl in test_items]
    metrics: list[dict] = []
    epochs_completed = 0
    n = len(train_examples)

    for epoch in range(cfg.epochs):
        shuffle_rng = np.random.default_rng([cfg.seed, epoch, 0])
        noise_rng = np.random.default_rng([cfg.seed, epoch, 1])
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        consistency_sum = 0.0
        paired_count = 0

        for batch_start in range(0, n, cfg.batch_size):
            if cancel_check is not None and cancel_check():
                return TrainingResult(snapshot, metrics, cancelled=True,
                                      epochs_completed=epochs_completed)
            batch = order[batch_start: batch_start + cfg.batch_size]
            grad_sum = np.zeros_like(params)
            for idx in batch:
                ex = train_examples[idx]
                if ex.paired:
                    augmented = augment_with_noise(ex.image, ex.mask, noise_rng)
                    loss, grad = paired_loss(backend, params, ex.image, augmented,
                                             ex.label, cfg.lam)
                    item_loss = loss.total
                    consistency_sum += loss.consistency
                    paired_count += 1
                else:
                    item_loss, grad = backend.loss_and_gradient(params, ex.image, ex.label)
                if not np.isfinite(item_loss):
                    raise NonFiniteLoss(
                        f"non-finite loss at epoch {epoch}, batch {batch_start // cfg.batch_size}"
                    )
                total_loss += item_loss
                grad_sum += grad
            params = params - cfg.learning_rate * (grad_sum / len(batch))

        snapshot = params.copy()
        epochs_completed = epoch + 1
        row = {
            "epoch": epoch,
            "train_loss": total_loss / n,
            "train_acc": _accuracy(backend, params,
                                   [ex.image for ex in train_examples],
                                   [ex.label for ex in train_examples]),
            "test_acc": _accuracy(backend, params, test_images, test_labels),
            "consistency_mean": consistency_sum / paired_count if paired_count else 0.0,
        }
        metrics.append(row)
        if metrics_sink is not None:
            metrics_sink(row)
        if progress is not None:
            progress(epochs_completed / cfg.epochs)

    return TrainingResult(snapshot, metrics, cancelled=False,
                          epochs_completed=epochs_completed)
