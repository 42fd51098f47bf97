"""Model runtime: backend abstraction, reference backend, checkpoint files.

The built-in reference backend is multinomial logistic regression on flattened
pixels. It is convex with closed-form gradient and Hessian, which makes the
influence and saliency math exactly checkable at desk scale. Deep models plug
in through the registry as out-of-process backends declaring their
capabilities; anything that needs a missing capability refuses to run instead
of approximating.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BackendFailure,
    BackendMismatch,
    CapabilityMissing,
    InvalidLabel,
    NonFiniteGradient,
    ShapeMismatch,
    UnknownCheckpoint,
    UnreadableCheckpoint,
)

CAP_GRADIENT = "gradient"
CAP_HVP = "hvp"
CAP_EXACT_HESSIAN = "exact_hessian"
CAP_TRAIN = "train"

CHECKPOINT_SUFFIX = ".rbck"


@dataclass(frozen=True)
class ModelBackendDescriptor:
    backend_name: str
    parameter_count: int
    num_classes: int
    input_shape: tuple[int, int, int]
    capabilities: frozenset[str]


@dataclass
class Checkpoint:
    checkpoint_id: str
    backend_name: str
    parameters: np.ndarray
    metadata: dict = field(default_factory=dict)

    def copy_with(self, parameters: np.ndarray, checkpoint_id: str | None = None,
                  metadata: dict | None = None) -> "Checkpoint":
        return Checkpoint(
            checkpoint_id=checkpoint_id or self.checkpoint_id,
            backend_name=self.backend_name,
            parameters=np.array(parameters, dtype=np.float64),
            metadata=dict(self.metadata if metadata is None else metadata),
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


class ModelBackend:
    """Contract every backend implements.

    All numeric methods are pure functions of (parameters, inputs). Methods
    guarded by a capability raise CapabilityMissing when the backend does not
    declare it.
    """

    descriptor: ModelBackendDescriptor

    def init_params(self) -> np.ndarray:
        raise NotImplementedError

    def forward(self, params: np.ndarray, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def forward_batch(self, params: np.ndarray, images: np.ndarray) -> np.ndarray:
        return np.stack([self.forward(params, img) for img in images])

    def loss_and_gradient(self, params, image, label) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def input_gradient(self, params, image, class_index) -> np.ndarray:
        raise NotImplementedError

    def hvp(self, params, batch, v) -> np.ndarray:
        raise NotImplementedError

    def dense_hessian(self, params, batch) -> np.ndarray:
        raise NotImplementedError

    # --- shared validation helpers ---

    def _require(self, capability: str) -> None:
        if capability not in self.descriptor.capabilities:
            raise CapabilityMissing(
                f"backend {self.descriptor.backend_name!r} lacks capability {capability!r}"
            )

    def _check_image(self, image: np.ndarray) -> None:
        if tuple(image.shape) != tuple(self.descriptor.input_shape):
            raise ShapeMismatch(
                f"image shape {tuple(image.shape)} does not match "
                f"backend input shape {tuple(self.descriptor.input_shape)}"
            )

    def _check_label(self, label: int) -> None:
        if not (0 <= int(label) < self.descriptor.num_classes):
            raise InvalidLabel(f"label {label} outside [0, {self.descriptor.num_classes})")

    def _check_params(self, params: np.ndarray) -> None:
        if params.shape != (self.descriptor.parameter_count,):
            raise ShapeMismatch(
                f"parameter vector length {params.shape} does not match "
                f"parameter_count {self.descriptor.parameter_count}"
            )


class LogisticBackend(ModelBackend):
    """Multinomial logistic regression on flattened pixels.

    Parameter layout: the flat vector reshapes to (num_classes, D + 1) where
    D = channels * height * width; each row is [weights, bias]. With the
    bias folded in as a constant input feature x~ = [flatten(image), 1]:

        logits  = P @ x~
        dL/dP   = (softmax - onehot) outer x~
        d2L/dP2 = (diag(s) - s s^T) kron (x~ x~^T)      (label-free)

    All computation is float64.
    """

    name = "logreg"

    def __init__(self, num_classes: int, input_shape: tuple[int, int, int]):
        dims = int(np.prod(input_shape))
        self._dims = dims
        self.descriptor = ModelBackendDescriptor(
            backend_name=self.name,
            parameter_count=num_classes * (dims + 1),
            num_classes=num_classes,
            input_shape=tuple(input_shape),
            capabilities=frozenset({CAP_GRADIENT, CAP_HVP, CAP_EXACT_HESSIAN, CAP_TRAIN}),
        )

    def init_params(self) -> np.ndarray:
        return np.zeros(self.descriptor.parameter_count, dtype=np.float64)

    def _matrix(self, params: np.ndarray) -> np.ndarray:
        self._check_params(params)
        return params.reshape(self.descriptor.num_classes, self._dims + 1)

    def _augment(self, image: np.ndarray) -> np.ndarray:
        self._check_image(image)
        return np.append(np.asarray(image, dtype=np.float64).ravel(), 1.0)

    def _augment_batch(self, images: np.ndarray) -> np.ndarray:
        flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        if flat.shape[1] != self._dims:
            raise ShapeMismatch(
                f"batch feature size {flat.shape[1]} does not match input shape"
            )
        return np.hstack([flat, np.ones((len(images), 1))])

    def forward(self, params, image):
        return self._matrix(params) @ self._augment(image)

    def forward_batch(self, params, images):
        return self._augment_batch(images) @ self._matrix(params).T

    def loss_and_gradient(self, params, image, label):
        self._check_label(label)
        mat = self._matrix(params)
        x = self._augment(image)
        logits = mat @ x
        logp = log_softmax(logits)
        probs = np.exp(logp)
        delta = probs.copy()
        delta[int(label)] -= 1.0
        grad = np.outer(delta, x)
        return float(-logp[int(label)]), grad.ravel()

    def ce_batch(self, params, images, labels) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample CE losses and the summed gradient over the batch."""
        mat = self._matrix(params)
        xs = self._augment_batch(images)
        logits = xs @ mat.T
        logp = log_softmax(logits)
        idx = np.arange(len(images))
        labels = np.asarray(labels, dtype=int)
        losses = -logp[idx, labels]
        delta = np.exp(logp)
        delta[idx, labels] -= 1.0
        grad_sum = delta.T @ xs
        return losses, grad_sum.ravel()

    def input_gradient(self, params, image, class_index):
        self._require(CAP_GRADIENT)
        self._check_image(image)
        self._check_label(class_index)
        mat = self._matrix(params)
        return mat[int(class_index), : self._dims].reshape(self.descriptor.input_shape).copy()

    def hvp(self, params, batch, v):
        self._require(CAP_HVP)
        self._check_params(np.asarray(v))
        mat_v = np.asarray(v, dtype=np.float64).reshape(
            self.descriptor.num_classes, self._dims + 1
        )
        mat = self._matrix(params)
        out = np.zeros_like(mat_v)
        for image, _label in batch:
            x = self._augment(image)
            s = softmax(mat @ x)
            u = mat_v @ x
            w = s * u - s * float(s @ u)
            out += np.outer(w, x)
        return (out / len(batch)).ravel()

    def dense_hessian(self, params, batch):
        self._require(CAP_EXACT_HESSIAN)
        mat = self._matrix(params)
        n = self.descriptor.parameter_count
        hess = np.zeros((n, n), dtype=np.float64)
        for image, _label in batch:
            x = self._augment(image)
            s = softmax(mat @ x)
            s_block = np.diag(s) - np.outer(s, s)
            hess += np.kron(s_block, np.outer(x, x))
        return hess / len(batch)


def apply_gradient_step(backend: ModelBackend, checkpoint: Checkpoint,
                        grad: np.ndarray, learning_rate: float) -> Checkpoint:
    """One plain gradient step; returns an in-memory checkpoint."""
    backend._require(CAP_TRAIN)
    grad = np.asarray(grad, dtype=np.float64)
    backend._check_params(grad)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains non-finite values")
    new_params = checkpoint.parameters - float(learning_rate) * grad
    return checkpoint.copy_with(parameters=new_params)


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Write the container: one-line JSON header, then raw little-endian f64."""
    header = {
        "format": "rbck",
        "version": 1,
        "backend_name": checkpoint.backend_name,
        "checkpoint_id": checkpoint.checkpoint_id,
        "parameter_count": int(checkpoint.parameters.shape[0]),
        "metadata": checkpoint.metadata,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    payload = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    payload += np.ascontiguousarray(checkpoint.parameters, dtype="<f8").tobytes()
    tmp.write_bytes(payload)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise UnreadableCheckpoint(f"checkpoint file not found: {path}")
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise UnreadableCheckpoint(f"missing header line in {path}")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UnreadableCheckpoint(f"bad header in {path}: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != "rbck":
        raise UnreadableCheckpoint(f"not a checkpoint container: {path}")
    try:
        count = int(header["parameter_count"])
        backend_name = str(header["backend_name"])
        checkpoint_id = str(header["checkpoint_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UnreadableCheckpoint(f"incomplete header in {path}: {exc}") from exc
    body = raw[newline + 1:]
    if len(body) != count * 8:
        raise UnreadableCheckpoint(
            f"parameter payload of {path} has {len(body)} bytes, expected {count * 8}"
        )
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return Checkpoint(
        checkpoint_id=checkpoint_id,
        backend_name=backend_name,
        parameters=params,
        metadata=dict(header.get("metadata", {})),
    )


class CheckpointStore:
    """Checkpoint files under <ckpt_root>/<checkpoint_id>.rbck."""

    def __init__(self, ckpt_root, registry: "BackendRegistry"):
        self.root = Path(ckpt_root)
        self.registry = registry

    def path_for(self, checkpoint_id: str) -> Path:
        return self.root / f"{checkpoint_id}{CHECKPOINT_SUFFIX}"

    def list_ids(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name[: -len(CHECKPOINT_SUFFIX)]
                      for p in self.root.glob(f"*{CHECKPOINT_SUFFIX}"))

    def exists(self, checkpoint_id: str) -> bool:
        return self.path_for(checkpoint_id).is_file()

    def load(self, checkpoint_id: str) -> Checkpoint:
        path = self.path_for(checkpoint_id)
        if not path.is_file():
            raise UnknownCheckpoint(f"no checkpoint named {checkpoint_id!r}")
        return self.load_file(path)

    def load_file(self, path) -> Checkpoint:
        ckpt = load_checkpoint(path)
        backend = self.registry.get(ckpt.backend_name)
        if ckpt.parameters.shape[0] != backend.descriptor.parameter_count:
            raise ShapeMismatch(
                f"checkpoint {ckpt.checkpoint_id!r} has {ckpt.parameters.shape[0]} "
                f"parameters, backend expects {backend.descriptor.parameter_count}"
            )
        return ckpt

    def save(self, checkpoint: Checkpoint) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path_for(checkpoint.checkpoint_id)
        save_checkpoint(checkpoint, path)
        return path


class BackendRegistry:
    def __init__(self):
        self._backends: dict[str, ModelBackend] = {}

    def register(self, backend: ModelBackend) -> None:
        self._backends[backend.descriptor.backend_name] = backend

    def get(self, name: str) -> ModelBackend:
        if name not in self._backends:
            raise BackendMismatch(f"no backend registered under {name!r}")
        return self._backends[name]

    def names(self) -> list[str]:
        return sorted(self._backends)


class ExternalProcessBackend(ModelBackend):
    """Out-of-process backend: an executable speaking a JSON request/response
    protocol, with capabilities declared in a manifest.

    Manifest JSON: {backend_name, parameter_count, num_classes, input_shape,
    capabilities, executable}. Per call the executable is invoked as
    `executable <request.json> <response.json>` and must exit 0.
    """

    def __init__(self, manifest_path):
        manifest_path = Path(manifest_path)
        try:
            manifest = json.loads(manifest_path.read_text())
            self.executable = str(manifest["executable"])
            caps = frozenset(str(c) for c in manifest["capabilities"])
            self.descriptor = ModelBackendDescriptor(
                backend_name=str(manifest["backend_name"]),
                parameter_count=int(manifest["parameter_count"]),
                num_classes=int(manifest["num_classes"]),
                input_shape=tuple(int(v) for v in manifest["input_shape"]),
                capabilities=caps,
            )
        except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise BackendFailure(f"bad backend manifest {manifest_path}: {exc}") from exc

    def _call(self, request: dict) -> dict:
        with tempfile.TemporaryDirectory(prefix="despur-plugin-") as tmp:
            req_path = Path(tmp) / "request.json"
            resp_path = Path(tmp) / "response.json"
            req_path.write_text(json.dumps(request))
            try:
                proc = subprocess.run(
                    [self.executable, str(req_path), str(resp_path)],
                    capture_output=True, timeout=120,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise BackendFailure(f"backend executable failed: {exc}") from exc
            if proc.returncode != 0:
                raise BackendFailure(
                    f"backend executable exited {proc.returncode}: "
                    f"{proc.stderr.decode('utf-8', 'replace')[:500]}"
                )
            try:
                return json.loads(resp_path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise BackendFailure(f"backend wrote no valid response: {exc}") from exc

    def init_params(self) -> np.ndarray:
        return np.zeros(self.descriptor.parameter_count, dtype=np.float64)

    def forward(self, params, image):
        self._check_image(image)
        resp = self._call({
            "op": "forward",
            "params": np.asarray(params, dtype=float).tolist(),
            "image": np.asarray(image, dtype=float).tolist(),
        })
        return np.asarray(resp["logits"], dtype=np.float64)

    def loss_and_gradient(self, params, image, label):
        self._require(CAP_GRADIENT)
        self._check_image(image)
        self._check_label(label)
        resp = self._call({
            "op": "loss_and_gradient",
            "params": np.asarray(params, dtype=float).tolist(),
            "image": np.asarray(image, dtype=float).tolist(),
            "label": int(label),
        })
        return float(resp["loss"]), np.asarray(resp["grad"], dtype=np.float64)

    def input_gradient(self, params, image, class_index):
        self._require(CAP_GRADIENT)
        self._check_image(image)
        self._check_label(class_index)
        resp = self._call({
            "op": "input_gradient",
            "params": np.asarray(params, dtype=float).tolist(),
            "image": np.asarray(image, dtype=float).tolist(),
            "class_index": int(class_index),
        })
        return np.asarray(resp["grad"], dtype=np.float64).reshape(self.descriptor.input_shape)

    def hvp(self, params, batch, v):
        self._require(CAP_HVP)
        raise CapabilityMissing("external hvp protocol not implemented by this plugin host")

    def dense_hessian(self, params, batch):
        self._require(CAP_EXACT_HESSIAN)
        raise CapabilityMissing("external exact_hessian protocol not implemented")


def new_checkpoint_id(tag: str = "ckpt") -> str:
    """Unique, sortable checkpoint id."""
    return f"{tag}-{time.strftime('%Y%m%d-%H%M%S')}-{int((time.time() % 1) * 1e6):06d}"
