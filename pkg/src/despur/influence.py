"""Influence scores: which training samples move a test sample's loss.

score(z_test, z_train) = grad L(z_test)^T (H + damping I)^{-1} grad L(z_train)
with H the mean training-loss Hessian at the current parameters. The damped
inverse keeps the solve well-posed even when H is singular (softmax
over-parameterization). One inverse-Hessian-vector solve per test sample is
reused against every training gradient, so ranking all of the training set
costs one solve plus n_train dot products.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CapabilityMissing,
    CorruptCacheFile,
    InvalidArgument,
    NotTestImage,
)
from .runtime import CAP_EXACT_HESSIAN, CAP_HVP

SOLVERS = ("exact", "cg")
SCOPES = ("misclassified_only", "all_test")


@dataclass
class InfluenceSolverConfig:
    damping: float = 0.01
    solver: str = "exact"
    cg_max_iters: int = 100
    cg_tolerance: float = 1e-8
    k: int = 8

    def validate(self) -> None:
        if not (self.damping > 0.0):
            raise InvalidArgument(f"damping must be > 0, got {self.damping}")
        if self.solver not in SOLVERS:
            raise InvalidArgument(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if not (self.cg_tolerance > 0.0):
            raise InvalidArgument(f"cg_tolerance must be > 0, got {self.cg_tolerance}")
        if self.cg_max_iters < 1 or self.k < 1:
            raise InvalidArgument("cg_max_iters and k must be >= 1")


@dataclass
class InfluenceResult:
    test_image_id: str
    checkpoint_id: str
    damping: float
    solver: str
    entries: list[tuple[str, float]]
    diverged: bool = False

    @property
    def k(self) -> int:
        return len(self.entries)


def conjugate_gradient(apply_a, b: np.ndarray, max_iters: int,
                       tolerance: float) -> tuple[np.ndarray, float, bool]:
    """Plain CG for a symmetric positive definite system A x = b.

    Returns (best solution, relative residual of it, converged flag); the
    convergence test is ||A x - b|| <= tolerance * ||b||.
    """
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), 0.0, True
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    best_x = x.copy()
    best_res = float(np.sqrt(rs)) / b_norm
    for _ in range(max_iters):
        ap = apply_a(p)
        p_ap = float(p @ ap)
        if p_ap <= 0.0:
            break  # numerically lost positive definiteness
        alpha = rs / p_ap
        x = x + alpha * p
        r = r - alpha * ap
        rs_next = float(r @ r)
        rel = float(np.sqrt(rs_next)) / b_norm
        if rel < best_res:
            best_res = rel
            best_x = x.copy()
        if rel <= tolerance:
            return best_x, best_res, True
        p = r + (rs_next / rs) * p
        rs = rs_next
    return best_x, best_res, best_res <= tolerance


class InfluenceSolver:
    """Shared per-checkpoint state for scoring many test samples.

    Holds the training-gradient matrix and, for the exact solver, the dense
    damped Hessian, so each extra test sample costs one solve.
    """

    def __init__(self, backend, params: np.ndarray, train_ids: list[str],
                 train_images, train_labels, cfg: InfluenceSolverConfig):
        cfg.validate()
        if cfg.solver == "exact":
            backend._require(CAP_EXACT_HESSIAN)
        else:
            backend._require(CAP_HVP)
        self.backend = backend
        self.params = params
        self.cfg = cfg
        self.train_ids = list(train_ids)
        self._batch = [(img, int(lbl)) for img, lbl in zip(train_images, train_labels)]
        grads = [backend.loss_and_gradient(params, img, lbl)[1] for img, lbl in self._batch]
        self.train_grads = np.stack(grads)
        self._hess = None

    def _dense_hessian(self) -> np.ndarray:
        if self._hess is None:
            h = self.backend.dense_hessian(self.params, self._batch)
            self._hess = h + self.cfg.damping * np.eye(h.shape[0])
        return self._hess

    def inverse_hvp(self, vector: np.ndarray) -> tuple[np.ndarray, bool]:
        """Solve (H + damping I) s = vector. Returns (s, diverged)."""
        if self.cfg.solver == "exact":
            return np.linalg.solve(self._dense_hessian(), vector), False

        def apply_a(v):
            return self.backend.hvp(self.params, self._batch, v) + self.cfg.damping * v

        s, _residual, converged = conjugate_gradient(
            apply_a, vector, self.cfg.cg_max_iters, self.cfg.cg_tolerance
        )
        return s, not converged

    def score_test_sample(self, test_image, test_label) -> tuple[np.ndarray, bool]:
        """Influence scores of every training sample for one test sample."""
        _, g_test = self.backend.loss_and_gradient(self.params, test_image, int(test_label))
        s, diverged = self.inverse_hvp(g_test)
        return self.train_grads @ s, diverged

    def top_k(self, scores: np.ndarray) -> list[tuple[str, float]]:
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], self.train_ids[i]))
        return [(self.train_ids[i], float(scores[i])) for i in order[: self.cfg.k]]


# ---------------------------------------------------------------------------
# cache files


def serialize_result(result: InfluenceResult) -> bytes:
    payload = {
        "version": 1,
        "test_image_id": result.test_image_id,
        "checkpoint_id": result.checkpoint_id,
        "damping": result.damping,
        "solver": result.solver,
        "entries": [
            {"train_image_id": tid, "score": score} for tid, score in result.entries
        ],
    }
    return (json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def deserialize_result(data: bytes, source: str = "<bytes>") -> InfluenceResult:
    try:
        payload = json.loads(data.decode("utf-8"))
        if payload["version"] != 1:
            raise ValueError(f"unsupported cache version {payload['version']}")
        entries = [
            (str(e["train_image_id"]), float(e["score"])) for e in payload["entries"]
        ]
        return InfluenceResult(
            test_image_id=str(payload["test_image_id"]),
            checkpoint_id=str(payload["checkpoint_id"]),
            damping=float(payload["damping"]),
            solver=str(payload["solver"]),
            entries=entries,
        )
    except (KeyError, TypeError, ValueError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCacheFile(f"bad influence cache file {source}: {exc}") from exc


@dataclass
class InfluenceEngine:
    """Scores test samples against the dataset and manages the cache directory.

    Cache layout: <influence_root>/<checkpoint_id>/<test_image_id>.json.
    """

    influence_root: Path
    dataset: object
    backend: object
    _solver_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.influence_root = Path(self.influence_root)

    def cache_path(self, checkpoint_id: str, test_image_id: str) -> Path:
        return self.influence_root / checkpoint_id / f"{test_image_id}.json"

    def _solver_for(self, checkpoint, cfg: InfluenceSolverConfig) -> InfluenceSolver:
        key = (checkpoint.checkpoint_id, cfg.damping, cfg.solver,
               cfg.cg_max_iters, cfg.cg_tolerance, cfg.k)
        solver = self._solver_cache.get(key)
        if solver is None or solver.params is not checkpoint.parameters:
            train = self.dataset.split_records("train")
            solver = InfluenceSolver(
                self.backend,
                checkpoint.parameters,
                [r.image_id for r in train],
                [self.dataset.image_array(r.image_id) for r in train],
                [r.class_label for r in train],
                cfg,
            )
            self._solver_cache = {key: solver}
        return solver

    def influence_scores(self, test_image_id: str, checkpoint,
                         cfg: InfluenceSolverConfig) -> InfluenceResult:
        rec = self.dataset.record(test_image_id)
        if rec.split != "test":
            raise NotTestImage(f"influence is computed for test images, got {test_image_id!r}")
        solver = self._solver_for(checkpoint, cfg)
        scores, diverged = solver.score_test_sample(
            self.dataset.image_array(test_image_id), rec.class_label
        )
        return InfluenceResult(
            test_image_id=test_image_id,
            checkpoint_id=checkpoint.checkpoint_id,
            damping=cfg.damping,
            solver=cfg.solver,
            entries=solver.top_k(scores),
            diverged=diverged,
        )

    def write_cache(self, result: InfluenceResult) -> Path:
        path = self.cache_path(result.checkpoint_id, result.test_image_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(serialize_result(result))
        tmp.replace(path)
        return path

    def get_cached(self, test_image_id: str, checkpoint_id: str) -> InfluenceResult | None:
        """Cached result for this checkpoint, or None. Stale caches are not served."""
        rec = self.dataset.record(test_image_id)
        if rec.split != "test":
            raise NotTestImage(f"influence is computed for test images, got {test_image_id!r}")
        path = self.cache_path(checkpoint_id, test_image_id)
        if not path.is_file():
            return None
        result = deserialize_result(path.read_bytes(), source=str(path))
        if result.checkpoint_id != checkpoint_id or result.test_image_id != test_image_id:
            raise CorruptCacheFile(
                f"cache file {path} is keyed for "
                f"({result.checkpoint_id!r}, {result.test_image_id!r})"
            )
        return result

    def has_cached(self, test_image_id: str, checkpoint_id: str) -> bool:
        return self.cache_path(checkpoint_id, test_image_id).is_file()

    def precompute(self, checkpoint, cfg: InfluenceSolverConfig, scope: str,
                   predictions=None, progress=None, cancel_check=None) -> int:
        """Write one cache file per test sample in scope; idempotent overwrite.

        Cancellation is observed between test samples, so every file on disk
        is complete.
        """
        if scope not in SCOPES:
            raise InvalidArgument(f"scope must be one of {SCOPES}, got {scope!r}")
        records = self.dataset.split_records("test")
        if scope == "misclassified_only":
            if predictions is None:
                raise CapabilityMissing(
                    "scope=misclassified_only requires a populated prediction cache"
                )
            records = [
                r for r in records
                if r.image_id in predictions and not predictions[r.image_id].correct
            ]
        if not records:
            return 0
        solver = self._solver_for(checkpoint, cfg)
        done = 0
        for rec in records:
            if cancel_check is not None and cancel_check():
                break
            scores, diverged = solver.score_test_sample(
                self.dataset.image_array(rec.image_id), rec.class_label
            )
            self.write_cache(InfluenceResult(
                test_image_id=rec.image_id,
                checkpoint_id=checkpoint.checkpoint_id,
                damping=cfg.damping,
                solver=cfg.solver,
                entries=solver.top_k(scores),
                diverged=diverged,
            ))
            done += 1
            if progress is not None:
                progress(done / len(records))
        return done
