"""Mask persistence and mask proposals.

Masks are binary H x W matrices (1 = spurious, to be randomized). On disk a
mask is a single-channel 8-bit PNG mirroring the dataset layout under
<mask_root>, with values >= 128 decoding to 1 so anti-aliased exports from
external editors stay usable. Proposals (range filter, segmentation backends)
are pure previews; stored state changes only through save_mask.
"""

from __future__ import annotations

import io
import subprocess
import tempfile
import threading
from collections import deque
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin, UnidentifiedImageError

from .datastore import Dataset
from .errors import (
    BackendFailure,
    CorruptMaskFile,
    DimensionMismatch,
    InvalidRange,
    NonBinaryMask,
    TestSplitReadOnly,
    UnknownBackend,
)
from .imgio import luminance

RANGE_CHANNEL_MODES = ("luminance", "any_channel", "all_channels")


def _mask_to_png_bytes(bits: np.ndarray, revision: int) -> bytes:
    img = Image.fromarray((bits * 255).astype(np.uint8), mode="L")
    info = PngImagePlugin.PngInfo()
    info.add_text("revision", str(revision))
    out = io.BytesIO()
    img.save(out, format="PNG", pnginfo=info)
    return out.getvalue()


def decode_mask_png(data: bytes, source: str = "<bytes>") -> tuple[np.ndarray, int]:
    """Decode mask PNG bytes to (bits, revision). Threshold: >= 128 -> 1."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            revision = int(img.text.get("revision", 1)) if hasattr(img, "text") else 1
            arr = np.asarray(img.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise CorruptMaskFile(f"cannot decode mask {source}: {exc}") from exc
    return (arr >= 128).astype(np.uint8), revision


class MaskStore:
    """Per-image mask files under <mask_root>, keyed by image id.

    Writes are serialized per image id and atomic (temp-then-rename); reads
    are safe concurrently. Only train-split images may be annotated.
    """

    def __init__(self, mask_root, dataset: Dataset):
        self.root = Path(mask_root)
        self.dataset = dataset
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, image_id: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._locks.get(image_id)
            if lock is None:
                lock = self._locks[image_id] = threading.Lock()
            return lock

    def path_for(self, image_id: str) -> Path:
        self.dataset.record(image_id)
        return self.root / f"{image_id}.png"

    def save_mask(self, image_id: str, bits: np.ndarray) -> int:
        rec = self.dataset.record(image_id)
        if rec.split != "train":
            raise TestSplitReadOnly(f"masks may only be saved for train images: {image_id!r}")
        bits = np.asarray(bits)
        if bits.shape != (rec.height, rec.width):
            raise DimensionMismatch(
                f"mask shape {bits.shape} does not match image "
                f"{(rec.height, rec.width)} for {image_id!r}"
            )
        values = np.unique(bits)
        if not np.all(np.isin(values, (0, 1))):
            raise NonBinaryMask(f"mask for {image_id!r} contains values outside {{0,1}}")
        bits = bits.astype(np.uint8)
        with self._lock_for(image_id):
            current = self._read_revision(image_id)
            revision = current + 1
            path = self.root / f"{image_id}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_bytes(_mask_to_png_bytes(bits, revision))
            tmp.replace(path)
        return revision

    def _read_revision(self, image_id: str) -> int:
        path = self.root / f"{image_id}.png"
        if not path.is_file():
            return 0
        try:
            _, revision = decode_mask_png(path.read_bytes(), source=str(path))
        except CorruptMaskFile:
            return 0
        return revision

    def load_mask(self, image_id: str) -> np.ndarray | None:
        """Latest stored mask bits, or None if the image was never annotated."""
        rec = self.dataset.record(image_id)
        path = self.root / f"{image_id}.png"
        if not path.is_file():
            return None
        bits, _ = decode_mask_png(path.read_bytes(), source=str(path))
        if bits.shape != (rec.height, rec.width):
            raise CorruptMaskFile(
                f"mask file {path} has shape {bits.shape}, image is "
                f"{(rec.height, rec.width)}"
            )
        return bits

    def load_revision(self, image_id: str) -> int:
        self.dataset.record(image_id)
        return self._read_revision(image_id)

    def list_annotated(self) -> list[str]:
        """Ids with a stored mask containing at least one spurious pixel."""
        if not self.root.is_dir():
            return []
        out = []
        for path in self.root.rglob("*.png"):
            rel = path.relative_to(self.root).as_posix()
            if not rel.endswith(".png"):
                continue
            image_id = rel[: -len(".png")]
            if image_id not in self.dataset.by_id:
                continue
            try:
                bits, _ = decode_mask_png(path.read_bytes(), source=str(path))
            except CorruptMaskFile:
                continue
            if bits.any():
                out.append(image_id)
        return sorted(out)

    def annotated_set(self) -> set[str]:
        return set(self.list_annotated())


# ---------------------------------------------------------------------------
# proposals


def range_filter_mask(image: np.ndarray, lo: float, hi: float,
                      channel_mode: str = "luminance") -> np.ndarray:
    """Mark every pixel whose intensity statistic lies in [lo, hi].

    Pure per-pixel predicate on the canonical [0, 1] representation with no
    neighborhood effects. Modes: luminance (0.299R + 0.587G + 0.114B),
    any_channel, all_channels. Single-channel images reduce all modes to the
    pixel value itself.
    """
    if not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0):
        raise InvalidRange(f"lo/hi must lie in [0, 1], got ({lo}, {hi})")
    if lo > hi:
        raise InvalidRange(f"lo must not exceed hi, got ({lo}, {hi})")
    if channel_mode not in RANGE_CHANNEL_MODES:
        raise InvalidRange(f"channel_mode must be one of {RANGE_CHANNEL_MODES}")
    if channel_mode == "luminance" or image.shape[0] == 1:
        stat = luminance(image)
        selected = (stat >= lo) & (stat <= hi)
    else:
        per_channel = (image >= lo) & (image <= hi)
        selected = per_channel.any(axis=0) if channel_mode == "any_channel" \
            else per_channel.all(axis=0)
    return selected.astype(np.uint8)


def border_flood_mask(image: np.ndarray, tolerance: float = 0.1) -> np.ndarray:
    """Background proposal: flood-fill inward from every border pixel.

    All border pixels seed the flood. The frontier expands level by level:
    a 4-connected neighbor joins when each of its channels is within
    `tolerance` of the running mean color of everything absorbed so far, and
    the mean is updated once per level. Level-synchronous absorption makes the
    result independent of pixel visit order, so rotating the image rotates the
    mask. Reached pixels are background (mask value 1).
    """
    _, h, w = image.shape
    colors = image.reshape(image.shape[0], -1)  # (C, H*W)
    absorbed = np.zeros((h, w), dtype=bool)
    frontier = np.zeros((h, w), dtype=bool)
    frontier[0, :] = frontier[-1, :] = True
    frontier[:, 0] = frontier[:, -1] = True
    absorbed |= frontier
    color_sum = colors[:, absorbed.ravel()].sum(axis=1)
    count = int(absorbed.sum())

    while frontier.any():
        mean = color_sum / count
        neighbors = np.zeros((h, w), dtype=bool)
        neighbors[1:, :] |= frontier[:-1, :]
        neighbors[:-1, :] |= frontier[1:, :]
        neighbors[:, 1:] |= frontier[:, :-1]
        neighbors[:, :-1] |= frontier[:, 1:]
        candidates = neighbors & ~absorbed
        if not candidates.any():
            break
        close = np.all(
            np.abs(image - mean[:, np.newaxis, np.newaxis]) <= tolerance, axis=0
        )
        accepted = candidates & close
        if not accepted.any():
            break
        absorbed |= accepted
        color_sum += colors[:, accepted.ravel()].sum(axis=1)
        count += int(accepted.sum())
        frontier = accepted
    return absorbed.astype(np.uint8)


class SegmentationRegistry:
    """Named mask proposers: the built-in border flood plus external plugins.

    An external plugin is any executable invoked as
    `plugin <image_path> <output_mask.png>` that exits 0; nonzero exit,
    missing output, or a wrong-sized mask become BackendFailure.
    """

    def __init__(self):
        self._backends: dict[str, object] = {}
        self.register_builtin()

    def register_builtin(self) -> None:
        self._backends["border-flood"] = self._run_border_flood

    def register_executable(self, name: str, executable: str) -> None:
        self._backends[name] = str(executable)

    def names(self) -> list[str]:
        return sorted(self._backends)

    @staticmethod
    def _run_border_flood(image: np.ndarray, image_path, params: dict) -> np.ndarray:
        tolerance = params.get("tolerance", 0.1)
        try:
            tolerance = float(tolerance)
        except (TypeError, ValueError) as exc:
            raise BackendFailure(f"tolerance must be a number: {tolerance!r}") from exc
        if not (tolerance >= 0.0):
            raise BackendFailure(f"tolerance must be >= 0, got {tolerance}")
        return border_flood_mask(image, tolerance=tolerance)

    def propose(self, name: str, image: np.ndarray, image_path, params: dict) -> np.ndarray:
        backend = self._backends.get(name)
        if backend is None:
            raise UnknownBackend(f"no segmentation backend named {name!r}")
        if callable(backend):
            return backend(image, image_path, dict(params))
        return self._run_executable(str(backend), image, image_path)

    @staticmethod
    def _run_executable(executable: str, image: np.ndarray, image_path) -> np.ndarray:
        _, h, w = image.shape
        with tempfile.TemporaryDirectory(prefix="despur-seg-") as tmp:
            out_path = Path(tmp) / "mask.png"
            try:
                proc = subprocess.run(
                    [executable, str(image_path), str(out_path)],
                    capture_output=True, timeout=300,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise BackendFailure(f"segmentation plugin failed to run: {exc}") from exc
            if proc.returncode != 0:
                raise BackendFailure(
                    f"segmentation plugin exited {proc.returncode}: "
                    f"{proc.stderr.decode('utf-8', 'replace')[:500]}"
                )
            if not out_path.is_file():
                raise BackendFailure("segmentation plugin wrote no output mask")
            try:
                bits, _ = decode_mask_png(out_path.read_bytes(), source=str(out_path))
            except CorruptMaskFile as exc:
                raise BackendFailure(f"segmentation plugin output unreadable: {exc}") from exc
        if bits.shape != (h, w):
            raise BackendFailure(
                f"segmentation plugin mask shape {bits.shape} does not match image {(h, w)}"
            )
        return bits


def flood_fill_reference(image: np.ndarray, tolerance: float = 0.1) -> np.ndarray:
    """Queue-based flood fill used as an independent oracle in tests.

    Mirrors border_flood_mask but absorbs one frontier level at a time from an
    explicit deque, recomputing the mean per level from first principles.
    """
    _, h, w = image.shape
    absorbed = np.zeros((h, w), dtype=bool)
    level = deque()
    for y in range(h):
        for x in range(w):
            if y in (0, h - 1) or x in (0, w - 1):
                absorbed[y, x] = True
                level.append((y, x))
    while level:
        mean = image[:, absorbed].mean(axis=1)
        next_level = deque()
        seen = set()
        for y, x in level:
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if not (0 <= ny < h and 0 <= nx < w):
                    continue
                if absorbed[ny, nx] or (ny, nx) in seen:
                    continue
                seen.add((ny, nx))
                if np.all(np.abs(image[:, ny, nx] - mean) <= tolerance):
                    next_level.append((ny, nx))
        for y, x in next_level:
            absorbed[y, x] = True
        level = next_level
    return absorbed.astype(np.uint8)
