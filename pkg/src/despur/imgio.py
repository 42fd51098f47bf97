"""Image decoding to the canonical numeric representation.

Every numeric module works on channels-first float64 arrays in [0, 1];
8-bit samples are divided by 255 on decode. Grayscale files map to one
channel, everything else is converted to RGB.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import UndecodableImage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def decode_image(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode PNG/JPEG bytes to a (C, H, W) float64 array in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            if img.mode in ("L", "1"):
                img = img.convert("L")
            elif img.mode != "RGB":
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UndecodableImage(f"cannot decode image {source}: {exc}") from exc
    if arr.ndim == 2:
        return arr[np.newaxis, :, :]
    return np.transpose(arr, (2, 0, 1))


def decode_image_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read(), source=str(path))


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float array to uint8 with round-half-away behaviour."""
    return np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.uint8)


def luminance(image: np.ndarray) -> np.ndarray:
    """Per-pixel luminance of a canonical (C, H, W) image, shape (H, W).

    Single-channel images pass through; RGB uses the 0.299/0.587/0.114 weights.
    """
    if image.shape[0] == 1:
        return image[0]
    r, g, b = LUMA_WEIGHTS
    return r * image[0] + g * image[1] + b * image[2]


def encode_png(gray_or_rgb: np.ndarray) -> bytes:
    """Encode a uint8 (H, W) or (H, W, 3) array as deterministic PNG bytes."""
    mode = "L" if gray_or_rgb.ndim == 2 else "RGB"
    img = Image.fromarray(gray_or_rgb, mode=mode)
    out = io.BytesIO()
    img.save(out, format="PNG")
    return out.getvalue()


def content_type_for(path: str) -> str:
    lower = path.lower()
    if lower.endswith((".jpg", ".jpeg")):
        return "image/jpeg"
    return "image/png"
