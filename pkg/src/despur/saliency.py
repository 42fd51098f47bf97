"""Per-pixel saliency: where the model's class score is sensitive to the input.

The raw map is the channel-max absolute input gradient of the chosen class
logit, normalized so the peak is exactly 1 (identically zero maps stay zero).
For the linear reference backend that is the class's weight row folded over
channels, which gives an exact ground truth for tests.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .imgio import encode_png, luminance, to_uint8


def compute_saliency(backend, params: np.ndarray, image: np.ndarray,
                     class_index: int) -> np.ndarray:
    """Normalized H x W saliency of `class_index` for one canonical image."""
    grad = backend.input_gradient(params, image, class_index)
    raw = np.max(np.abs(grad), axis=0)
    peak = raw.max()
    if peak > 0.0:
        raw = raw / peak
    return raw


_HEAT_LUT = None


def _heat_lut() -> np.ndarray:
    """256-entry hot-style LUT: black -> red -> yellow -> white."""
    global _HEAT_LUT
    if _HEAT_LUT is None:
        v = np.linspace(0.0, 1.0, 256)
        r = np.clip(3.0 * v, 0.0, 1.0)
        g = np.clip(3.0 * v - 1.0, 0.0, 1.0)
        b = np.clip(3.0 * v - 2.0, 0.0, 1.0)
        _HEAT_LUT = to_uint8(np.stack([r, g, b], axis=1))
    return _HEAT_LUT


def render_saliency_overlay(image: np.ndarray, values: np.ndarray,
                            alpha: float) -> bytes:
    """Heat-colormapped saliency alpha-blended over the grayscale image.

    alpha = 0 reproduces the grayscale source exactly; output bytes are
    deterministic for fixed inputs.
    """
    if values.shape != image.shape[1:]:
        raise DimensionMismatch(
            f"saliency shape {values.shape} does not match image {image.shape[1:]}"
        )
    if not (0.0 <= alpha <= 1.0):
        raise DimensionMismatch(f"alpha must lie in [0, 1], got {alpha}")
    gray = luminance(image)[:, :, np.newaxis]
    lut = _heat_lut()
    heat = lut[to_uint8(np.clip(values, 0.0, 1.0))].astype(np.float64) / 255.0
    blended = (1.0 - alpha) * gray + alpha * heat
    return encode_png(to_uint8(blended))
