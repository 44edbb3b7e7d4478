"""Combine image and text embeddings into one query/reference vector.

Modes: image_only, text_only, concat, hadamard, norm_avg. The late mode
is a prediction-time strategy (per-modality votes merged afterwards), so
asking ``fuse`` for it is an error. norm_avg normalizes each modality
independently and then averages, without renormalizing the result.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

IMAGE_ONLY = "image_only"
TEXT_ONLY = "text_only"
CONCAT = "concat"
HADAMARD = "hadamard"
NORM_AVG = "norm_avg"
LATE = "late"

MODES = (IMAGE_ONLY, TEXT_ONLY, CONCAT, HADAMARD, NORM_AVG, LATE)

_CLI_ALIASES = {
    "image": IMAGE_ONLY,
    "text": TEXT_ONLY,
    "concat": CONCAT,
    "hadamard": HADAMARD,
    "norm_avg": NORM_AVG,
    "late": LATE,
}


class FusionError(ValueError):
    pass


def parse_mode(name: str) -> str:
    """Map a CLI mode string (image|text|concat|hadamard|norm_avg|late)."""
    if name in MODES:
        return name
    try:
        return _CLI_ALIASES[name]
    except KeyError:
        raise FusionError(f"unknown fusion mode {name!r}") from None


def l2_normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.sqrt((vec * vec).sum()))
    if norm == 0.0:
        raise FusionError("cannot normalize a zero vector")
    return vec / norm


def fuse(image_vec: Optional[np.ndarray], text_vec: Optional[np.ndarray], mode: str) -> np.ndarray:
    """Fused vector per mode; computed in float64, returned as float32."""
    if mode not in MODES:
        raise FusionError(f"unknown fusion mode {mode!r}")
    if mode == LATE:
        raise FusionError("late fusion merges votes at prediction time, not vectors")
    img = None if image_vec is None else np.asarray(image_vec, dtype=np.float64)
    txt = None if text_vec is None else np.asarray(text_vec, dtype=np.float64)

    if mode == IMAGE_ONLY:
        if img is None:
            raise FusionError("image modality missing")
        return img.astype(np.float32)
    if mode == TEXT_ONLY:
        if txt is None:
            raise FusionError("text modality missing")
        return txt.astype(np.float32)

    if img is None or txt is None:
        raise FusionError(f"mode {mode!r} requires both modalities")
    if mode == CONCAT:
        return np.concatenate([img, txt]).astype(np.float32)
    if img.shape != txt.shape:
        raise FusionError(f"mode {mode!r} requires equal dims: {img.shape} vs {txt.shape}")
    if mode == HADAMARD:
        return (img * txt).astype(np.float32)
    # norm_avg
    return ((l2_normalize(img) + l2_normalize(txt)) / 2.0).astype(np.float32)
