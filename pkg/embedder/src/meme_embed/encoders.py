"""Pluggable encoders behind a checkpoint id.

The toolkit's correctness never depends on which encoder produced the
vectors, so the registry maps checkpoint ids to implementations:

* ``hashproj-<dim>`` - a dependency-light deterministic encoder (pixel
  grid + fixed random projection for images, hashed byte trigrams for
  text). It carries no pretrained knowledge; it exists for fixtures,
  tests, and plumbing dry-runs.
* ``clip:<model id>`` - a pretrained vision-language encoder loaded via
  transformers (optional extra). Within-run determinism is promised;
  cross-run bitwise equality is not, hardware nondeterminism being what
  it is.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class EncoderConfig:
    checkpoint_id: str
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


class EncoderError(Exception):
    pass


class HashProjectionEncoder:
    """Deterministic stand-in encoder, one instance per checkpoint id.

    Images: grayscale 16x16 grid, flattened and projected through a fixed
    matrix seeded from the checkpoint id. Texts: byte trigrams hashed into
    the output dimension, L2-normalized. Inputs longer than
    ``text_context_bytes`` are truncated (the caller flags them).
    """

    GRID = 16
    text_context_bytes = 2048

    def __init__(self, checkpoint_id: str, dim: int):
        if dim < 1:
            raise EncoderError(f"bad projection dim in {checkpoint_id!r}")
        self.checkpoint_id = checkpoint_id
        self.dim = dim
        seed = int.from_bytes(hashlib.sha256(checkpoint_id.encode()).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((self.GRID * self.GRID, dim)).astype(np.float64)

    def encode_image(self, image: Image.Image) -> np.ndarray:
        gray = image.convert("L").resize((self.GRID, self.GRID), Image.BILINEAR)
        pixels = np.asarray(gray, dtype=np.float64).reshape(-1) / 255.0
        return (pixels @ self._projection).astype(np.float32)

    def encode_text(self, text: str) -> tuple[np.ndarray, bool]:
        data = text.encode("utf-8")
        truncated = len(data) > self.text_context_bytes
        data = data[: self.text_context_bytes]
        counts = np.zeros(self.dim, dtype=np.float64)
        padded = b"\x00" + data + b"\x00"
        for i in range(len(padded) - 2):
            h = 0xCBF29CE484222325
            for b in padded[i : i + 3]:
                h = ((h ^ b) * 0x100000001B3) & ((1 << 64) - 1)
            counts[h % self.dim] += 1.0
        norm = float(np.sqrt((counts**2).sum()))
        if norm > 0.0:
            counts /= norm
        return counts.astype(np.float32), truncated


class ClipEncoder:
    """CLIP image/text towers via transformers; loaded lazily."""

    text_context_bytes = 77 * 4  # rough byte budget; the tokenizer truncates

    def __init__(self, checkpoint_id: str, model_id: str, device: str):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError(
                f"{checkpoint_id!r} needs the clip extra (torch + transformers)"
            ) from exc
        self.checkpoint_id = checkpoint_id
        self._torch = __import__("torch")
        self._model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self._processor = CLIPProcessor.from_pretrained(model_id)
        self._device = device
        self.dim = int(self._model.config.projection_dim)

    def encode_image(self, image: Image.Image) -> np.ndarray:
        inputs = self._processor(images=image.convert("RGB"), return_tensors="pt").to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats[0].cpu().numpy().astype(np.float32)

    def encode_text(self, text: str) -> tuple[np.ndarray, bool]:
        tok = self._processor.tokenizer
        ids = tok(text)["input_ids"]
        truncated = len(ids) > tok.model_max_length
        inputs = tok(text, return_tensors="pt", truncation=True).to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats[0].cpu().numpy().astype(np.float32), truncated


def build_encoder(config: EncoderConfig):
    cid = config.checkpoint_id
    if cid.startswith("hashproj-"):
        try:
            dim = int(cid.split("-", 1)[1])
        except ValueError:
            raise EncoderError(f"bad checkpoint id {cid!r}: expected hashproj-<dim>") from None
        return HashProjectionEncoder(cid, dim)
    if cid.startswith("clip:"):
        return ClipEncoder(cid, cid.split(":", 1)[1], config.device)
    raise EncoderError(f"unknown checkpoint id {cid!r}")
