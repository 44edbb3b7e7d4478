"""Batch embedding of image files and text records into embedding files.

Each input produces exactly one manifest line, in input order. Inputs
that embed successfully get consecutive row numbers; an undecodable image
is recorded as a skipped entry with ``row: null`` so row numbering never
silently shifts. Over-length texts are truncated by the encoder and
flagged. The checkpoint id rides on every manifest line: all rows in one
file come from one encoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .embfile import write_emb
from .encoders import EncoderConfig, build_encoder


@dataclass(frozen=True)
class ManifestRow:
    input_id: str
    source: str
    row: Optional[int]
    status: str               # ok | skipped
    reason: Optional[str] = None
    truncated: bool = False


def _write_manifest(rows: Sequence[ManifestRow], config: EncoderConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(
                json.dumps(
                    {
                        "id": r.input_id,
                        "source": r.source,
                        "row": r.row,
                        "status": r.status,
                        "reason": r.reason,
                        "truncated": r.truncated,
                        "checkpoint_id": config.checkpoint_id,
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
            fh.write("\n")


def embed_images(
    image_paths: Sequence,
    config: EncoderConfig,
    out_path,
    manifest_path,
) -> list[ManifestRow]:
    """Embed images in order; write the matrix and its row manifest."""
    encoder = build_encoder(config)
    vectors: list[np.ndarray] = []
    rows: list[ManifestRow] = []
    for p in image_paths:
        p = Path(p)
        try:
            with Image.open(p) as img:
                vec = encoder.encode_image(img)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            rows.append(
                ManifestRow(
                    input_id=p.name, source=str(p), row=None,
                    status="skipped", reason=f"undecodable image: {exc}",
                )
            )
            continue
        rows.append(ManifestRow(input_id=p.name, source=str(p), row=len(vectors), status="ok"))
        vectors.append(vec)
    matrix = (
        np.stack(vectors) if vectors else np.zeros((0, encoder.dim), dtype=np.float32)
    )
    write_emb(out_path, matrix)
    _write_manifest(rows, config, manifest_path)
    return rows


def embed_texts(
    texts: Sequence[tuple[str, str]],
    config: EncoderConfig,
    out_path,
    manifest_path,
) -> list[ManifestRow]:
    """Embed (id, text) pairs in order; long texts are truncated and flagged."""
    encoder = build_encoder(config)
    vectors: list[np.ndarray] = []
    rows: list[ManifestRow] = []
    for text_id, text in texts:
        vec, truncated = encoder.encode_text(text)
        rows.append(
            ManifestRow(
                input_id=text_id, source=text_id, row=len(vectors),
                status="ok", truncated=truncated,
            )
        )
        vectors.append(vec)
    matrix = (
        np.stack(vectors) if vectors else np.zeros((0, encoder.dim), dtype=np.float32)
    )
    write_emb(out_path, matrix)
    _write_manifest(rows, config, manifest_path)
    return rows


def read_text_inputs(path) -> list[tuple[str, str]]:
    """(id, text) pairs from JSONL ({"id", "text"}) or plain lines."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("{"):
                obj = json.loads(line)
                out.append((str(obj["id"]), obj["text"]))
            else:
                out.append((f"line{i:06d}", line))
    return out
