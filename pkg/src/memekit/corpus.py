"""On-disk corpus formats and their loaders.

Binary embedding file (``*.emb``)::

    bytes 0..3   magic b"EMB1"
    bytes 4..7   u32 little-endian row count
    bytes 8..11  u32 little-endian dimension
    bytes 12..   row count x dimension float32 little-endian, row-major

Row identity lives in sidecar JSON manifests (``kb.json``, ``dataset.jsonl``)
so the binary payload can be memory-mapped or streamed without parsing.
Non-finite components are load errors, not warnings: a single NaN poisons
every distance computed downstream.

All loaded structures are immutable after construction and safe to share
across workers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

EMB_MAGIC = b"EMB1"
_HEADER = struct.Struct("<II")

SPLIT_TAGS = ("train", "val", "test", "none")


class CorpusError(Exception):
    """Base class for corpus file failures."""


class EmbeddingFormatError(CorpusError):
    """Malformed embedding file; ``reason`` is a stable failure code."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


class ManifestError(CorpusError):
    """Malformed or inconsistent KB manifest."""


class DatasetError(CorpusError):
    """Malformed or inconsistent dataset file."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense float32 matrix; rows are embedding vectors."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise EmbeddingFormatError("bad_shape", f"expected 2-D data, got {arr.ndim}-D")
        if not np.isfinite(arr).all():
            raise EmbeddingFormatError("nonfinite", "matrix contains NaN or Inf components")
        object.__setattr__(self, "data", np.ascontiguousarray(arr))
        self.data.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_rows:
            raise IndexError(f"row {i} out of range for matrix with {self.n_rows} rows")
        return self.data[i]

    def take(self, rows: Sequence[int]) -> "EmbeddingMatrix":
        """New matrix holding the given rows, in the given order."""
        idx = list(rows)
        for i in idx:
            if not 0 <= i < self.n_rows:
                raise IndexError(f"row {i} out of range for matrix with {self.n_rows} rows")
        return EmbeddingMatrix(self.data[idx].copy())


def load_embeddings(path) -> EmbeddingMatrix:
    """Read an ``*.emb`` file; loading then saving is byte-identical."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EMB_MAGIC:
        raise EmbeddingFormatError("bad_magic", f"{path}: missing {EMB_MAGIC!r} magic bytes")
    if len(blob) < 4 + _HEADER.size:
        raise EmbeddingFormatError("truncated", f"{path}: header truncated")
    n_rows, dim = _HEADER.unpack_from(blob, 4)
    if dim == 0:
        raise EmbeddingFormatError("bad_shape", f"{path}: zero dimension")
    expected = 4 + _HEADER.size + 4 * n_rows * dim
    if len(blob) < expected:
        raise EmbeddingFormatError(
            "truncated",
            f"{path}: truncated payload, expected {expected} bytes, found {len(blob)}",
        )
    if len(blob) > expected:
        raise EmbeddingFormatError(
            "oversized",
            f"{path}: {len(blob) - expected} trailing bytes after payload",
        )
    arr = np.frombuffer(blob, dtype="<f4", offset=4 + _HEADER.size).reshape(n_rows, dim)
    return EmbeddingMatrix(arr.copy())


def save_embeddings(matrix, path) -> None:
    """Write an ``*.emb`` file in the documented format."""
    if not isinstance(matrix, EmbeddingMatrix):
        matrix = EmbeddingMatrix(np.asarray(matrix, dtype=np.float32))
    payload = np.ascontiguousarray(matrix.data.astype("<f4", copy=False))
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(_HEADER.pack(matrix.n_rows, matrix.dim))
        fh.write(payload.tobytes(order="C"))


@dataclass(frozen=True)
class TemplateRecord:
    """One knowledge-base entry: a base template plus its example rows."""

    template_id: str
    title: str
    about: str
    image_row: int
    text_row: Optional[int]
    example_image_rows: tuple[int, ...]
    example_text_rows: Optional[tuple[int, ...]]
    source_url: str = ""

    @property
    def n_examples(self) -> int:
        return len(self.example_image_rows)


@dataclass(frozen=True)
class MemeRecord:
    """One dataset item: embeddings rows, OCR text, multi-hot labels."""

    item_id: str
    ocr_text: str
    labels: tuple[int, ...]
    image_row: int
    text_row: Optional[int]
    original_split: str = "none"


@dataclass(frozen=True)
class TaskMeta:
    """Label inventory and evaluation convention of a classification task."""

    label_names: tuple[str, ...]
    multilabel: bool
    eval_average: str = "macro"

    def __post_init__(self):
        names = tuple(self.label_names)
        if not names:
            raise DatasetError("label_names must be non-empty")
        if len(set(names)) != len(names):
            raise DatasetError("label_names contains duplicates")
        if self.eval_average not in ("macro", "weighted", "micro"):
            raise DatasetError(f"unknown eval_average {self.eval_average!r}")
        object.__setattr__(self, "label_names", names)

    @property
    def n_labels(self) -> int:
        return len(self.label_names)


def load_task(path) -> TaskMeta:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return TaskMeta(
        label_names=tuple(raw["label_names"]),
        multilabel=bool(raw["multilabel"]),
        eval_average=raw.get("eval_average", "macro"),
    )


def save_task(task: TaskMeta, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "label_names": list(task.label_names),
                "multilabel": task.multilabel,
                "eval_average": task.eval_average,
            },
            fh,
            sort_keys=True,
            separators=(",", ":"),
        )
        fh.write("\n")


def _check_row(row, matrix: EmbeddingMatrix, what: str, err):
    if not isinstance(row, int) or isinstance(row, bool) or not 0 <= row < matrix.n_rows:
        raise err(f"{what}: row index {row!r} out of range for matrix with {matrix.n_rows} rows")


def load_kb(manifest_path, embeddings: EmbeddingMatrix) -> list[TemplateRecord]:
    """Load a KB manifest; templates come back in manifest order."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    entries = raw["templates"] if isinstance(raw, dict) else raw
    templates: list[TemplateRecord] = []
    seen: set[str] = set()
    for pos, entry in enumerate(entries):
        tid = entry["template_id"]
        if tid in seen:
            raise ManifestError(f"duplicate template_id {tid!r}")
        seen.add(tid)
        _check_row(entry["image_row"], embeddings, f"template {tid!r} image_row", ManifestError)
        text_row = entry.get("text_row")
        if text_row is not None:
            _check_row(text_row, embeddings, f"template {tid!r} text_row", ManifestError)
        ex_img = tuple(entry.get("example_image_rows", ()))
        for r in ex_img:
            _check_row(r, embeddings, f"template {tid!r} example_image_rows", ManifestError)
        ex_txt = entry.get("example_text_rows")
        if ex_txt is not None:
            ex_txt = tuple(ex_txt)
            if len(ex_txt) != len(ex_img):
                raise ManifestError(
                    f"template {tid!r}: example_text_rows has {len(ex_txt)} entries, "
                    f"example_image_rows has {len(ex_img)}"
                )
            for r in ex_txt:
                _check_row(r, embeddings, f"template {tid!r} example_text_rows", ManifestError)
        templates.append(
            TemplateRecord(
                template_id=tid,
                title=entry.get("title", ""),
                about=entry.get("about", ""),
                image_row=entry["image_row"],
                text_row=text_row,
                example_image_rows=ex_img,
                example_text_rows=ex_txt,
                source_url=entry.get("source_url", ""),
            )
        )
    return templates


def kb_counts(templates: Sequence[TemplateRecord]) -> tuple[int, int]:
    """(number of templates, total number of examples)."""
    return len(templates), sum(t.n_examples for t in templates)


def save_kb(templates: Sequence[TemplateRecord], path) -> None:
    entries = []
    for t in templates:
        entries.append(
            {
                "template_id": t.template_id,
                "title": t.title,
                "about": t.about,
                "image_row": t.image_row,
                "text_row": t.text_row,
                "example_image_rows": list(t.example_image_rows),
                "example_text_rows": None if t.example_text_rows is None else list(t.example_text_rows),
                "source_url": t.source_url,
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"templates": entries}, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_dataset(jsonl_path, embeddings: EmbeddingMatrix, task: TaskMeta) -> list[MemeRecord]:
    """Load a dataset (one JSON record per line), validating against the task."""
    records: list[MemeRecord] = []
    seen: set[str] = set()
    with open(jsonl_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{jsonl_path}:{lineno}: invalid JSON ({exc})") from exc
            item_id = entry["item_id"]
            if item_id in seen:
                raise DatasetError(f"{jsonl_path}:{lineno}: duplicate item_id {item_id!r}")
            seen.add(item_id)
            labels = tuple(int(v) for v in entry["labels"])
            if len(labels) != task.n_labels:
                raise DatasetError(
                    f"{jsonl_path}:{lineno}: {item_id!r} has {len(labels)} label slots, "
                    f"task defines {task.n_labels}"
                )
            if any(v not in (0, 1) for v in labels):
                raise DatasetError(f"{jsonl_path}:{lineno}: {item_id!r} labels must be 0/1")
            if not task.multilabel and sum(labels) != 1:
                raise DatasetError(
                    f"{jsonl_path}:{lineno}: {item_id!r} has {sum(labels)} labels set, "
                    "single-label task requires exactly one"
                )
            _check_row(entry["image_row"], embeddings, f"item {item_id!r} image_row", DatasetError)
            text_row = entry.get("text_row")
            if text_row is not None:
                _check_row(text_row, embeddings, f"item {item_id!r} text_row", DatasetError)
            split = entry.get("original_split", "none")
            if split not in SPLIT_TAGS:
                raise DatasetError(f"{jsonl_path}:{lineno}: unknown original_split {split!r}")
            records.append(
                MemeRecord(
                    item_id=item_id,
                    ocr_text=entry.get("ocr_text", ""),
                    labels=labels,
                    image_row=entry["image_row"],
                    text_row=text_row,
                    original_split=split,
                )
            )
    return records


def save_dataset(records: Sequence[MemeRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "item_id": r.item_id,
                        "ocr_text": r.ocr_text,
                        "labels": list(r.labels),
                        "image_row": r.image_row,
                        "text_row": r.text_row,
                        "original_split": r.original_split,
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
            fh.write("\n")


def split_sizes(records: Sequence[MemeRecord]) -> dict[str, int]:
    """Item counts per original split tag."""
    out = {tag: 0 for tag in SPLIT_TAGS}
    for r in records:
        out[r.original_split] += 1
    return out
