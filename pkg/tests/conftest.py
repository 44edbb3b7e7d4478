import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # oracles, builders

from memekit.corpus import EmbeddingMatrix, MemeRecord, TaskMeta, TemplateRecord


def make_matrix(rows) -> EmbeddingMatrix:
    return EmbeddingMatrix(np.asarray(rows, dtype=np.float32))


def make_template(tid, image_row, example_rows=(), text_row=None, example_text_rows=None):
    return TemplateRecord(
        template_id=tid,
        title=tid,
        about=f"about {tid}",
        image_row=image_row,
        text_row=text_row,
        example_image_rows=tuple(example_rows),
        example_text_rows=None if example_text_rows is None else tuple(example_text_rows),
    )


def make_meme(item_id, image_row, labels=(1,), text_row=None, split="none", ocr=""):
    return MemeRecord(
        item_id=item_id,
        ocr_text=ocr,
        labels=tuple(labels),
        image_row=image_row,
        text_row=text_row,
        original_split=split,
    )


@pytest.fixture
def binary_task():
    return TaskMeta(label_names=("neg", "pos"), multilabel=False)


def clustered_kb(n_templates, examples_per_template, dim, spread, rng, separation=60.0):
    """Well-separated template clusters: centers plus noisy examples.

    Returns (templates, EmbeddingMatrix, centers); template image rows come
    first, example rows follow grouped by template.
    """
    centers = rng.normal(0.0, 1.0, size=(n_templates, dim))
    centers = centers / np.sqrt((centers**2).sum(axis=1, keepdims=True)) * separation
    rows = [centers[i] for i in range(n_templates)]
    templates = []
    next_row = n_templates
    for i in range(n_templates):
        ex_rows = []
        for _ in range(examples_per_template):
            rows.append(centers[i] + rng.normal(0.0, spread, size=dim))
            ex_rows.append(next_row)
            next_row += 1
        templates.append(make_template(f"t{i:03d}", image_row=i, example_rows=ex_rows))
    return templates, make_matrix(np.asarray(rows)), centers
