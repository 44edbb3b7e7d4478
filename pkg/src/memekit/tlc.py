"""Nearest-template majority-label classification.

Fitting matches each training meme to its closest reference entry and
appends the meme's label vector to that entry's template tally; each
template then reduces to its most frequent label vector, and the most
frequent label over all of training becomes the global backoff.

Prediction retrieves the k nearest entries and votes. With template_vote
the deduplicated templates of the k entries each contribute their majority
label; with label_vote every training label observed under those templates
is pooled and the most frequent wins. Ties go to the nearest voting
template's label. A meme whose matched templates were never seen in
training backs off to the global majority. The out-of-distribution modes
additionally gate on the nearest template's max-method threshold: maj
backs off to the global majority, rand draws a label from the training
label multiset (seeded per item, so runs replay).

Label vectors are tallied as atoms (whole multi-hot sets) and the majority
set is predicted, which keeps "most frequent label" well defined for
multilabel tasks. All tallies preserve first-seen order; count ties break
toward the earlier-seen label, so fitting order pins every prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import fusion
from .corpus import EmbeddingMatrix, MemeRecord, TemplateRecord
from .index import ENTRY_EXAMPLE, ENTRY_TEMPLATE, EntryMeta, Index, build_index, query_knn
from .rng import derive_stream
from .thresholds import ThresholdProfile

VOTE_TEMPLATE = "template_vote"
VOTE_LABEL = "label_vote"
VOTE_MODES = (VOTE_TEMPLATE, VOTE_LABEL)

OOD_NORM = "norm"
OOD_MAJ = "maj"
OOD_RAND = "rand"
OOD_MODES = (OOD_NORM, OOD_MAJ, OOD_RAND)

BACKOFF_NONE = "none"
BACKOFF_UNSEEN = "unseen_template"
BACKOFF_OOD = "ood"

LabelVec = tuple[int, ...]
Tally = dict[LabelVec, int]  # insertion-ordered


@dataclass
class TlcModel:
    tallies: dict[str, Tally]
    majority: dict[str, LabelVec]
    global_majority: LabelVec
    training_labels: Tally
    fusion_mode: str
    include_examples: bool
    k: int
    vote_mode: str
    ood_mode: str
    seed: int
    normalize: bool = False


@dataclass(frozen=True)
class Prediction:
    item_id: str
    labels: LabelVec
    matched_template_id: Optional[str]
    backoff_reason: str = BACKOFF_NONE


def _tally_add(tally: Tally, label: LabelVec, count: int = 1) -> None:
    tally[label] = tally.get(label, 0) + count


def _most_common(tally: Tally, prefer: Optional[LabelVec] = None) -> LabelVec:
    """Highest-count label; ties prefer ``prefer`` if tied, else first seen."""
    if not tally:
        raise ValueError("empty tally")
    best = max(tally.values())
    tied = [label for label, count in tally.items() if count == best]
    if prefer is not None and prefer in tied:
        return prefer
    return tied[0]


def fuse_record(
    record: MemeRecord,
    embeddings: EmbeddingMatrix,
    mode: str,
    normalize: bool = False,
) -> np.ndarray:
    image = None if record.image_row is None else embeddings.row(record.image_row)
    text = None if record.text_row is None else embeddings.row(record.text_row)
    if normalize:
        image = None if image is None else fusion.l2_normalize(np.asarray(image, dtype=np.float64))
        text = None if text is None else fusion.l2_normalize(np.asarray(text, dtype=np.float64))
    return fusion.fuse(image, text, mode)


def build_reference(
    templates: Sequence[TemplateRecord],
    embeddings: EmbeddingMatrix,
    mode: str,
    include_examples: bool,
    normalize: bool = False,
) -> Index:
    """Index over fused template vectors, plus fused examples when asked.

    Rows are laid out templates-first in manifest order, then examples
    grouped by template, which fixes the tie rule's row numbering.
    """

    def fused(image_row, text_row):
        image = None if image_row is None else embeddings.row(image_row)
        text = None if text_row is None else embeddings.row(text_row)
        if normalize:
            image = None if image is None else fusion.l2_normalize(np.asarray(image, dtype=np.float64))
            text = None if text is None else fusion.l2_normalize(np.asarray(text, dtype=np.float64))
        return fusion.fuse(image, text, mode)

    rows = []
    meta = []
    for t in templates:
        rows.append(fused(t.image_row, t.text_row))
        meta.append(EntryMeta(ENTRY_TEMPLATE, t.template_id))
    if include_examples:
        for t in templates:
            ex_txt = t.example_text_rows or (None,) * len(t.example_image_rows)
            for img_row, txt_row in zip(t.example_image_rows, ex_txt):
                rows.append(fused(img_row, txt_row))
                meta.append(EntryMeta(ENTRY_EXAMPLE, t.template_id))
    matrix = EmbeddingMatrix(np.vstack(rows))
    return build_index(matrix, meta, include_examples=include_examples)


def tlc_fit(
    train: Sequence[MemeRecord],
    index: Index,
    embeddings: EmbeddingMatrix,
    fusion_mode: str,
    include_examples: bool,
    k: int = 1,
    vote_mode: str = VOTE_TEMPLATE,
    ood_mode: str = OOD_NORM,
    seed: int = 0,
    normalize: bool = False,
) -> TlcModel:
    """Tally training labels under each record's nearest template."""
    if not train:
        raise ValueError("cannot fit on an empty training set")
    if vote_mode not in VOTE_MODES:
        raise ValueError(f"unknown vote mode {vote_mode!r}")
    if ood_mode not in OOD_MODES:
        raise ValueError(f"unknown ood mode {ood_mode!r}")
    tallies: dict[str, Tally] = {}
    training_labels: Tally = {}
    for rec in train:
        q = fuse_record(rec, embeddings, fusion_mode, normalize)
        (hit,) = query_knn(index, q, 1)
        _tally_add(tallies.setdefault(hit.template_id, {}), rec.labels)
        _tally_add(training_labels, rec.labels)
    majority = {tid: _most_common(tally) for tid, tally in tallies.items()}
    return TlcModel(
        tallies=tallies,
        majority=majority,
        global_majority=_most_common(training_labels),
        training_labels=training_labels,
        fusion_mode=fusion_mode,
        include_examples=include_examples,
        k=k,
        vote_mode=vote_mode,
        ood_mode=ood_mode,
        seed=seed,
        normalize=normalize,
    )


def _voting_templates(model: TlcModel, neighbors) -> list[str]:
    """Deduplicated template ids of the neighbors, restricted to fitted ones."""
    seen: dict[str, None] = {}
    for n in neighbors:
        seen.setdefault(n.template_id, None)
    return [tid for tid in seen if tid in model.tallies]


def _vote(model: TlcModel, voting: list[str]) -> LabelVec:
    nearest_label = model.majority[voting[0]]
    if model.vote_mode == VOTE_TEMPLATE:
        tally: Tally = {}
        for tid in voting:
            _tally_add(tally, model.majority[tid])
    else:
        tally = {}
        for tid in voting:
            for label, count in model.tallies[tid].items():
                _tally_add(tally, label, count)
    return _most_common(tally, prefer=nearest_label)


def _rand_label(model: TlcModel, item_id: str) -> LabelVec:
    """Distribution-proportional draw from the training label multiset."""
    rng = derive_stream(model.seed, item_id)
    total = sum(model.training_labels.values())
    pick = rng.next_below(total)
    acc = 0
    for label, count in model.training_labels.items():
        acc += count
        if pick < acc:
            return label
    raise AssertionError("unreachable: pick is below the total count")


def tlc_predict(
    model: TlcModel,
    record: MemeRecord,
    index: Index,
    embeddings: EmbeddingMatrix,
    max_profiles: Optional[dict[str, ThresholdProfile]] = None,
) -> Prediction:
    """Predict one record; ``max_profiles`` is required for the OOD modes.

    The OOD gate always compares against max-method thresholds, whatever
    method the surrounding pipeline used for splitting.
    """
    if model.k > index.size:
        raise ValueError(f"k={model.k} exceeds index size {index.size}")
    q = fuse_record(record, embeddings, model.fusion_mode, model.normalize)
    neighbors = query_knn(index, q, model.k)
    nearest = neighbors[0]

    voting = _voting_templates(model, neighbors)
    if not voting:
        return Prediction(record.item_id, model.global_majority, nearest.template_id, BACKOFF_UNSEEN)

    if model.ood_mode != OOD_NORM:
        if max_profiles is None:
            raise ValueError("OOD modes need max-method threshold profiles")
        bound = max_profiles[nearest.template_id].threshold
        if nearest.distance > bound:
            if model.ood_mode == OOD_MAJ:
                return Prediction(record.item_id, model.global_majority, nearest.template_id, BACKOFF_OOD)
            return Prediction(record.item_id, _rand_label(model, record.item_id), nearest.template_id, BACKOFF_OOD)

    return Prediction(record.item_id, _vote(model, voting), nearest.template_id, BACKOFF_NONE)


def _label_pool(model: TlcModel, neighbors) -> Tally:
    pool: Tally = {}
    for tid in _voting_templates(model, neighbors):
        for label, count in model.tallies[tid].items():
            _tally_add(pool, label, count)
    return pool


def tlc_predict_late_fusion(
    model_img: TlcModel,
    model_txt: TlcModel,
    record: MemeRecord,
    index_img: Index,
    index_txt: Index,
    embeddings: EmbeddingMatrix,
) -> Prediction:
    """Each modality pools labels separately; the merged pool elects.

    A record missing one modality degrades to the other modality's
    label_vote. Ties go to the image side's nearest fitted template.
    """
    sides = []
    if record.image_row is not None:
        q = fuse_record(record, embeddings, fusion.IMAGE_ONLY, model_img.normalize)
        sides.append((model_img, query_knn(index_img, q, model_img.k)))
    if record.text_row is not None:
        q = fuse_record(record, embeddings, fusion.TEXT_ONLY, model_txt.normalize)
        sides.append((model_txt, query_knn(index_txt, q, model_txt.k)))
    if not sides:
        raise fusion.FusionError(f"record {record.item_id!r} has no modalities")

    merged: Tally = {}
    prefer: Optional[LabelVec] = None
    matched: Optional[str] = None
    for model, neighbors in sides:
        if matched is None:
            matched = neighbors[0].template_id
        voting = _voting_templates(model, neighbors)
        if voting and prefer is None:
            prefer = model.majority[voting[0]]
        for label, count in _label_pool(model, neighbors).items():
            _tally_add(merged, label, count)
    if not merged:
        return Prediction(record.item_id, model_img.global_majority, matched, BACKOFF_UNSEEN)
    return Prediction(record.item_id, _most_common(merged, prefer=prefer), matched, BACKOFF_NONE)


def save_model(model: TlcModel, path, run_config=None) -> None:
    doc = {
        "config": {
            "fusion_mode": model.fusion_mode,
            "include_examples": model.include_examples,
            "k": model.k,
            "vote_mode": model.vote_mode,
            "ood_mode": model.ood_mode,
            "seed": model.seed,
            "normalize": model.normalize,
        },
        # Tallies are stored as ordered pair lists: insertion order carries
        # the tie-break rule and must survive the round trip.
        "tallies": [
            {"template_id": tid, "tally": [[list(label), count] for label, count in tally.items()]}
            for tid, tally in model.tallies.items()
        ],
        "global_majority": list(model.global_majority),
        "training_labels": [[list(label), count] for label, count in model.training_labels.items()],
    }
    if run_config is not None:
        doc["run_config"] = run_config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> TlcModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    tallies: dict[str, Tally] = {}
    for row in doc["tallies"]:
        tallies[row["template_id"]] = {tuple(label): count for label, count in row["tally"]}
    cfg = doc["config"]
    return TlcModel(
        tallies=tallies,
        majority={tid: _most_common(t) for tid, t in tallies.items()},
        global_majority=tuple(doc["global_majority"]),
        training_labels={tuple(label): count for label, count in doc["training_labels"]},
        fusion_mode=cfg["fusion_mode"],
        include_examples=cfg["include_examples"],
        k=cfg["k"],
        vote_mode=cfg["vote_mode"],
        ood_mode=cfg["ood_mode"],
        seed=cfg["seed"],
        normalize=cfg["normalize"],
    )
