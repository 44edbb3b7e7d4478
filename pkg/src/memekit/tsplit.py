"""Template-aware dataset splitting.

Every meme is mapped to an object: the nearest template when its distance
is within that template's threshold, otherwise a fresh unique identifier
(UI) of its own. Objects, not items, are then dealt to splits, so a
template or UI lives in exactly one split and nothing leaks across them.

The test pool is sized by ``floor((t_size / d_size) * o_size)`` over the
shuffled object array, and the first cutoff-many shuffled objects form the
test pool. A second cutoff, ``floor(val_fraction * remaining)``, carves
the validation pool out of the remainder; everything else trains. Both
cutoffs are computed with integer arithmetic, so no float rounding can
move a boundary.

Three operating modes:

* downsample: resplit only the original train+val items; the carved-out
  dummy test pool is discarded and the original test split passes through.
* full: resplit everything, with target ratios taken from the original
  split sizes.
* full + downsample-by-template: shrink a full plan's train/val pools by
  keeping ``floor(pool_objects * ratio)`` objects and discarding the rest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .corpus import EmbeddingMatrix, MemeRecord
from .index import Index, query_knn_batch
from .rng import Xoshiro256StarStar, derive_stream, fisher_yates
from .thresholds import INSTANCE, ThresholdProfile, classify_item

SPLITS = ("train", "val", "test", "discard")

OBJECT_TEMPLATE = "template"
OBJECT_UI = "ui"


@dataclass(frozen=True)
class ObjectId:
    """A template id, or a fresh per-meme UI. UIs are never shared."""

    kind: str
    id: str

    def as_key(self) -> str:
        return f"{self.kind}:{self.id}"


def ui_for(item_id: str) -> ObjectId:
    return ObjectId(OBJECT_UI, f"UI::{item_id}")


@dataclass(frozen=True)
class SplitGeometry:
    t_size: int
    d_size: int
    o_size: int
    cutoff: int


def compute_cutoff(t_size: int, d_size: int, o_size: int) -> int:
    """floor((t_size / d_size) * o_size), exact in integers."""
    if d_size <= 0:
        raise ValueError("d_size must be positive")
    return (t_size * o_size) // d_size


@dataclass
class SplitPlan:
    """Item-to-split assignments plus the objects that justified them."""

    assignments: dict[str, str]
    object_of: dict[str, ObjectId]
    geometry: SplitGeometry
    seed: int
    threshold_method: str
    warnings: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def items_in(self, split: str) -> list[str]:
        return [i for i, s in self.assignments.items() if s == split]

    def objects_in(self, split: str) -> list[ObjectId]:
        """Distinct objects assigned to a split, in first-occurrence order."""
        seen: dict[ObjectId, None] = {}
        for item, s in self.assignments.items():
            if s == split and item in self.object_of:
                seen.setdefault(self.object_of[item], None)
        return list(seen)

    def leaky_objects(self) -> list[ObjectId]:
        """Objects spanning more than one non-discard split (should be none)."""
        splits_of: dict[ObjectId, set[str]] = {}
        for item, obj in self.object_of.items():
            split = self.assignments[item]
            if split != "discard":
                splits_of.setdefault(obj, set()).add(split)
        return [obj for obj, splits in splits_of.items() if len(splits) > 1]

    def summary(self) -> dict[str, dict[str, int]]:
        """Per split: item count plus template/UI object counts."""
        out = {}
        for split in SPLITS:
            objs = self.objects_in(split)
            out[split] = {
                "items": len(self.items_in(split)),
                "templates": sum(1 for o in objs if o.kind == OBJECT_TEMPLATE),
                "uis": sum(1 for o in objs if o.kind == OBJECT_UI),
            }
        return out


def save_plan(plan: SplitPlan, path, run_config=None) -> None:
    doc = {
        "assignments": plan.assignments,
        "object_of": {item: {"kind": o.kind, "id": o.id} for item, o in plan.object_of.items()},
        "geometry": {
            "t_size": plan.geometry.t_size,
            "d_size": plan.geometry.d_size,
            "o_size": plan.geometry.o_size,
            "cutoff": plan.geometry.cutoff,
        },
        "seed": plan.seed,
        "threshold_method": plan.threshold_method,
        "warnings": plan.warnings,
        "meta": plan.meta,
    }
    if run_config is not None:
        doc["run_config"] = run_config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_plan(path) -> SplitPlan:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return SplitPlan(
        assignments=dict(doc["assignments"]),
        object_of={item: ObjectId(o["kind"], o["id"]) for item, o in doc["object_of"].items()},
        geometry=SplitGeometry(**doc["geometry"]),
        seed=doc["seed"],
        threshold_method=doc["threshold_method"],
        warnings=list(doc.get("warnings", [])),
        meta=dict(doc.get("meta", {})),
    )


def assign_objects(
    records: Sequence[MemeRecord],
    index: Index,
    profiles: dict[str, ThresholdProfile],
    embeddings: EmbeddingMatrix,
    threads: int = 1,
    vec_fn=None,
) -> dict[str, ObjectId]:
    """Nearest template per meme, thresholded into template-id or fresh UI.

    The index must be built over base templates only. Returned in dataset
    order, which later fixes the pre-shuffle object order.
    """
    if not records:
        return {}
    if vec_fn is None:
        vec_fn = lambda rec: embeddings.row(rec.image_row)
    queries = [vec_fn(r) for r in records]
    nearest = query_knn_batch(index, queries, k=1, threads=threads)
    out: dict[str, ObjectId] = {}
    for rec, (hit,) in zip(records, nearest):
        profile = profiles[hit.template_id]
        if classify_item(hit.distance, profile) == INSTANCE:
            out[rec.item_id] = ObjectId(OBJECT_TEMPLATE, hit.template_id)
        else:
            out[rec.item_id] = ui_for(rec.item_id)
    return out


def split(
    objects: dict[str, ObjectId],
    t_size: int,
    d_size: int,
    val_num: int,
    val_den: int,
    seed: int,
    threshold_method: str,
    meta: Optional[dict] = None,
) -> SplitPlan:
    """Deal objects to test, then val, then train, with a seeded shuffle.

    ``objects`` maps item_id to ObjectId in dataset order; the validation
    fraction is the exact rational val_num/val_den.
    """
    if not objects:
        raise ValueError("cannot split an empty object map")
    distinct: dict[ObjectId, None] = {}
    for obj in objects.values():
        distinct.setdefault(obj, None)
    order = list(distinct)
    rng = Xoshiro256StarStar(seed)
    fisher_yates(order, rng)

    o_size = len(order)
    cutoff = compute_cutoff(t_size, d_size, o_size)
    warnings = []
    if cutoff == 0 and t_size > 0:
        warnings.append(
            f"degenerate cutoff: t_size={t_size} but only {o_size} objects, test pool is empty"
        )
    remaining = o_size - cutoff
    val_cut = (val_num * remaining) // val_den if val_den > 0 else 0

    pool_of: dict[ObjectId, str] = {}
    for obj in order[:cutoff]:
        pool_of[obj] = "test"
    for obj in order[cutoff : cutoff + val_cut]:
        pool_of[obj] = "val"
    for obj in order[cutoff + val_cut :]:
        pool_of[obj] = "train"

    assignments = {item: pool_of[obj] for item, obj in objects.items()}
    return SplitPlan(
        assignments=assignments,
        object_of=dict(objects),
        geometry=SplitGeometry(t_size=t_size, d_size=d_size, o_size=o_size, cutoff=cutoff),
        seed=seed,
        threshold_method=threshold_method,
        warnings=warnings,
        meta=meta or {},
    )


def _original_sizes(records: Sequence[MemeRecord]) -> dict[str, int]:
    sizes = {"train": 0, "val": 0, "test": 0, "none": 0}
    for r in records:
        sizes[r.original_split] += 1
    return sizes


def _val_fraction(v_size: int, d_size: int) -> tuple[int, int]:
    # Datasets without a validation split get 20% of the pool by objects.
    if v_size > 0:
        return v_size, d_size
    return 1, 5


def tsplit_downsample_mode(
    records: Sequence[MemeRecord],
    index: Index,
    profiles: dict[str, ThresholdProfile],
    embeddings: EmbeddingMatrix,
    seed: int,
    threshold_method: str,
    threads: int = 1,
    vec_fn=None,
) -> SplitPlan:
    """Resplit only the original train+val items; discard the dummy test.

    Original test items pass through unchanged, so evaluation stays on the
    untouched test split while less data feeds optimization.
    """
    sizes = _original_sizes(records)
    if sizes["train"] == 0:
        raise ValueError("downsample mode requires items tagged with an original train split")
    d_size = len(records)
    t_size, v_size = sizes["test"], sizes["val"]
    pool = [r for r in records if r.original_split in ("train", "val")]
    objects = assign_objects(pool, index, profiles, embeddings, threads=threads, vec_fn=vec_fn)
    val_num, val_den = _val_fraction(v_size, d_size)
    plan = split(
        objects,
        t_size=t_size,
        d_size=d_size,
        val_num=val_num,
        val_den=val_den,
        seed=seed,
        threshold_method=threshold_method,
        meta={
            "mode": "downsample",
            "original_train_size": sizes["train"],
            "original_val_size": v_size,
            "original_test_size": t_size,
        },
    )
    # The mode's test pool is a dummy: it exists to hold out objects, not to evaluate.
    for item, assigned in plan.assignments.items():
        if assigned == "test":
            plan.assignments[item] = "discard"
    for r in records:
        if r.original_split == "test":
            plan.assignments[r.item_id] = "test"
    return plan


def tsplit_full_mode(
    records: Sequence[MemeRecord],
    index: Index,
    profiles: dict[str, ThresholdProfile],
    embeddings: EmbeddingMatrix,
    seed: int,
    threshold_method: str,
    threads: int = 1,
    vec_fn=None,
) -> SplitPlan:
    """Resplit every item, targeting the original split-size ratios."""
    if not records:
        raise ValueError("cannot split an empty dataset")
    sizes = _original_sizes(records)
    d_size = len(records)
    t_size, v_size = sizes["test"], sizes["val"]
    objects = assign_objects(records, index, profiles, embeddings, threads=threads, vec_fn=vec_fn)
    val_num, val_den = _val_fraction(v_size, d_size)
    return split(
        objects,
        t_size=t_size,
        d_size=d_size,
        val_num=val_num,
        val_den=val_den,
        seed=seed,
        threshold_method=threshold_method,
        meta={
            "mode": "full",
            "original_train_size": sizes["train"],
            "original_val_size": v_size,
            "original_test_size": t_size,
        },
    )


def _keep_count(n_objects: int, num: int, den: int) -> int:
    return (n_objects * num) // den


def tsplit_downsample_by_template(
    plan: SplitPlan,
    downsample_size: int,
    val_downsample_size: Optional[int] = None,
) -> SplitPlan:
    """Shrink a full plan's train/val pools by object count.

    ``floor(pool_objects * downsample_size / original_size)`` objects are
    kept and the rest of the pool's objects are discarded with all their
    items. Pool objects are ordered by object key and shuffled with streams
    derived from the plan seed, so the result replays identically after a
    save/load round trip. The test pool is untouched.
    """
    if plan.meta.get("mode") != "full":
        raise ValueError("template downsampling expects a plan produced by full mode")
    orig_train = plan.meta["original_train_size"]
    orig_val = plan.meta.get("original_val_size", 0)
    if downsample_size > orig_train:
        raise ValueError(
            f"downsample_size {downsample_size} exceeds original training size {orig_train}"
        )
    if val_downsample_size is not None:
        if orig_val == 0:
            raise ValueError("val_downsample_size given but the original dataset had no val split")
        if val_downsample_size > orig_val:
            raise ValueError(
                f"val_downsample_size {val_downsample_size} exceeds original val size {orig_val}"
            )
        val_num, val_den = val_downsample_size, orig_val
    else:
        # No explicit val target: shrink the val pool by the train ratio.
        val_num, val_den = downsample_size, orig_train

    new_assignments = dict(plan.assignments)
    geometry_meta = {}
    for pool, num, den, stream in (
        ("train", downsample_size, orig_train, "downsample-train"),
        ("val", val_num, val_den, "downsample-val"),
    ):
        objs = sorted(plan.objects_in(pool), key=lambda o: o.as_key())
        if not objs:
            continue
        fisher_yates(objs, derive_stream(plan.seed, stream))
        keep = _keep_count(len(objs), num, den)
        kept = set(objs[:keep])
        for item, obj in plan.object_of.items():
            if plan.assignments[item] == pool and obj not in kept:
                new_assignments[item] = "discard"
        geometry_meta[pool] = {
            "pool_objects": len(objs),
            "kept_objects": keep,
            "ratio_num": num,
            "ratio_den": den,
        }

    meta = dict(plan.meta)
    meta["downsample"] = {
        "downsample_size": downsample_size,
        "original_training_size": orig_train,
        "train_templates": geometry_meta.get("train", {}).get("pool_objects", 0),
        "cutoff": geometry_meta.get("train", {}).get("kept_objects", 0),
        "pools": geometry_meta,
    }
    return SplitPlan(
        assignments=new_assignments,
        object_of=dict(plan.object_of),
        geometry=plan.geometry,
        seed=plan.seed,
        threshold_method=plan.threshold_method,
        warnings=list(plan.warnings),
        meta=meta,
    )
