"""Per-template instance thresholds and out-of-distribution filters.

A template's threshold is a summary statistic (max, median, mean, or 25th
percentile) of the distances from the template to its own examples.
Percentiles use linear interpolation between closest ranks, so a median of
an even-length list is the midpoint of the two central values. A meme at
distance exactly equal to the threshold counts as an instance: only a
distance that exceeds the threshold makes it non-templatic.

Templates without examples fall back to a global threshold computed over
the per-template thresholds of every template that has examples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import EmbeddingMatrix, TemplateRecord
from .index import euclidean_distance

METHODS = ("max", "median", "mean", "p25")

INSTANCE = "instance"
NON_TEMPLATIC = "non_templatic"

OOD_KINDS = ("iqr", "three_sigma", "mad", "max")


class EmptyDistancesError(ValueError):
    """No distances to summarize; the caller must use the global fallback."""


def template_threshold(dists: Sequence[float], method: str) -> float:
    if method not in METHODS:
        raise ValueError(f"unknown threshold method {method!r}")
    arr = np.asarray(dists, dtype=np.float64)
    if arr.size == 0:
        raise EmptyDistancesError("empty distance list, use the global fallback")
    if (arr < 0).any():
        raise ValueError("distances must be non-negative")
    if method == "max":
        return float(arr.max())
    if method == "median":
        return float(np.percentile(arr, 50.0))
    if method == "mean":
        # On near-constant lists the accumulated mean can round one ulp
        # above the max; the nesting of instance sets requires mean <= max.
        return float(min(arr.mean(), arr.max()))
    return float(np.percentile(arr, 25.0))


@dataclass(frozen=True)
class ThresholdProfile:
    """Distance statistics and the chosen threshold for one template.

    ``n_examples`` is stored separately from ``dists`` because reloaded
    profiles keep the count but not the raw distance lists.
    """

    template_id: str
    dists: tuple[float, ...]
    threshold: float
    method: str
    n_examples: int = -1
    fallback: bool = False

    def __post_init__(self):
        if self.n_examples < 0:
            object.__setattr__(self, "n_examples", len(self.dists))


@dataclass(frozen=True)
class GlobalThreshold:
    """Fallback threshold aggregated over templates that have examples."""

    method: str
    value: float
    n_contributing_templates: int


def global_threshold(profiles: Sequence[ThresholdProfile], method: str) -> GlobalThreshold:
    values = [p.threshold for p in profiles if p.n_examples >= 1]
    if not values:
        raise EmptyDistancesError("no template has examples; global threshold undefined")
    return GlobalThreshold(
        method=method,
        value=template_threshold(values, method),
        n_contributing_templates=len(values),
    )


def classify_item(distance: float, profile_or_global) -> str:
    """instance iff distance <= threshold; the boundary is an instance."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    if isinstance(profile_or_global, ThresholdProfile):
        bound = profile_or_global.threshold
    elif isinstance(profile_or_global, GlobalThreshold):
        bound = profile_or_global.value
    else:
        bound = float(profile_or_global)
    return INSTANCE if distance <= bound else NON_TEMPLATIC


@dataclass(frozen=True)
class OODFilter:
    """Keep/discard gate from one template's distance statistics.

    Bounds: iqr -> Q3 + 1.5*IQR, three_sigma -> mean + 3*std (population),
    mad -> median + 3*MAD, max -> max(dists). Fewer than two examples
    cannot support the spread-based kinds and fall back to max.
    """

    kind: str
    bound: float
    stats: dict = field(default_factory=dict)
    requested_kind: Optional[str] = None


def build_ood_filter(dists: Sequence[float], kind: str) -> OODFilter:
    if kind not in OOD_KINDS:
        raise ValueError(f"unknown OOD filter kind {kind!r}")
    arr = np.asarray(dists, dtype=np.float64)
    if arr.size == 0:
        raise EmptyDistancesError("cannot build an OOD filter without distances")
    requested = kind
    if arr.size < 2 and kind != "max":
        kind = "max"
    if kind == "iqr":
        q1 = float(np.percentile(arr, 25.0))
        q3 = float(np.percentile(arr, 75.0))
        bound = q3 + 1.5 * (q3 - q1)
        stats = {"q1": q1, "q3": q3}
    elif kind == "three_sigma":
        mean = float(arr.mean())
        std = float(arr.std())
        bound = mean + 3.0 * std
        stats = {"mean": mean, "std": std}
    elif kind == "mad":
        med = float(np.percentile(arr, 50.0))
        mad = float(np.percentile(np.abs(arr - med), 50.0))
        bound = med + 3.0 * mad
        stats = {"median": med, "mad": mad}
    else:
        bound = float(arr.max())
        stats = {"max": bound}
    return OODFilter(kind=kind, bound=bound, stats=stats, requested_kind=requested)


def ood_keep(distance: float, filt: OODFilter) -> bool:
    return distance <= filt.bound


def template_example_distances(
    template: TemplateRecord,
    embeddings: EmbeddingMatrix,
    vec_fn=None,
) -> list[float]:
    """Distances from the template to each of its examples.

    By default the image embeddings are compared; pass ``vec_fn`` (mapping
    (image_row, text_row) to a vector) to threshold fused vectors instead.
    """
    if vec_fn is None:
        vec_fn = lambda image_row, text_row: embeddings.row(image_row)
    ref = vec_fn(template.image_row, template.text_row)
    out = []
    ex_txt = template.example_text_rows or (None,) * len(template.example_image_rows)
    for img_row, txt_row in zip(template.example_image_rows, ex_txt):
        out.append(euclidean_distance(ref, vec_fn(img_row, txt_row)))
    return out


def build_profiles(
    templates: Sequence[TemplateRecord],
    embeddings: EmbeddingMatrix,
    method: str,
    vec_fn=None,
) -> tuple[dict[str, ThresholdProfile], GlobalThreshold]:
    """Profiles for every template, with the global fallback filled in.

    Computed per template and merged by template_id, so the result does not
    depend on scheduling.
    """
    with_examples: list[ThresholdProfile] = []
    empty_ids: list[str] = []
    profiles: dict[str, ThresholdProfile] = {}
    for t in templates:
        dists = template_example_distances(t, embeddings, vec_fn)
        if dists:
            prof = ThresholdProfile(
                template_id=t.template_id,
                dists=tuple(dists),
                threshold=template_threshold(dists, method),
                method=method,
            )
            with_examples.append(prof)
            profiles[t.template_id] = prof
        else:
            empty_ids.append(t.template_id)
    glob = global_threshold(with_examples, method)
    for tid in empty_ids:
        profiles[tid] = ThresholdProfile(
            template_id=tid,
            dists=(),
            threshold=glob.value,
            method=method,
            fallback=True,
        )
    return profiles, glob


def save_thresholds(profiles: dict[str, ThresholdProfile], glob: GlobalThreshold, path, run_config=None) -> None:
    doc = {
        "templates": [
            {
                "template_id": p.template_id,
                "method": p.method,
                "threshold": p.threshold,
                "n_examples": p.n_examples,
                "fallback": p.fallback,
            }
            for p in sorted(profiles.values(), key=lambda p: p.template_id)
        ],
        "global": {
            "method": glob.method,
            "value": glob.value,
            "n_contributing_templates": glob.n_contributing_templates,
        },
    }
    if run_config is not None:
        doc["run_config"] = run_config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_thresholds(path) -> tuple[dict[str, ThresholdProfile], GlobalThreshold]:
    """Reload a thresholds file; raw distance lists are not persisted."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    glob = GlobalThreshold(
        method=doc["global"]["method"],
        value=doc["global"]["value"],
        n_contributing_templates=doc["global"]["n_contributing_templates"],
    )
    profiles = {}
    for row in doc["templates"]:
        profiles[row["template_id"]] = ThresholdProfile(
            template_id=row["template_id"],
            dists=(),
            threshold=row["threshold"],
            method=row["method"],
            n_examples=row["n_examples"],
            fallback=row["fallback"],
        )
    return profiles, glob
