"""F1 computation with a dual zero-division convention.

Per-class precision, recall, and F1 are computed twice, once mapping
zero-denominator cases to 0 and once to 1, and the reported aggregate is
the maximum of the two. One guard prevents inflation: a class that is
never predicted and never appears in gold contributes its undefined-to-0
value under both conventions, so ghost classes cannot buy a free 1.0.

Weighted averages weight by gold support. Micro pools the counts first,
which makes micro-F1 equal accuracy on single-label tasks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import TaskMeta

ZD0 = "zd0"
ZD1 = "zd1"
MAX_OF_BOTH = "max_of_both"
CONVENTIONS = (ZD0, ZD1, MAX_OF_BOTH)


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class true/false positive and false negative counts."""

    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(t + f for t, f in zip(self.tp, self.fn))

    @property
    def predicted(self) -> tuple[int, ...]:
        return tuple(t + f for t, f in zip(self.tp, self.fp))


@dataclass(frozen=True)
class F1Report:
    per_class_f1: tuple[float, ...]
    macro: float
    weighted: float
    micro: float
    convention_used: str


def confusion_counts(
    preds: Sequence[Sequence[int]],
    golds: Sequence[Sequence[int]],
    n_classes: int,
) -> ConfusionCounts:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise ValueError("empty input")
    p = np.asarray(preds, dtype=np.int64)
    g = np.asarray(golds, dtype=np.int64)
    if p.shape != (len(preds), n_classes) or g.shape != p.shape:
        raise ValueError(f"label vectors must all have {n_classes} slots")
    tp = ((p == 1) & (g == 1)).sum(axis=0)
    fp = ((p == 1) & (g == 0)).sum(axis=0)
    fn = ((p == 0) & (g == 1)).sum(axis=0)
    return ConfusionCounts(tp=tuple(map(int, tp)), fp=tuple(map(int, fp)), fn=tuple(map(int, fn)))


def _prf1(tp: int, fp: int, fn: int, zd: float) -> float:
    # The F1 zero-division substitute applies only when the class has no
    # predictions and no gold at all; a defined precision = recall = 0
    # scores a plain 0 either way.
    precision = tp / (tp + fp) if tp + fp > 0 else zd
    recall = tp / (tp + fn) if tp + fn > 0 else zd
    if precision + recall == 0:
        return zd if tp + fp + fn == 0 else 0.0
    return 2.0 * precision * recall / (precision + recall)


def _micro(counts: ConfusionCounts, zd: float) -> float:
    return _prf1(sum(counts.tp), sum(counts.fp), sum(counts.fn), zd)


def _aggregate(per_class: Sequence[float], support: Sequence[int]) -> tuple[float, float]:
    """(macro, weighted); an all-zero support yields weighted 0.0."""
    macro = float(np.mean(per_class))
    total = sum(support)
    if total == 0:
        return macro, 0.0
    weighted = float(sum(f * s for f, s in zip(per_class, support)) / total)
    return macro, weighted


def f1_report(
    preds: Sequence[Sequence[int]],
    golds: Sequence[Sequence[int]],
    task: TaskMeta,
    convention: str = MAX_OF_BOTH,
) -> F1Report:
    """Per-class, macro, weighted, and micro F1 under a convention."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    counts = confusion_counts(preds, golds, task.n_labels)
    support = counts.support
    predicted = counts.predicted

    f_zd0 = [_prf1(t, f, n, 0.0) for t, f, n in zip(counts.tp, counts.fp, counts.fn)]
    f_zd1 = [_prf1(t, f, n, 1.0) for t, f, n in zip(counts.tp, counts.fp, counts.fn)]

    if convention == ZD0:
        macro, weighted = _aggregate(f_zd0, support)
        return F1Report(tuple(f_zd0), macro, weighted, _micro(counts, 0.0), ZD0)
    if convention == ZD1:
        macro, weighted = _aggregate(f_zd1, support)
        return F1Report(tuple(f_zd1), macro, weighted, _micro(counts, 1.0), ZD1)

    # Anti-inflation guard: never-predicted, never-gold classes keep their
    # undefined-to-0 value inside the undefined-to-1 aggregates.
    f_zd1_guarded = [
        f0 if s == 0 and p == 0 else f1
        for f0, f1, s, p in zip(f_zd0, f_zd1, support, predicted)
    ]
    per_class = tuple(max(f0, f1) for f0, f1 in zip(f_zd0, f_zd1_guarded))
    macro0, weighted0 = _aggregate(f_zd0, support)
    macro1, weighted1 = _aggregate(f_zd1_guarded, support)
    return F1Report(
        per_class_f1=per_class,
        macro=max(macro0, macro1),
        weighted=max(weighted0, weighted1),
        micro=max(_micro(counts, 0.0), _micro(counts, 1.0)),
        convention_used=MAX_OF_BOTH,
    )


def report_to_dict(report: F1Report) -> dict:
    return {
        "per_class_f1": list(report.per_class_f1),
        "macro": report.macro,
        "weighted": report.weighted,
        "micro": report.micro,
        "convention_used": report.convention_used,
    }


def format_table(report: F1Report, task: TaskMeta) -> str:
    """Aligned text table of per-class and aggregate F1."""
    width = max(len("weighted"), max(len(n) for n in task.label_names))
    lines = [f"{'class':<{width}}  f1"]
    for name, f1 in zip(task.label_names, report.per_class_f1):
        lines.append(f"{name:<{width}}  {f1:.4f}")
    for name, value in (("macro", report.macro), ("weighted", report.weighted), ("micro", report.micro)):
        lines.append(f"{name:<{width}}  {value:.4f}")
    return "\n".join(lines)
