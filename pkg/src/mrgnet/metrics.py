"""Phrase and relationship detection Recall@K."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .geometry import iou, union_box
from .inference import RelationshipTriplet, ranking_key

MIN_OVERLAP = 0.5


class MatchMode(str, Enum):
    PHRASE = "phrase"
    RELATIONSHIP = "relationship"

    @property
    def short(self) -> str:
        return "PR" if self is MatchMode.PHRASE else "RR"


def match_phrase(pred: RelationshipTriplet, gt: RelationshipTriplet) -> bool:
    if pred.relationship_class != gt.relationship_class:
        return False
    pu = union_box(pred.subject_box, pred.object_box)
    gu = union_box(gt.subject_box, gt.object_box)
    return iou(pu, gu) >= MIN_OVERLAP


def match_relationship(pred: RelationshipTriplet, gt: RelationshipTriplet) -> bool:
    return (
        pred.relationship_class == gt.relationship_class
        and iou(pred.subject_box, gt.subject_box) >= MIN_OVERLAP
        and iou(pred.object_box, gt.object_box) >= MIN_OVERLAP
    )


MATCHERS = {MatchMode.PHRASE: match_phrase, MatchMode.RELATIONSHIP: match_relationship}


def recall_at_k(
    predictions: Sequence[RelationshipTriplet],
    ground_truth: Sequence[RelationshipTriplet],
    k: int,
    mode: MatchMode | str,
) -> tuple[int, int]:
    """(matched, gt_count) for the top-``k`` predictions of one scene.

    Predictions are scanned in score order and each claims at most one
    ground truth. When a prediction's candidates are already taken, an
    augmenting path lets earlier claims move to another candidate, so the
    count is the maximum one-to-one matching within the top ``k``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    matcher = MATCHERS[MatchMode(mode)]
    top = sorted(predictions, key=ranking_key)[:k]
    cand = [[g for g, gt in enumerate(ground_truth) if matcher(p, gt)] for p in top]
    owner: dict[int, int] = {}

    def claim(p: int, seen: set) -> bool:
        for g in cand[p]:
            if g in seen:
                continue
            seen.add(g)
            if g not in owner or claim(owner[g], seen):
                owner[g] = p
                return True
        return False

    matched = sum(claim(p, set()) for p in range(len(top)))
    return matched, len(ground_truth)


@dataclass
class MetricsReport:
    k_list: list[int]
    modes: list[MatchMode]
    matched: dict = field(default_factory=dict)  # (mode, k) -> int
    total: dict = field(default_factory=dict)
    per_scene: dict = field(default_factory=dict)  # scene_id -> {(mode, k): (matched, total)}

    def recall(self, mode: MatchMode | str, k: int) -> float:
        key = (MatchMode(mode), k)
        return self.matched[key] / self.total[key] if self.total[key] else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# aggregation: micro (pooled counts over scenes); top-k per scene\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "k", "matched", "total", "recall"])
        for mode in self.modes:
            for k in self.k_list:
                w.writerow([mode.value, k, self.matched[(mode, k)], self.total[(mode, k)],
                            f"{self.recall(mode, k):.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        cols = [f"{m.short}@{k}" for m in self.modes for k in self.k_list]
        vals = [f"{100 * self.recall(m, k):.3f}" for m in self.modes for k in self.k_list]
        widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
        head = " | ".join(c.rjust(w) for c, w in zip(cols, widths))
        row = " | ".join(v.rjust(w) for v, w in zip(vals, widths))
        return f"Recall (%) micro-averaged\n{head}\n{'-' * len(head)}\n{row}\n"


def evaluate_dataset(
    predictions: Mapping[str, Sequence[RelationshipTriplet]],
    ground_truth: Mapping[str, Sequence[RelationshipTriplet]],
    k_list: Sequence[int] = (1, 5),
    modes: Sequence[MatchMode | str] = (MatchMode.PHRASE, MatchMode.RELATIONSHIP),
) -> MetricsReport:
    """Micro-averaged recall per (mode, k); scenes without predictions count as misses."""
    modes = [MatchMode(m) for m in modes]
    report = MetricsReport(list(k_list), modes)
    for mode in modes:
        for k in k_list:
            report.matched[(mode, k)] = 0
            report.total[(mode, k)] = 0
    for scene_id in sorted(ground_truth):
        gts = ground_truth[scene_id]
        preds = predictions.get(scene_id, [])
        row = {}
        for mode in modes:
            for k in k_list:
                m, t = recall_at_k(preds, gts, k, mode)
                row[(mode, k)] = (m, t)
                report.matched[(mode, k)] += m
                report.total[(mode, k)] += t
        report.per_scene[scene_id] = row
    return report
