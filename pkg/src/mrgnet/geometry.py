"""Box arithmetic, directed pair graphs and subgraph clustering.

Boxes are corner-format ``(x1, y1, x2, y2)`` in continuous image coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Box2D:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = tuple(float(c) for c in (self.x1, self.y1, self.x2, self.y2))
        for name, c in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, c)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: {coords}")

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "Box2D":
        x1, y1, x2, y2 = seq
        return cls(x1, y1, x2, y2)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def intersection_area(a: Box2D, b: Box2D) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union of two boxes, 0 when they are disjoint."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def union_box(a: Box2D, b: Box2D) -> Box2D:
    """Smallest axis-aligned box enclosing both inputs."""
    return Box2D(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


@dataclass(frozen=True, eq=False)
class ObjectProposal:
    """A category-agnostic detection: identity index, box, confidence and appearance."""

    index: int
    box: Box2D
    confidence: float
    appearance: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")
        app = np.asarray(self.appearance, dtype=np.float64)
        if app.ndim != 1 or not np.all(np.isfinite(app)):
            raise ValueError("appearance must be a finite 1-d vector")
        object.__setattr__(self, "appearance", app)


@dataclass(frozen=True)
class PairEdge:
    subject_index: int
    object_index: int

    def __post_init__(self):
        if self.subject_index == self.object_index:
            raise ValueError("self-pair")

    @property
    def key(self) -> tuple[int, int]:
        return (self.subject_index, self.object_index)


@dataclass
class SubgraphRegion:
    region_box: Box2D
    member_pairs: list[tuple[int, int]] = field(default_factory=list)


def _check_unique(proposals: Sequence[ObjectProposal]) -> None:
    idx = [p.index for p in proposals]
    if len(set(idx)) != len(idx):
        raise ValueError(f"duplicate proposal indices: {idx}")


def build_pair_graph(proposals: Sequence[ObjectProposal]) -> list[PairEdge]:
    """All N(N-1) ordered pairs, ascending by subject then object index."""
    _check_unique(proposals)
    idx = sorted(p.index for p in proposals)
    return [PairEdge(i, j) for i in idx for j in idx if i != j]


def cluster_subgraphs(
    edges: Iterable[PairEdge],
    proposals: Sequence[ObjectProposal],
    threshold: float = 0.5,
) -> list[SubgraphRegion]:
    """Greedy seed-and-absorb clustering of pair union boxes.

    Pairs are visited by descending subject x object confidence (ties by
    index order). A pair joins the existing region whose box it overlaps
    most, provided that IoU reaches ``threshold``; otherwise its union box
    seeds a new region. Region boxes never move once seeded.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    by_index = {p.index: p for p in proposals}
    edges = list(edges)
    order = sorted(
        edges,
        key=lambda e: (
            -by_index[e.subject_index].confidence * by_index[e.object_index].confidence,
            e.subject_index,
            e.object_index,
        ),
    )
    regions: list[SubgraphRegion] = []
    for e in order:
        ub = union_box(by_index[e.subject_index].box, by_index[e.object_index].box)
        best, best_iou = None, -1.0
        for r in regions:
            v = iou(ub, r.region_box)
            if v >= threshold and v > best_iou:
                best, best_iou = r, v
        if best is None:
            regions.append(SubgraphRegion(ub, [e.key]))
        else:
            best.member_pairs.append(e.key)
    return regions


def region_of_pairs(regions: Sequence[SubgraphRegion]) -> dict[tuple[int, int], int]:
    """Map each member pair to the position of its region."""
    out = {}
    for rid, r in enumerate(regions):
        for pair in r.member_pairs:
            out[pair] = rid
    return out
