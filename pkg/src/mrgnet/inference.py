"""From per-pair predictions to a manipulation relationship graph."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datagen import RELATION_NAMES
from .geometry import Box2D, ObjectProposal, iou
from .model import ModelParameters, SceneOutputs, forward_scene


@dataclass(frozen=True)
class RelationshipClassTable:
    names: tuple = RELATION_NAMES

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("relationship names must be unique")

    def name(self, class_id: int) -> str:
        return "none" if class_id == 0 else self.names[class_id - 1]

    def id(self, name: str) -> int:
        return 0 if name == "none" else self.names.index(name) + 1


DEFAULT_CLASSES = RelationshipClassTable()


@dataclass(frozen=True)
class RelationshipTriplet:
    subject_index: int
    relationship_class: int
    object_index: int
    score: float
    subject_box: Box2D
    object_box: Box2D

    def __post_init__(self):
        if self.relationship_class < 1:
            raise ValueError("triplets never carry the background class")
        if self.subject_index == self.object_index:
            raise ValueError("subject and object must differ")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.subject_index, self.relationship_class, self.object_index)


def ranking_key(t: RelationshipTriplet):
    return (-t.score, t.subject_index, t.relationship_class, t.object_index)


def form_triplet(
    subject: ObjectProposal,
    obj: ObjectProposal,
    prediction: np.ndarray,
    subject_conf: float,
    object_conf: float,
) -> RelationshipTriplet | None:
    """Top-1 class of ``prediction``; background gives ``None``."""
    cls = int(np.argmax(prediction))  # first maximum, i.e. lowest id on ties
    if cls == 0:
        return None
    score = subject_conf * float(prediction[cls]) * object_conf
    return RelationshipTriplet(subject.index, cls, obj.index, score, subject.box, obj.box)


def triplet_nms(triplets: Sequence[RelationshipTriplet], iou_threshold: float = 0.5) -> list[RelationshipTriplet]:
    """Drop a triplet when a higher-ranked kept one shares its class and both boxes overlap."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {iou_threshold}")
    kept: list[RelationshipTriplet] = []
    for t in sorted(triplets, key=ranking_key):
        suppressed = any(
            k.relationship_class == t.relationship_class
            and iou(k.subject_box, t.subject_box) >= iou_threshold
            and iou(k.object_box, t.object_box) >= iou_threshold
            for k in kept
        )
        if not suppressed:
            kept.append(t)
    return kept


@dataclass
class ManipulationRelationshipGraph:
    nodes: list[ObjectProposal]
    edges: list[RelationshipTriplet] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = sorted(self.nodes, key=lambda p: p.index)
        self.edges = sorted(self.edges, key=ranking_key)
        known = {p.index for p in self.nodes}
        seen = set()
        for e in self.edges:
            if e.subject_index not in known or e.object_index not in known:
                raise ValueError(f"edge {e.key} references an unknown node")
            if e.key in seen:
                raise ValueError(f"duplicate edge {e.key}")
            seen.add(e.key)


def build_mrg(
    proposals: Sequence[ObjectProposal],
    triplets: Sequence[RelationshipTriplet],
    min_score: float = 0.05,
) -> ManipulationRelationshipGraph:
    return ManipulationRelationshipGraph(list(proposals), [t for t in triplets if t.score >= min_score])


@dataclass
class TaskMatch:
    found: bool
    rank: int | None = None
    score: float | None = None


def query_task(mrg: ManipulationRelationshipGraph, task: tuple[int, int, int]) -> TaskMatch:
    """Look up (subject, class, object) among the score-ranked edges; rank is 1-based."""
    for rank, e in enumerate(sorted(mrg.edges, key=ranking_key), start=1):
        if e.key == tuple(task):
            return TaskMatch(True, rank, e.score)
    return TaskMatch(False)


# ---------------------------------------------------------------------------
# scene-level pipeline


@dataclass(frozen=True)
class InferenceConfig:
    grid: int = 5
    cluster_threshold: float = 0.5
    nms_threshold: float = 0.5
    min_score: float = 0.05
    use_heads: bool = True
    attribute_gating: bool = True


def scene_triplets(
    proposals: Sequence[ObjectProposal],
    outputs: SceneOutputs,
    config: InferenceConfig = InferenceConfig(),
) -> list[RelationshipTriplet]:
    """Top-1 triplets for every pair before NMS.

    With heads on, confidences come from the objectness head; with attribute
    gating the subject confidence is further multiplied by the subject's
    attribute probability for the predicted class, which is what separates a
    pair's two directions (the relationship head itself is symmetric).
    """
    pos = {p.index: i for i, p in enumerate(proposals)}
    out = []
    for e, pred in zip(outputs.edges, outputs.relationships):
        si, oi = pos[e.subject_index], pos[e.object_index]
        if config.use_heads:
            s_conf = float(outputs.objectness[si])
            o_conf = float(outputs.objectness[oi])
            cls = int(np.argmax(pred))
            if config.attribute_gating and cls > 0:
                s_conf *= float(outputs.attributes[si, cls - 1])
        else:
            s_conf, o_conf = proposals[si].confidence, proposals[oi].confidence
        t = form_triplet(proposals[si], proposals[oi], pred, s_conf, o_conf)
        if t is not None:
            out.append(t)
    return out


def infer_scene(
    params: ModelParameters,
    proposals: Sequence[ObjectProposal],
    config: InferenceConfig = InferenceConfig(),
) -> tuple[list[RelationshipTriplet], ManipulationRelationshipGraph]:
    """Run the model on one scene; returns ranked post-NMS triplets and the MRG."""
    outputs = forward_scene(params, proposals, config.grid, config.cluster_threshold)
    triplets = triplet_nms(scene_triplets(proposals, outputs, config), config.nms_threshold)
    return triplets, build_mrg(proposals, triplets, config.min_score)


# ---------------------------------------------------------------------------
# export


def export_json(mrg: ManipulationRelationshipGraph, classes: RelationshipClassTable = DEFAULT_CLASSES) -> str:
    doc = {
        "nodes": [
            {"index": p.index, "box": p.box.as_list(), "confidence": p.confidence}
            for p in mrg.nodes
        ],
        "edges": [
            {
                "subject": e.subject_index,
                "relationship": {"id": e.relationship_class, "name": classes.name(e.relationship_class)},
                "object": e.object_index,
                "score": e.score,
            }
            for e in mrg.edges
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_mrg_json(text: str) -> ManipulationRelationshipGraph:
    """Inverse of ``export_json``; node appearance is not serialized and comes back empty."""
    doc = json.loads(text)
    nodes = [
        ObjectProposal(int(n["index"]), Box2D.from_seq(n["box"]), float(n["confidence"]), np.zeros(0))
        for n in doc["nodes"]
    ]
    boxes = {n.index: n.box for n in nodes}
    edges = [
        RelationshipTriplet(int(e["subject"]), int(e["relationship"]["id"]), int(e["object"]),
                            float(e["score"]), boxes[int(e["subject"])], boxes[int(e["object"])])
        for e in doc["edges"]
    ]
    return ManipulationRelationshipGraph(nodes, edges)


def export_dot(mrg: ManipulationRelationshipGraph, classes: RelationshipClassTable = DEFAULT_CLASSES) -> str:
    lines = ["digraph MRG {"]
    lines += [f'  {p.index} [label="{p.index}"];' for p in mrg.nodes]
    lines += [
        f'  {e.subject_index} -> {e.object_index} '
        f'[label="{classes.name(e.relationship_class)} ({e.score:.3f})"];'
        for e in mrg.edges
    ]
    lines.append("}")
    return "\n".join(lines) + "\n"
