"""Synthetic kitchen scenes with ground-truth manipulation relationships.

Each archetype has an attribute vector (which relationships it enacts as a
subject) and a set of relationships it can receive as an object. A scene's
ground truth is every compatible ordered pair among its objects; scenes are
grown object by object until that count hits a drawn target in [3, 7].
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Box2D, ObjectProposal, iou

RELATION_NAMES = ("scoop", "pour", "cut", "contain", "wipe", "dump")

TOOL_NAMES = (
    "pan", "spatula", "plate", "knife", "bowl", "cloth", "fork",
    "mug", "spoon", "brush", "cup", "pot", "can",
)

# which relationships each archetype enacts as a subject
DEFAULT_ATTRIBUTES = {
    "pan": ("contain", "pour"),
    "spatula": ("scoop",),
    "plate": ("contain",),
    "knife": ("cut",),
    "bowl": ("pour", "contain"),
    "cloth": ("wipe",),
    "fork": ("cut",),
    "mug": ("pour", "contain"),
    "spoon": ("scoop",),
    "brush": ("wipe",),
    "cup": ("pour", "contain"),
    "pot": ("contain", "pour", "dump"),
    "can": ("dump", "pour"),
}

NON_AFFORDANCE_NAMES = ("apple", "banana", "carrot", "tomato", "bread", "board")

# which relationships each archetype can receive as an object
DEFAULT_RECEIVES = {
    "pan": ("scoop", "dump"),
    "pot": ("scoop", "dump"),
    "bowl": ("scoop", "pour"),
    "mug": ("pour",),
    "cup": ("pour",),
    "plate": ("wipe",),
    "board": ("wipe",),
    "apple": ("cut", "contain"),
    "banana": ("cut", "contain"),
    "carrot": ("cut", "contain"),
    "tomato": ("cut", "contain"),
    "bread": ("cut", "contain"),
}

# P(target relationship count = 3..7); mean 3.84
DEFAULT_COUNT_WEIGHTS = (0.5, 0.3, 0.1, 0.06, 0.04)

CANVAS = (640.0, 480.0)


@dataclass
class Archetype:
    name: str
    attribute_vector: np.ndarray  # (R,) 0/1
    receivable: frozenset  # relationship ids 1..R
    embedding: np.ndarray  # (D_in,) unit norm


@dataclass
class Taxonomy:
    relation_names: tuple
    archetypes: list[Archetype]

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @property
    def d_in(self) -> int:
        return self.archetypes[0].embedding.shape[0]

    def by_name(self, name: str) -> Archetype:
        for a in self.archetypes:
            if a.name == name:
                return a
        raise KeyError(name)

    def compatibility(self) -> dict[int, list[str]]:
        """Relationship id -> archetypes that can receive it."""
        return {
            rid: [a.name for a in self.archetypes if rid in a.receivable]
            for rid in range(1, self.num_relations + 1)
        }

    def relation_between(self, subject: Archetype, obj: Archetype) -> int:
        """Relationship id subject enacts on obj, 0 if none; ties resolve to the highest id."""
        enacts = {i + 1 for i in np.flatnonzero(subject.attribute_vector)}
        common = enacts & obj.receivable
        return max(common) if common else 0

    def to_dict(self) -> dict:
        return {
            "relation_names": list(self.relation_names),
            "archetypes": [
                {
                    "name": a.name,
                    "attributes": [int(v) for v in a.attribute_vector],
                    "receives": sorted(int(r) for r in a.receivable),
                    "embedding": a.embedding.tolist(),
                }
                for a in self.archetypes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Taxonomy":
        names = tuple(doc["relation_names"])
        archs = []
        for a in doc["archetypes"]:
            receives = frozenset(int(r) for r in a["receives"])
            if any(not 1 <= r <= len(names) for r in receives):
                raise ValueError(f"archetype {a['name']}: relationship id out of range")
            archs.append(Archetype(
                a["name"],
                np.asarray(a["attributes"], dtype=np.float64),
                receives,
                np.asarray(a["embedding"], dtype=np.float64),
            ))
        if len({a.name for a in archs}) != len(archs):
            raise ValueError("archetype names must be unique")
        return cls(names, archs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def default_taxonomy(seed: int = 0, d_in: int = 32) -> Taxonomy:
    rng = np.random.default_rng([seed, 7])
    rid = {name: i + 1 for i, name in enumerate(RELATION_NAMES)}
    archetypes = []
    for name in TOOL_NAMES + NON_AFFORDANCE_NAMES:
        attrs = np.zeros(len(RELATION_NAMES))
        for rel in DEFAULT_ATTRIBUTES.get(name, ()):
            attrs[rid[rel] - 1] = 1.0
        emb = rng.normal(size=d_in)
        emb /= np.linalg.norm(emb)
        receives = frozenset(rid[r] for r in DEFAULT_RECEIVES.get(name, ()))
        archetypes.append(Archetype(name, attrs, receives, emb))
    return Taxonomy(RELATION_NAMES, archetypes)


def load_taxonomy(path: str | Path) -> Taxonomy:
    return Taxonomy.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# scene records


@dataclass
class SceneObject:
    index: int
    box: list[float]
    confidence: float
    is_object: bool
    feature: list[float]
    attributes: list[float]

    def to_dict(self) -> dict:
        return {
            "index": int(self.index),
            "box": [float(v) for v in self.box],
            "confidence": float(self.confidence),
            "is_object": bool(self.is_object),
            "feature": [float(v) for v in self.feature],
            "attributes": [float(v) for v in self.attributes],
        }


@dataclass
class SceneRecord:
    scene_id: str
    objects: list[SceneObject]
    gt_triplets: list[tuple[int, int, int]] = field(default_factory=list)  # (subject, rel id, object)

    def proposals(self) -> list[ObjectProposal]:
        return [
            ObjectProposal(o.index, Box2D.from_seq(o.box), o.confidence, np.asarray(o.feature))
            for o in self.objects
        ]

    def object_by_index(self, index: int) -> SceneObject:
        for o in self.objects:
            if o.index == index:
                return o
        raise KeyError(index)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "objects": [o.to_dict() for o in self.objects],
            "gt_triplets": [
                {"subject": int(s), "relationship": int(r), "object": int(o)} for s, r, o in self.gt_triplets
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneRecord":
        objects = [
            SceneObject(
                int(o["index"]), [float(v) for v in o["box"]], float(o["confidence"]),
                bool(o["is_object"]), [float(v) for v in o["feature"]],
                [float(v) for v in o["attributes"]],
            )
            for o in doc["objects"]
        ]
        gts = [(int(t["subject"]), int(t["relationship"]), int(t["object"])) for t in doc["gt_triplets"]]
        scene = cls(str(doc["scene_id"]), objects, gts)
        valid = {o.index for o in objects}
        for s, _, o in gts:
            if s not in valid or o not in valid:
                raise ValueError(f"scene {scene.scene_id}: triplet references unknown index")
        return scene


class SceneFormatError(ValueError):
    pass


def write_scenes(path: str | Path, scenes: Sequence[SceneRecord]) -> None:
    with open(path, "w") as fh:
        for s in scenes:
            fh.write(json.dumps(s.to_dict()) + "\n")


def read_scenes(path: str | Path) -> list[SceneRecord]:
    scenes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scenes.append(SceneRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise SceneFormatError(f"{path}:{lineno}: {exc}") from exc
    return scenes


# ---------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class GenConfig:
    noise_sigma: float = 0.1
    max_objects: int = 8
    max_distractors: int = 2
    min_side: float = 40.0
    max_side: float = 160.0
    max_box_overlap: float = 0.3
    count_weights: tuple = DEFAULT_COUNT_WEIGHTS
    max_retries: int = 200


def _sample_boxes(n: int, rng: np.random.Generator, cfg: GenConfig) -> list[Box2D]:
    w_canvas, h_canvas = CANVAS
    for _ in range(cfg.max_retries):
        boxes: list[Box2D] = []
        for _ in range(n):
            for _ in range(100):
                w, h = rng.uniform(cfg.min_side, cfg.max_side, size=2)
                x1 = rng.uniform(0.0, w_canvas - w)
                y1 = rng.uniform(0.0, h_canvas - h)
                b = Box2D(float(x1), float(y1), float(x1 + w), float(y1 + h))
                if all(iou(b, other) <= cfg.max_box_overlap for other in boxes):
                    boxes.append(b)
                    break
            else:
                break
        if len(boxes) == n:
            return boxes
    raise RuntimeError(f"could not place {n} boxes within overlap bound")


def _grow_archetypes(taxonomy: Taxonomy, target: int, rng: np.random.Generator, cfg: GenConfig):
    archs = taxonomy.archetypes
    for _ in range(cfg.max_retries):
        chosen: list[Archetype] = []
        count = 0
        for _ in range(50):
            cand = archs[rng.integers(len(archs))]
            added = sum(
                (taxonomy.relation_between(cand, a) > 0) + (taxonomy.relation_between(a, cand) > 0)
                for a in chosen
            )
            if count + added <= target and len(chosen) < cfg.max_objects:
                chosen.append(cand)
                count += added
            if count == target:
                return chosen
    raise RuntimeError(f"could not grow a scene with {target} relationships")


def gen_scene(
    taxonomy: Taxonomy,
    rng: np.random.Generator,
    scene_id: str = "scene",
    cfg: GenConfig = GenConfig(),
) -> SceneRecord:
    weights = np.asarray(cfg.count_weights, dtype=np.float64)
    target = 3 + int(rng.choice(len(weights), p=weights / weights.sum()))
    chosen = _grow_archetypes(taxonomy, target, rng, cfg)
    n_distract = int(rng.integers(cfg.max_distractors + 1))
    n = len(chosen) + n_distract
    boxes = _sample_boxes(n, rng, cfg)
    order = rng.permutation(n)  # slot k gets index order[k] + 1
    d_in = taxonomy.d_in
    r = taxonomy.num_relations
    objects: list[SceneObject] = []
    for k in range(n):
        if k < len(chosen):
            a = chosen[k]
            feat = a.embedding + rng.normal(0.0, cfg.noise_sigma, size=d_in)
            conf = rng.uniform(0.7, 1.0)
            attrs = a.attribute_vector.tolist()
            is_obj = True
        else:
            feat = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=d_in)
            conf = rng.uniform(0.3, 0.8)
            attrs = [0.0] * r
            is_obj = False
        objects.append(SceneObject(int(order[k]) + 1, boxes[k].as_list(), float(conf), is_obj,
                                   feat.tolist(), attrs))
    gts = []
    for i, a in enumerate(chosen):
        for j, b in enumerate(chosen):
            if i != j:
                rel = taxonomy.relation_between(a, b)
                if rel:
                    gts.append((objects[i].index, int(rel), objects[j].index))
    objects.sort(key=lambda o: o.index)
    gts.sort()
    return SceneRecord(scene_id, objects, gts)


@dataclass
class Dataset:
    train: list[SceneRecord]
    test: list[SceneRecord]
    manifest: dict


def gen_dataset(
    taxonomy: Taxonomy,
    n_train: int = 200,
    n_test: int = 40,
    seed: int = 0,
    cfg: GenConfig = GenConfig(),
) -> Dataset:
    train_ss, test_ss = np.random.SeedSequence(seed).spawn(2)
    train_rng = np.random.default_rng(train_ss)
    test_rng = np.random.default_rng(test_ss)
    train = [gen_scene(taxonomy, train_rng, f"train-{i:05d}", cfg) for i in range(n_train)]
    test = [gen_scene(taxonomy, test_rng, f"test-{i:05d}", cfg) for i in range(n_test)]
    manifest = {
        "seed": seed,
        "n_train": n_train,
        "n_test": n_test,
        "taxonomy_sha256": taxonomy.digest(),
        "noise_sigma": cfg.noise_sigma,
        "train_relationships": sum(len(s.gt_triplets) for s in train),
        "test_relationships": sum(len(s.gt_triplets) for s in test),
    }
    return Dataset(train, test, manifest)
