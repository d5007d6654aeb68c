"""Shared builders for random small scenes and parameter sets."""

from __future__ import annotations

import numpy as np

from mrgnet.datagen import SceneObject, SceneRecord
from mrgnet.geometry import Box2D, ObjectProposal
from mrgnet.inference import RelationshipTriplet
from mrgnet.model import ModelConfig, init_params
from mrgnet.training import TrainConfig, label_pairs, scene_loss

SMALL = ModelConfig(d_in=16, d=8, hidden=8, grid=3, num_relations=6)


def random_box(rng: np.random.Generator, canvas=(100.0, 100.0), min_side=5.0, max_side=60.0) -> Box2D:
    w, h = rng.uniform(min_side, max_side, size=2)
    x1 = rng.uniform(0, canvas[0] - w)
    y1 = rng.uniform(0, canvas[1] - h)
    return Box2D(float(x1), float(y1), float(x1 + w), float(y1 + h))


def random_proposals(rng: np.random.Generator, n: int, d_in: int) -> list[ObjectProposal]:
    idx = rng.permutation(np.arange(1, 3 * n + 1))[:n]
    return [
        ObjectProposal(int(i), random_box(rng), float(rng.uniform(0.05, 1.0)), rng.normal(size=d_in))
        for i in idx
    ]


def random_scene(rng: np.random.Generator, n: int, d_in: int, r: int = 6, scene_id="s") -> SceneRecord:
    props = random_proposals(rng, n, d_in)
    objects = [
        SceneObject(p.index, p.box.as_list(), p.confidence, bool(rng.random() < 0.8),
                    p.appearance.tolist(), rng.integers(0, 2, size=r).astype(float).tolist())
        for p in props
    ]
    idx = [p.index for p in props]
    gts = []
    for s in idx:
        for o in idx:
            if s != o and rng.random() < 0.4:
                gts.append((s, int(rng.integers(1, r + 1)), o))
    return SceneRecord(scene_id, objects, gts)


def random_small_params(rng: np.random.Generator, config: ModelConfig = SMALL):
    """Random parameters with nonzero biases and alpha so every path carries gradient."""
    params = init_params(config, rng)
    arrays = params.to_arrays()
    for k, v in arrays.items():
        if k.endswith("bias"):
            arrays[k] = rng.normal(scale=0.1, size=v.shape)
        elif k.endswith("weight"):
            arrays[k] = rng.normal(scale=1.0 / np.sqrt(v.shape[1]), size=v.shape)
    arrays["context.alpha"] = np.array(rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0]))
    return type(params).from_arrays(arrays)


def loss_closure(scene: SceneRecord, config: ModelConfig = SMALL):
    """``arrays -> (loss, grads)`` over all labeled pairs of ``scene``."""
    from mrgnet.model import ModelParameters

    tc = TrainConfig(model=config)
    pairs = label_pairs(scene)

    def f(arrays):
        loss, grads = scene_loss(ModelParameters.from_arrays(arrays), scene, pairs, tc)
        return loss.total, grads

    return f


def triplet(s, c, o, score, sb, ob) -> RelationshipTriplet:
    return RelationshipTriplet(s, c, o, float(score), sb, ob)


# ---------------------------------------------------------------------------
# independent oracles


def cluster_predicate_violations(edges, proposals, regions, threshold):
    """Re-derive the greedy assignment predicate pair by pair; returns a list of violations.

    The processing order is recomputed from scratch. For each pair, the
    regions that existed when it was visited are those seeded by earlier
    pairs; the pair must seed iff none of them reaches ``threshold``, and
    otherwise must sit in the one with the largest IoU.
    """
    from mrgnet.geometry import iou, union_box

    by_index = {p.index: p for p in proposals}
    ub = {e.key: union_box(by_index[e.subject_index].box, by_index[e.object_index].box) for e in edges}
    order = sorted(ub, key=lambda k: (-by_index[k[0]].confidence * by_index[k[1]].confidence, k))
    rank = {k: i for i, k in enumerate(order)}
    problems = []
    seen = [k for r in regions for k in r.member_pairs]
    if sorted(seen) != sorted(ub) or len(seen) != len(set(seen)):
        problems.append("member pairs do not partition the edge set")
        return problems
    seeds = {}
    for rid, r in enumerate(regions):
        first = min(r.member_pairs, key=rank.get)
        seeds[rid] = first
        if r.region_box != ub[first]:
            problems.append(f"region {rid} box is not its seeding pair's union box")
    home = {k: rid for rid, r in enumerate(regions) for k in r.member_pairs}
    for k in order:
        earlier = [rid for rid, s in seeds.items() if rank[s] < rank[k]]
        scores = {rid: iou(ub[k], regions[rid].region_box) for rid in earlier}
        ok = {rid: v for rid, v in scores.items() if v >= threshold}
        if seeds[home[k]] == k:
            if ok:
                problems.append(f"pair {k} seeded a region but could join {sorted(ok)}")
        else:
            if home[k] not in ok or scores[home[k]] < max(ok.values()):
                problems.append(f"pair {k} is not in its best qualifying region")
    return problems


def nms_oracle_violations(inputs, kept, threshold):
    """Check greedy triplet NMS by its defining pairwise properties.

    Every kept triplet is unsuppressed by the higher-ranked kept ones, every
    dropped triplet is suppressed by at least one higher-ranked kept one, and
    output order is the ranking order. Together these pin down the greedy
    result uniquely.
    """
    from mrgnet.geometry import iou

    def rank(t):
        return (-t.score, t.subject_index, t.relationship_class, t.object_index)

    def suppresses(a, b):
        return (a.relationship_class == b.relationship_class
                and iou(a.subject_box, b.subject_box) >= threshold
                and iou(a.object_box, b.object_box) >= threshold)

    problems = []
    ids = {id(t) for t in inputs}
    if any(id(t) not in ids for t in kept):
        problems.append("output contains a triplet not in the input")
    if [rank(t) for t in kept] != sorted(rank(t) for t in kept):
        problems.append("output not in ranking order")
    kept_ids = {id(t) for t in kept}
    for t in inputs:
        above = [k for k in kept if rank(k) < rank(t)]
        hit = any(suppresses(k, t) for k in above)
        if id(t) in kept_ids and hit:
            problems.append(f"kept triplet {t.key} is suppressed by a higher-ranked kept one")
        if id(t) not in kept_ids and not hit:
            problems.append(f"dropped triplet {t.key} has no suppressor")
    return problems


def brute_force_matches(predictions, ground_truth, k, matcher) -> int:
    """Largest one-to-one matching between the top-k predictions and GT, by enumeration."""
    import itertools

    top = sorted(predictions, key=lambda t: (-t.score, t.subject_index, t.relationship_class, t.object_index))[:k]
    best = 0
    slots = list(range(len(ground_truth))) + [None] * len(top)
    for assign in itertools.permutations(slots, len(top)):
        count = sum(g is not None and matcher(p, ground_truth[g]) for p, g in zip(top, assign))
        best = max(best, count)
    return best


def random_triplet_scene(rng: np.random.Generator, n_pred: int, n_gt: int, classes: int = 3):
    """GT triplets plus predictions that are jittered GT copies or random boxes."""
    gts = []
    for g in range(n_gt):
        gts.append(RelationshipTriplet(2 * g + 1, int(rng.integers(1, classes + 1)), 2 * g + 2, 1.0,
                                       random_box(rng), random_box(rng)))
    preds = []
    for p in range(n_pred):
        if gts and rng.random() < 0.7:
            src = gts[int(rng.integers(len(gts)))]
            sb, ob = jitter(src.subject_box, rng), jitter(src.object_box, rng)
            cls = src.relationship_class if rng.random() < 0.8 else int(rng.integers(1, classes + 1))
        else:
            sb, ob, cls = random_box(rng), random_box(rng), int(rng.integers(1, classes + 1))
        score = float(np.round(rng.uniform(0, 1), 1))  # coarse scores so ties occur
        preds.append(RelationshipTriplet(100 + 2 * p, cls, 101 + 2 * p, score, sb, ob))
    return preds, gts


def jitter(box: Box2D, rng: np.random.Generator, scale: float = 0.25) -> Box2D:
    w, h = box.x2 - box.x1, box.y2 - box.y1
    d = rng.normal(0, scale, size=4) * np.array([w, h, w, h])
    x1, y1, x2, y2 = np.array(box.as_list()) + d
    return Box2D(float(min(x1, x2 - 1)), float(min(y1, y2 - 1)), float(max(x2, x1 + 1)), float(max(y2, y1 + 1)))
