"""Supervised training: pair labels, background sampling, multi-task loss and the Adam loop."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import SceneRecord
from .model import (
    ModelConfig,
    ModelParameters,
    SceneLayout,
    backward_scene,
    forward_scene,
    init_params,
    layout_scene,
)
from .nn import AdamState, Params, adam_step, sigmoid_bce_grad, softmax_ce_grad, LOG_EPS

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 15
    initial_lr: float = 0.001
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 5
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    negative_ratio: float = 3.0
    skip_mirrored_negatives: bool = True
    loss_weights: dict = field(
        default_factory=lambda: {"relationship": 1.0, "attribute": 1.0, "objectness": 1.0}
    )
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.initial_lr <= 0 or self.lr_decay_factor <= 0 or self.lr_decay_every < 1:
            raise ValueError("learning-rate settings must be positive")
        if self.negative_ratio < 0:
            raise ValueError("negative_ratio must be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class LabeledPair:
    subject_index: int
    object_index: int
    relationship_class: int


def label_pairs(scene: SceneRecord, ground_truth=None) -> list[LabeledPair]:
    """Every ordered pair of the scene with its ground-truth class (0 = background)."""
    gts = scene.gt_triplets if ground_truth is None else ground_truth
    valid = {o.index for o in scene.objects}
    classes: dict[tuple[int, int], int] = {}
    for s, r, o in gts:
        if s not in valid or o not in valid:
            raise ValueError(f"ground truth ({s}, {r}, {o}) references an unknown proposal")
        if (s, o) in classes:
            raise ValueError(f"duplicate ground truth for ordered pair ({s}, {o})")
        classes[(s, o)] = r
    idx = sorted(valid)
    return [LabeledPair(i, j, classes.get((i, j), 0)) for i in idx for j in idx if i != j]


def sample_training_pairs(
    labeled: Sequence[LabeledPair],
    negative_ratio: float,
    rng: np.random.Generator,
    skip_mirrored: bool = False,
) -> list[LabeledPair]:
    """All positives plus at most ``negative_ratio`` x positives background pairs.

    With ``skip_mirrored`` the reverse of a positive pair is never used as a
    background example: the relationship head sees the pair symmetrically, so
    that label would directly contradict the positive one.
    """
    pos = [p for p in labeled if p.relationship_class != 0]
    mirrored = {(p.object_index, p.subject_index) for p in pos} if skip_mirrored else set()
    neg = [
        p for p in labeled
        if p.relationship_class == 0 and (p.subject_index, p.object_index) not in mirrored
    ]
    cap = int(np.floor(negative_ratio * len(pos)))
    if len(neg) > cap:
        keep = np.sort(rng.choice(len(neg), size=cap, replace=False))
        neg = [neg[i] for i in keep]
    chosen = set(pos) | set(neg)
    return [p for p in labeled if p in chosen]


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Step schedule; ``epoch`` is 1-based."""
    return config.initial_lr * config.lr_decay_factor ** ((epoch - 1) // config.lr_decay_every)


@dataclass
class LossBreakdown:
    total: float
    relationship: float
    attribute: float
    objectness: float


def scene_loss(
    params: ModelParameters,
    scene: SceneRecord,
    pairs: Sequence[LabeledPair],
    config: TrainConfig,
    layout: SceneLayout | None = None,
) -> tuple[LossBreakdown, Params]:
    """Weighted CE over ``pairs`` + attribute BCE + objectness BCE, with gradients."""
    proposals = scene.proposals()
    mc = config.model
    out = forward_scene(params, proposals, mc.grid, mc.cluster_threshold, layout=layout)
    w = config.loss_weights
    n = len(proposals)

    att_t = np.array([o.attributes for o in scene.objects], dtype=np.float64)
    p_att = out.attributes
    att_loss = -np.mean(att_t * np.log(p_att + LOG_EPS) + (1 - att_t) * np.log(1 - p_att + LOG_EPS))
    d_att = w["attribute"] * sigmoid_bce_grad(p_att, att_t) / att_t.size

    obj_t = np.array([1.0 if o.is_object else 0.0 for o in scene.objects])
    p_obj = out.objectness
    obj_loss = -np.mean(obj_t * np.log(p_obj + LOG_EPS) + (1 - obj_t) * np.log(1 - p_obj + LOG_EPS))
    d_obj = w["objectness"] * sigmoid_bce_grad(p_obj, obj_t) / n

    rel_loss = 0.0
    d_rel = None
    if pairs and out.edges:
        row = {e.key: i for i, e in enumerate(out.edges)}
        rows = np.array([row[(p.subject_index, p.object_index)] for p in pairs])
        targets = np.array([p.relationship_class for p in pairs])
        probs = out.relationships[rows]
        rel_loss = -np.mean(np.log(probs[np.arange(len(rows)), targets] + LOG_EPS))
        d_rel = np.zeros_like(out.relationships)
        np.add.at(d_rel, rows, w["relationship"] * softmax_ce_grad(probs, targets) / len(rows))

    total = w["relationship"] * rel_loss + w["attribute"] * att_loss + w["objectness"] * obj_loss
    if not np.isfinite(total):
        raise TrainingDiverged(f"non-finite loss on scene {scene.scene_id}")
    grads = backward_scene(params, out, d_rel, d_att, d_obj)
    return LossBreakdown(total, rel_loss, att_loss, obj_loss), grads


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    relationship_loss: float
    attribute_loss: float
    objectness_loss: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParameters
    history: list[EpochRecord]
    steps: int


def history_csv(history: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss", "relationship_loss", "attribute_loss", "objectness_loss", "lr"])
    for h in history:
        writer.writerow([h.epoch, repr(h.mean_loss), repr(h.relationship_loss), repr(h.attribute_loss),
                         repr(h.objectness_loss), repr(h.lr)])
    return buf.getvalue()


def train(
    dataset: Sequence[SceneRecord],
    config: TrainConfig,
    init: ModelParameters | None = None,
) -> TrainResult:
    """Per-scene Adam steps over seeded-shuffled epochs. Deterministic given the seed."""
    if not dataset:
        raise ValueError("empty training set")
    init_ss, loop_ss = np.random.SeedSequence(config.seed).spawn(2)
    params = init if init is not None else init_params(config.model, np.random.default_rng(init_ss))
    rng = np.random.default_rng(loop_ss)
    mc = config.model
    prepared = [
        (scene, label_pairs(scene), layout_scene(scene.proposals(), mc.grid, mc.cluster_threshold))
        for scene in dataset
    ]
    arrays = params.to_arrays()
    state = AdamState()
    history: list[EpochRecord] = []
    steps = 0
    for epoch in range(1, config.epochs + 1):
        lr = learning_rate(config, epoch)
        sums = np.zeros(4)
        for pos in rng.permutation(len(prepared)):
            scene, labeled, layout = prepared[pos]
            pairs = sample_training_pairs(labeled, config.negative_ratio, rng, config.skip_mirrored_negatives)
            try:
                loss, grads = scene_loss(params, scene, pairs, config, layout)
                arrays, state = adam_step(arrays, grads, state, lr, config.beta1, config.beta2,
                                          config.adam_eps, config.weight_decay)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}, scene {scene.scene_id}: {exc}") from exc
            params = ModelParameters.from_arrays(arrays)
            sums += (loss.total, loss.relationship, loss.attribute, loss.objectness)
            steps += 1
        means = sums / len(prepared)
        history.append(EpochRecord(epoch, *map(float, means), lr))
        log.info("epoch %d lr %.1e loss %.4f (rel %.4f att %.4f obj %.4f)", epoch, lr, *means)
    return TrainResult(params, history, steps)


def load_config(path: str | Path) -> TrainConfig:
    return TrainConfig.from_json(Path(path).read_text())
