"""Dataset-level helpers shared by the CLI, the demos and the acceptance suite."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .datagen import SceneRecord
from .geometry import Box2D
from .inference import (
    InferenceConfig,
    ManipulationRelationshipGraph,
    RelationshipTriplet,
    infer_scene,
    query_task,
)
from .metrics import MatchMode, MetricsReport, evaluate_dataset
from .model import ModelParameters

THREADS_ENV = "MRGNET_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    return max(1, int(raw)) if raw else (os.cpu_count() or 1)


def ground_truth_triplets(scene: SceneRecord) -> list[RelationshipTriplet]:
    out = []
    for s, r, o in scene.gt_triplets:
        sb = Box2D.from_seq(scene.object_by_index(s).box)
        ob = Box2D.from_seq(scene.object_by_index(o).box)
        out.append(RelationshipTriplet(s, r, o, 1.0, sb, ob))
    return out


def predict_scenes(
    params: ModelParameters,
    scenes: Sequence[SceneRecord],
    config: InferenceConfig = InferenceConfig(),
    threads: int | None = None,
) -> dict[str, tuple[list[RelationshipTriplet], ManipulationRelationshipGraph]]:
    """Scene id -> (ranked triplets, MRG). Scenes run concurrently; results are keyed, so order is irrelevant."""
    threads = threads or thread_count()

    def run(scene):
        return scene.scene_id, infer_scene(params, scene.proposals(), config)

    if threads == 1:
        return dict(map(run, scenes))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return dict(pool.map(run, scenes))


def evaluate_model(
    params: ModelParameters,
    scenes: Sequence[SceneRecord],
    k_list: Sequence[int] = (1, 5),
    modes: Sequence[MatchMode | str] = (MatchMode.PHRASE, MatchMode.RELATIONSHIP),
    config: InferenceConfig = InferenceConfig(),
    threads: int | None = None,
) -> tuple[MetricsReport, dict]:
    results = predict_scenes(params, scenes, config, threads)
    preds = {sid: trip for sid, (trip, _) in results.items()}
    gts = {s.scene_id: ground_truth_triplets(s) for s in scenes}
    return evaluate_dataset(preds, gts, k_list, modes), results


def task_recognition_rate(
    graphs: dict[str, ManipulationRelationshipGraph],
    scenes: Sequence[SceneRecord],
    rng: np.random.Generator,
    max_rank: int = 3,
) -> float:
    """Fraction of scenes whose uniformly drawn GT triplet is an MRG edge within ``max_rank``."""
    hits = 0
    counted = 0
    for scene in scenes:
        if not scene.gt_triplets:
            continue
        task = scene.gt_triplets[int(rng.integers(len(scene.gt_triplets)))]
        match = query_task(graphs[scene.scene_id], task)
        hits += match.found and match.rank <= max_rank
        counted += 1
    return hits / counted if counted else 0.0
