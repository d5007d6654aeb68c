"""Generate a small synthetic dataset, train briefly, and read off one scene's relationship graph.

A full-size run takes about 20 seconds; this one uses a smaller dataset
and fewer epochs and takes about ten.  Run with:  python3 demos/02_train_and_query.py
"""

import numpy as np

from mrgnet.datagen import default_taxonomy, gen_dataset
from mrgnet.inference import DEFAULT_CLASSES, InferenceConfig, export_dot, infer_scene, query_task
from mrgnet.model import ModelConfig
from mrgnet.training import TrainConfig, train

taxonomy = default_taxonomy(seed=1, d_in=32)
data = gen_dataset(taxonomy, n_train=120, n_test=5, seed=1)

config = TrainConfig(epochs=10, model=ModelConfig(d_in=32, grid=5), seed=1)
result = train(data.train, config)
for h in result.history:
    print(f"epoch {h.epoch:2d}  lr {h.lr:.0e}  mean loss {h.mean_loss:.3f}")

scene = data.test[0]
triplets, graph = infer_scene(result.params, scene.proposals(), InferenceConfig(grid=5))

print(f"\nscene {scene.scene_id}: {len(graph.nodes)} objects, {len(graph.edges)} edges kept")
print("ground truth:")
for s, r, o in scene.gt_triplets:
    print(f"  ({s}, {DEFAULT_CLASSES.name(r)}, {o})")
print("top predictions:")
for t in triplets[:6]:
    print(f"  ({t.subject_index}, {DEFAULT_CLASSES.name(t.relationship_class)}, {t.object_index})  {t.score:.3f}")

# Pick a ground-truth triplet as the task and see where the graph ranks it.
rng = np.random.default_rng(0)
task = scene.gt_triplets[int(rng.integers(len(scene.gt_triplets)))]
match = query_task(graph, task)
where = f"rank {match.rank}, score {match.score:.3f}" if match.found else "not in the graph"
print(f"\ntask ({task[0]}, {DEFAULT_CLASSES.name(task[1])}, {task[2]}): {where}")

print("\nGraphviz source:")
print(export_dot(graph))
