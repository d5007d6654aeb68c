"""Walk through pair-graph construction and subgraph clustering on a hand-made scene.

Run with:  python3 demos/01_pairs_and_regions.py
"""

import numpy as np

from mrgnet.geometry import Box2D, ObjectProposal, build_pair_graph, cluster_subgraphs, iou, union_box

rng = np.random.default_rng(0)

# A knife beside an apple, and a bowl with a spoon in it further right.
scene = [
    ObjectProposal(1, Box2D(10, 40, 60, 50), 0.95, rng.normal(size=8)),   # knife
    ObjectProposal(2, Box2D(40, 20, 70, 50), 0.90, rng.normal(size=8)),   # apple
    ObjectProposal(3, Box2D(120, 30, 170, 70), 0.85, rng.normal(size=8)),  # bowl
    ObjectProposal(4, Box2D(130, 10, 150, 60), 0.60, rng.normal(size=8)),  # spoon
]

edges = build_pair_graph(scene)
print(f"{len(scene)} objects -> {len(edges)} directed pairs (N * (N - 1))")

by_index = {p.index: p for p in scene}
for e in edges[:4]:
    ub = union_box(by_index[e.subject_index].box, by_index[e.object_index].box)
    print(f"  pair {e.key}: union box {ub.as_list()}")

# Pairs whose union boxes overlap enough share a single context region.
for threshold in (0.3, 0.5, 0.9):
    regions = cluster_subgraphs(edges, scene, threshold)
    print(f"\nthreshold {threshold}: {len(regions)} regions")
    for r in regions:
        print(f"  region {r.region_box.as_list()} holds {r.member_pairs}")

# (1, 2) and (2, 1) share a union box, so they always land together.
a = union_box(scene[0].box, scene[1].box)
b = union_box(scene[0].box, scene[2].box)
print(f"\nIoU between the knife-apple and knife-bowl union boxes: {iou(a, b):.3f}")
