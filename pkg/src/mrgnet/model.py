"""AR-Net forward pass and its hand-derived backward pass.

The single-item functions (``attention_weights``, ``aggregate_subgraph``,
``predict_relationship`` ...) follow the per-operation contracts directly.
``forward_scene`` / ``backward_scene`` compute the same quantities for a whole
scene at once with batched numpy and are what training uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .geometry import (
    Box2D,
    ObjectProposal,
    PairEdge,
    SubgraphRegion,
    build_pair_graph,
    cluster_subgraphs,
    intersection_area,
    region_of_pairs,
)
from .nn import DenseLayer, Params, dense_forward, relu, sigmoid, softmax


@dataclass(frozen=True)
class ModelConfig:
    d_in: int = 32
    d: int = 128
    hidden: int = 128
    grid: int = 5
    num_relations: int = 6
    cluster_threshold: float = 0.5


@dataclass
class ContextParams:
    key_projection: DenseLayer
    query_projection: DenseLayer
    value_projection: DenseLayer
    alpha: float = 0.0


@dataclass
class ModelParameters:
    object_projection: DenseLayer
    subgraph_init_projection: DenseLayer
    context: ContextParams
    attribute_head: DenseLayer
    objectness_head: DenseLayer
    relationship_hidden: DenseLayer
    relationship_out: DenseLayer

    @property
    def config_dims(self) -> dict[str, int]:
        return {
            "d_in": self.object_projection.in_dim,
            "d": self.object_projection.out_dim,
            "hidden": self.relationship_hidden.out_dim,
            "num_relations": self.attribute_head.out_dim,
        }

    def to_arrays(self) -> Params:
        out: Params = {}
        for f in fields(self):
            part = getattr(self, f.name)
            if isinstance(part, DenseLayer):
                out[f"{f.name}.weight"] = part.weight.copy()
                out[f"{f.name}.bias"] = part.bias.copy()
        for name in ("key_projection", "query_projection", "value_projection"):
            layer = getattr(self.context, name)
            out[f"context.{name}.weight"] = layer.weight.copy()
            out[f"context.{name}.bias"] = layer.bias.copy()
        out["context.alpha"] = np.array(self.context.alpha, dtype=np.result_type(self.context.alpha, np.float64))
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ModelParameters":
        def layer(prefix):
            return DenseLayer(np.array(arrays[f"{prefix}.weight"]), np.array(arrays[f"{prefix}.bias"]))

        ctx = ContextParams(
            layer("context.key_projection"),
            layer("context.query_projection"),
            layer("context.value_projection"),
            np.asarray(arrays["context.alpha"])[()],
        )
        params = cls(
            object_projection=layer("object_projection"),
            subgraph_init_projection=layer("subgraph_init_projection"),
            context=ctx,
            attribute_head=layer("attribute_head"),
            objectness_head=layer("objectness_head"),
            relationship_hidden=layer("relationship_hidden"),
            relationship_out=layer("relationship_out"),
        )
        params.validate()
        return params

    def validate(self) -> None:
        d_in, d = self.object_projection.in_dim, self.object_projection.out_dim
        h, r = self.relationship_hidden.out_dim, self.attribute_head.out_dim
        expected = {
            "subgraph_init_projection": (d, d_in),
            "attribute_head": (r, d),
            "objectness_head": (1, d),
            "relationship_hidden": (h, d),
            "relationship_out": (r + 1, h),
        }
        for name, shape in expected.items():
            got = getattr(self, name).weight.shape
            if got != shape:
                raise ValueError(f"{name}: expected weight shape {shape}, got {got}")
        for name in ("key_projection", "query_projection", "value_projection"):
            got = getattr(self.context, name).weight.shape
            if got != (d, d):
                raise ValueError(f"context.{name}: expected {(d, d)}, got {got}")


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParameters:
    d_in, d, h, r = config.d_in, config.d, config.hidden, config.num_relations
    ctx = ContextParams(
        DenseLayer.init(d, d, rng, gain=1.0),
        DenseLayer.init(d, d, rng, gain=1.0),
        DenseLayer.init(d, d, rng, gain=1.0),
        alpha=0.0,
    )
    return ModelParameters(
        object_projection=DenseLayer.init(d, d_in, rng),
        # the aggregated map sums grid**2 cells; shrink so it starts on the scale of one object
        subgraph_init_projection=DenseLayer.init(d, d_in, rng, gain=2.0 / config.grid**4),
        context=ctx,
        attribute_head=DenseLayer.init(r, d, rng, gain=1.0),
        objectness_head=DenseLayer.init(1, d, rng, gain=1.0),
        relationship_hidden=DenseLayer.init(h, d, rng),
        relationship_out=DenseLayer.init(r + 1, h, rng, gain=1.0),
    )


# ---------------------------------------------------------------------------
# single-item operations


def project_objects(params: ModelParameters, proposals: Sequence[ObjectProposal]) -> list[np.ndarray]:
    return [relu(dense_forward(params.object_projection, p.appearance)) for p in proposals]


def cell_box(region_box: Box2D, grid: int, x: int, y: int) -> Box2D:
    """Rectangle of grid cell (x = column, y = row) inside ``region_box``."""
    w = (region_box.x2 - region_box.x1) / grid
    h = (region_box.y2 - region_box.y1) / grid
    x1 = region_box.x1 + x * w
    y1 = region_box.y1 + y * h
    x2 = region_box.x2 if x == grid - 1 else region_box.x1 + (x + 1) * w
    y2 = region_box.y2 if y == grid - 1 else region_box.y1 + (y + 1) * h
    return Box2D(x1, y1, x2, y2)


def rasterize_subgraph(
    params: ModelParameters,
    region: SubgraphRegion,
    proposals: Sequence[ObjectProposal],
    grid: int,
) -> np.ndarray:
    """(grid, grid, D) map; cell [y, x] is the mean initial feature of objects overlapping it."""
    d = params.subgraph_init_projection.out_dim
    feats = [relu(dense_forward(params.subgraph_init_projection, p.appearance)) for p in proposals]
    out = np.zeros((grid, grid, d))
    for y in range(grid):
        for x in range(grid):
            cb = cell_box(region.region_box, grid, x, y)
            hits = [f for p, f in zip(proposals, feats) if intersection_area(p.box, cb) > 0]
            if hits:
                out[y, x] = np.mean(hits, axis=0)
    return out


def contained_objects(region_box: Box2D, proposals: Sequence[ObjectProposal]) -> list[int]:
    """Positions of proposals whose box overlaps the region with positive area."""
    return [i for i, p in enumerate(proposals) if intersection_area(p.box, region_box) > 0]


def attention_weights(
    context: ContextParams,
    object_features: Sequence[np.ndarray],
    feature_map: np.ndarray,
    cell: tuple[int, int],
) -> np.ndarray:
    x, y = cell
    q = dense_forward(context.query_projection, feature_map[y, x])
    keys = dense_forward(context.key_projection, np.stack(object_features))
    return softmax(keys @ q)


def weighted_object_features(
    context: ContextParams,
    object_features: Sequence[np.ndarray],
    feature_map: np.ndarray,
    cell: tuple[int, int],
) -> np.ndarray:
    w = attention_weights(context, object_features, feature_map, cell)
    values = dense_forward(context.value_projection, np.stack(object_features))
    return w @ values


def aggregate_subgraph(
    context: ContextParams,
    object_features: Sequence[np.ndarray],
    feature_map: np.ndarray,
) -> np.ndarray:
    """Sum over all cells of ``S(x, y) + alpha * O_hat(x, y)``."""
    g_rows, g_cols, _ = feature_map.shape
    per_cell = np.stack([
        feature_map[y, x] + context.alpha * weighted_object_features(context, object_features, feature_map, (x, y))
        for y in range(g_rows)
        for x in range(g_cols)
    ])
    return per_cell.sum(axis=0)


def predict_attributes(params: ModelParameters, object_feature: np.ndarray) -> np.ndarray:
    return sigmoid(dense_forward(params.attribute_head, object_feature))


def predict_objectness(params: ModelParameters, object_feature: np.ndarray) -> float:
    return float(sigmoid(dense_forward(params.objectness_head, object_feature))[0])


def predict_relationship(
    params: ModelParameters,
    subject: np.ndarray,
    aggregated: np.ndarray,
    obj: np.ndarray,
) -> np.ndarray:
    """Distribution over background + R relationship classes for one pair."""
    if not (subject.shape == aggregated.shape == obj.shape):
        raise ValueError(f"dimension mismatch: {subject.shape}, {aggregated.shape}, {obj.shape}")
    # pair the two objects first: IEEE addition commutes, so swapping them is bit-exact
    h = relu((subject + obj) + aggregated)
    z = relu(dense_forward(params.relationship_hidden, h))
    return softmax(dense_forward(params.relationship_out, z))


# ---------------------------------------------------------------------------
# batched scene computation


@dataclass
class SceneLayout:
    """Parameter-independent structure of a scene: pairs, regions and cell membership."""

    indices: list[int]
    edges: list[PairEdge]
    regions: list[SubgraphRegion]
    pair_subject: np.ndarray  # positions into proposals
    pair_object: np.ndarray
    pair_region: np.ndarray
    cell_weights: np.ndarray  # (regions, G*G, N), rows average overlapping objects
    contained: np.ndarray  # (regions, N) bool


def layout_scene(proposals: Sequence[ObjectProposal], grid: int, threshold: float = 0.5) -> SceneLayout:
    n = len(proposals)
    pos = {p.index: i for i, p in enumerate(proposals)}
    edges = build_pair_graph(proposals)
    regions = cluster_subgraphs(edges, proposals, threshold) if edges else []
    rmap = region_of_pairs(regions)
    cells = np.zeros((len(regions), grid * grid, n))
    contained = np.zeros((len(regions), n), dtype=bool)
    for r, region in enumerate(regions):
        contained[r, contained_objects(region.region_box, proposals)] = True
        for y in range(grid):
            for x in range(grid):
                cb = cell_box(region.region_box, grid, x, y)
                hits = [i for i, p in enumerate(proposals) if intersection_area(p.box, cb) > 0]
                if hits:
                    cells[r, y * grid + x, hits] = 1.0 / len(hits)
    return SceneLayout(
        indices=[p.index for p in proposals],
        edges=edges,
        regions=regions,
        pair_subject=np.array([pos[e.subject_index] for e in edges], dtype=int),
        pair_object=np.array([pos[e.object_index] for e in edges], dtype=int),
        pair_region=np.array([rmap[e.key] for e in edges], dtype=int),
        cell_weights=cells,
        contained=contained,
    )


@dataclass
class SceneOutputs:
    objectness: np.ndarray  # (N,)
    attributes: np.ndarray  # (N, R)
    relationships: np.ndarray  # (pairs, R + 1)
    edges: list[PairEdge]
    cache: dict = field(default_factory=dict, repr=False)


def forward_scene(
    params: ModelParameters,
    proposals: Sequence[ObjectProposal],
    grid: int = 5,
    threshold: float = 0.5,
    layout: SceneLayout | None = None,
) -> SceneOutputs:
    n = len(proposals)
    r_cls = params.attribute_head.out_dim
    if n == 0:
        return SceneOutputs(np.zeros(0), np.zeros((0, r_cls)), np.zeros((0, r_cls + 1)), [])
    if layout is None:
        layout = layout_scene(proposals, grid, threshold)
    ctx = params.context
    x_in = np.stack([p.appearance for p in proposals])

    po = dense_forward(params.object_projection, x_in)
    o = relu(po)
    pu = dense_forward(params.subgraph_init_projection, x_in)
    u = relu(pu)

    att_logits = dense_forward(params.attribute_head, o)
    obj_logits = dense_forward(params.objectness_head, o)[:, 0]
    cache = dict(layout=layout, x=x_in, po=po, o=o, pu=pu, u=u,
                 att_logits=att_logits, obj_logits=obj_logits)

    if len(layout.edges) == 0:
        return SceneOutputs(sigmoid(obj_logits), sigmoid(att_logits), np.zeros((0, r_cls + 1)), [], cache)

    s_map = np.einsum("rcn,nd->rcd", layout.cell_weights, u)
    q = dense_forward(ctx.query_projection, s_map)
    k = dense_forward(ctx.key_projection, o)
    v = dense_forward(ctx.value_projection, o)
    logits = np.einsum("rcd,nd->rcn", q, k)
    mask = layout.contained[:, None, :]
    logits = np.where(mask, logits, -np.inf)
    w = softmax(logits, axis=-1)
    o_hat = np.einsum("rcn,nd->rcd", w, v)
    s_hat = (s_map + ctx.alpha * o_hat).sum(axis=1)

    h_pre = (o[layout.pair_subject] + o[layout.pair_object]) + s_hat[layout.pair_region]
    h = relu(h_pre)
    z_pre = dense_forward(params.relationship_hidden, h)
    z = relu(z_pre)
    rel_logits = dense_forward(params.relationship_out, z)
    probs = softmax(rel_logits, axis=-1)
    cache.update(s_map=s_map, q=q, k=k, v=v, w=w, o_hat=o_hat, s_hat=s_hat,
                 h_pre=h_pre, h=h, z_pre=z_pre, z=z)
    return SceneOutputs(sigmoid(obj_logits), sigmoid(att_logits), probs, layout.edges, cache)


def _dense_grads(grads: Params, name: str, d_out: np.ndarray, x: np.ndarray) -> None:
    d_out = d_out.reshape(-1, d_out.shape[-1])
    x = x.reshape(-1, x.shape[-1])
    grads[f"{name}.weight"] += d_out.T @ x
    grads[f"{name}.bias"] += d_out.sum(axis=0)


def backward_scene(
    params: ModelParameters,
    outputs: SceneOutputs,
    d_rel_logits: np.ndarray | None,
    d_att_logits: np.ndarray,
    d_obj_logits: np.ndarray,
) -> Params:
    """Gradients of a scalar loss given its gradients w.r.t. the three heads' logits."""
    c = outputs.cache
    layout: SceneLayout = c["layout"]
    ctx = params.context
    grads = {k: np.zeros_like(v) for k, v in params.to_arrays().items()}
    o = c["o"]
    d_o = np.zeros_like(o)

    _dense_grads(grads, "attribute_head", d_att_logits, o)
    d_o += d_att_logits @ params.attribute_head.weight
    d_obj = d_obj_logits.reshape(-1, 1)
    _dense_grads(grads, "objectness_head", d_obj, o)
    d_o += d_obj @ params.objectness_head.weight

    if d_rel_logits is not None and len(layout.edges):
        _dense_grads(grads, "relationship_out", d_rel_logits, c["z"])
        d_z = d_rel_logits @ params.relationship_out.weight
        d_zpre = d_z * (c["z_pre"] > 0)
        _dense_grads(grads, "relationship_hidden", d_zpre, c["h"])
        d_h = d_zpre @ params.relationship_hidden.weight
        d_hpre = d_h * (c["h_pre"] > 0)
        np.add.at(d_o, layout.pair_subject, d_hpre)
        np.add.at(d_o, layout.pair_object, d_hpre)
        d_shat = np.zeros_like(c["s_hat"])
        np.add.at(d_shat, layout.pair_region, d_hpre)

        # s_hat = sum_cells(s_map + alpha * o_hat)
        d_s = np.broadcast_to(d_shat[:, None, :], c["s_map"].shape).copy()
        d_ohat = ctx.alpha * d_s
        grads["context.alpha"] += np.sum(d_shat * c["o_hat"].sum(axis=1))

        w, v, q, k = c["w"], c["v"], c["q"], c["k"]
        d_w = np.einsum("rcd,nd->rcn", d_ohat, v)
        d_v = np.einsum("rcn,rcd->nd", w, d_ohat)
        d_logit = w * (d_w - np.sum(w * d_w, axis=-1, keepdims=True))
        d_q = np.einsum("rcn,nd->rcd", d_logit, k)
        d_k = np.einsum("rcn,rcd->nd", d_logit, q)

        _dense_grads(grads, "context.query_projection", d_q, c["s_map"])
        d_s += d_q @ ctx.query_projection.weight
        _dense_grads(grads, "context.key_projection", d_k, o)
        d_o += d_k @ ctx.key_projection.weight
        _dense_grads(grads, "context.value_projection", d_v, o)
        d_o += d_v @ ctx.value_projection.weight

        d_u = np.einsum("rcn,rcd->nd", layout.cell_weights, d_s)
        d_pu = d_u * (c["pu"] > 0)
        _dense_grads(grads, "subgraph_init_projection", d_pu, c["x"])

    d_po = d_o * (c["po"] > 0)
    _dense_grads(grads, "object_projection", d_po, c["x"])
    return grads
