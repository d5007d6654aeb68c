"""Manipulation relationship graph inference over category-agnostic object proposals."""

from .geometry import Box2D, ObjectProposal, build_pair_graph, cluster_subgraphs, iou, union_box
from .model import ModelConfig, ModelParameters, forward_scene, init_params
from .inference import InferenceConfig, build_mrg, infer_scene, query_task, triplet_nms
from .metrics import MatchMode, evaluate_dataset, recall_at_k
from .datagen import default_taxonomy, gen_dataset, gen_scene, read_scenes, write_scenes
from .training import TrainConfig, train

__version__ = "0.1.0"
