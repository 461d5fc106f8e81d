"""Oriented text detection geometry: encode, decode, link, combine, evaluate."""

from .augment import AugmentConfig, random_crop
from .decoder import (
    PredictionMaps,
    SegmentGraph,
    build_graph,
    combine_segments,
    connected_components,
    decode_segment,
    detect,
)
from .encoder import GroundTruthMaps, WordBox, encode, encode_offsets, groundtruth_segment
from .evaluation import EvalReport, evaluate_batch, grid_search_thresholds, match_and_score
from .geometry import (
    AlignedBox,
    Quad,
    RotatedRect,
    axis_aligned_bbox,
    jaccard,
    rotate_about,
    rotated_iou,
    to_quad,
)
from .loss import LossBreakdown, MinedMask, batch_loss, loss_gradient, total_loss
from .synth import NoiseSpec, Scene, SceneConfig, generate_scene, oracle_predictions
from .topology import (
    GridIndex,
    LayerPyramid,
    LayerSpec,
    build_pyramid,
    cross_layer_neighbors,
    default_box,
    nearest_valid_size,
    within_layer_neighbors,
)
from .trainer import ToyPredictor, TrainConfig, train_toy

__version__ = "0.1.0"
