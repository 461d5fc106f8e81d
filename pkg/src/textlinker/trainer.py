"""Desk-scale trainable predictor: linear maps over hand-crafted cell features.

Each grid cell sees 23 features: word-mask occupancy over centered windows
of one, two, and four default-box sides, the finest-window occupancy at each
of the cell's 8 neighbors (direction cues, without which link directions and
offset signs are not linearly separable), sharpened copies of the nine
finest-window occupancies (cell labels step at occupancy 0.5, which a linear
head over smooth occupancy can only fit with very large weights), the mean
local orientation as (sin 2t, cos 2t), and a constant bias.  A per-layer
linear map turns them into the raw prediction channels, optimized with
momentum SGD through the full loss/mining path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, random_crop
from .decoder import (
    CROSS_SLICE,
    OFFSET_SLICE,
    SEG_SLICE,
    WITHIN_SLICE,
    PredictionMaps,
    layer_channels,
)
from .encoder import encode
from .errors import TrainingDivergedError
from .geometry import axis_aligned_bbox, contains_points
from .synth import Scene
from .topology import (
    DEFAULT_GAMMA,
    DEFAULT_STRIDES,
    WITHIN_OFFSETS,
    GridIndex,
    LayerPyramid,
    build_pyramid,
)
from . import loss as loss_mod

__all__ = [
    "FEATURE_DIM",
    "SceneRaster",
    "ToyPredictor",
    "TrainConfig",
    "TrainResult",
    "cell_features",
    "layer_features",
    "predict",
    "rasterize",
    "sgd_momentum_step",
    "train_toy",
]

FEATURE_DIM = 23

# Receptive windows for the centered occupancy features, in default-box sides.
_WINDOW_SCALES = (1.0, 2.0, 4.0)

# Feature layout: [0:3] centered occupancy, [3:11] neighbor occupancy in
# WITHIN_OFFSETS order, [11:20] sharpened copies of features [0] and [3:11],
# [20:22] orientation, [22] bias.
_NEIGHBOR_AT = 3
_SHARP_AT = 11
_ORIENT_AT = 20


def _sharpen(occupancy: np.ndarray) -> np.ndarray:
    # Ramp from 0 to 1 across occupancy 0.4..0.6; cell and link labels
    # change state where window occupancy crosses one half.
    return np.clip((occupancy - 0.4) / 0.2, 0.0, 1.0)


class SceneRaster:
    """Pixel-level word occupancy and orientation with cached integral images."""

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.occupancy = np.zeros((height, width))
        self.sin2 = np.zeros((height, width))
        self.cos2 = np.zeros((height, width))
        self._integrals = None

    def integrals(self):
        if self._integrals is None:
            self._integrals = tuple(
                _integral_image(a) for a in (self.occupancy, self.sin2, self.cos2)
            )
        return self._integrals


def _integral_image(arr: np.ndarray) -> np.ndarray:
    out = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1))
    out[1:, 1:] = arr.cumsum(axis=0).cumsum(axis=1)
    return out


def rasterize(scene: Scene) -> SceneRaster:
    """Paint word masks at pixel-center resolution; later words overwrite."""
    raster = SceneRaster(scene.canvas_w, scene.canvas_h)
    for word in scene.words:
        box = axis_aligned_bbox(word.rect)
        x0 = max(0, int(math.floor(box.xmin)))
        y0 = max(0, int(math.floor(box.ymin)))
        x1 = min(scene.canvas_w, int(math.ceil(box.xmax)))
        y1 = min(scene.canvas_h, int(math.ceil(box.ymax)))
        if x1 <= x0 or y1 <= y0:
            continue
        xs = np.arange(x0, x1) + 0.5
        ys = np.arange(y0, y1) + 0.5
        grid_x, grid_y = np.meshgrid(xs, ys)
        inside = contains_points(word.rect, grid_x, grid_y)
        raster.occupancy[y0:y1, x0:x1][inside] = 1.0
        raster.sin2[y0:y1, x0:x1][inside] = math.sin(2.0 * word.rect.theta)
        raster.cos2[y0:y1, x0:x1][inside] = math.cos(2.0 * word.rect.theta)
    return raster


def _window_edges(centers: np.ndarray, size: float, limit: int):
    lo = np.clip(np.floor(centers - size / 2.0 + 0.5), 0, limit).astype(np.int64)
    hi = np.clip(np.floor(centers + size / 2.0 + 0.5), 0, limit).astype(np.int64)
    return lo, np.maximum(hi, lo + 1)


def _box_sums(integral, x0, x1, y0, y1):
    return (
        integral[y1[:, None], x1[None, :]]
        - integral[y0[:, None], x1[None, :]]
        - integral[y1[:, None], x0[None, :]]
        + integral[y0[:, None], x0[None, :]]
    )


def layer_features(raster: SceneRaster, pyramid: LayerPyramid, layer_index: int) -> np.ndarray:
    """Feature map (h, w, 14) for one layer; the last feature is the bias 1.

    Neighbor occupancy is the finest-window occupancy read at each of the 8
    neighboring cells (WITHIN_OFFSETS order); cells beyond the map edge
    contribute 0.
    """
    spec = pyramid.layer(layer_index)
    occ_int, sin_int, cos_int = raster.integrals()
    cx = (np.arange(spec.width) + 0.5) * (pyramid.input_w / spec.width)
    cy = (np.arange(spec.height) + 0.5) * (pyramid.input_h / spec.height)
    feats = np.ones((spec.height, spec.width, FEATURE_DIM))
    finest = None
    for j, scale in enumerate(_WINDOW_SCALES):
        size = scale * spec.box_size
        x0, x1 = _window_edges(cx, size, raster.width)
        y0, y1 = _window_edges(cy, size, raster.height)
        area = (y1 - y0)[:, None] * (x1 - x0)[None, :]
        feats[:, :, j] = _box_sums(occ_int, x0, x1, y0, y1) / area
        if j == 0:
            finest = (x0, x1, y0, y1)
    occ_fine = feats[:, :, 0]
    h, w = occ_fine.shape
    for k, (dy, dx) in enumerate(WITHIN_OFFSETS):
        shifted = np.zeros((h, w))
        ys0, ys1 = max(0, -dy), min(h, h - dy)
        xs0, xs1 = max(0, -dx), min(w, w - dx)
        shifted[ys0:ys1, xs0:xs1] = occ_fine[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
        feats[:, :, _NEIGHBOR_AT + k] = shifted
    feats[:, :, _SHARP_AT] = _sharpen(occ_fine)
    feats[:, :, _SHARP_AT + 1 : _SHARP_AT + 9] = _sharpen(
        feats[:, :, _NEIGHBOR_AT : _NEIGHBOR_AT + 8]
    )
    x0, x1, y0, y1 = finest
    count = _box_sums(occ_int, x0, x1, y0, y1)
    safe = np.maximum(count, 1.0)
    feats[:, :, _ORIENT_AT] = np.where(
        count > 0, _box_sums(sin_int, x0, x1, y0, y1) / safe, 0.0
    )
    feats[:, :, _ORIENT_AT + 1] = np.where(
        count > 0, _box_sums(cos_int, x0, x1, y0, y1) / safe, 0.0
    )
    return feats


def cell_features(raster: SceneRaster, pyramid: LayerPyramid, idx: GridIndex) -> np.ndarray:
    """Feature vector of one cell (computed from the full layer map)."""
    return layer_features(raster, pyramid, idx.layer)[idx.y, idx.x].copy()


@dataclass
class ToyPredictor:
    """Per-layer linear maps from cell features to raw prediction channels."""

    weights: list = field(default_factory=list)  # (FEATURE_DIM, C_l) per layer
    biases: list = field(default_factory=list)  # (C_l,) per layer

    @classmethod
    def zeros(cls, pyramid: LayerPyramid) -> "ToyPredictor":
        weights = []
        biases = []
        for spec in pyramid.layers:
            channels = layer_channels(spec.index)
            weights.append(np.zeros((FEATURE_DIM, channels)))
            biases.append(np.zeros(channels))
        return cls(weights=weights, biases=biases)

    def forward(self, features: list[np.ndarray]) -> list[np.ndarray]:
        """Raw channel maps for per-layer feature maps."""
        return [
            feats @ w + b for feats, w, b in zip(features, self.weights, self.biases)
        ]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    @classmethod
    def from_parameters(cls, params: list[np.ndarray]) -> "ToyPredictor":
        return cls(weights=list(params[0::2]), biases=list(params[1::2]))


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the schedule maps start iterations to rates."""

    lr_schedule: tuple[tuple[int, float], ...] = ((0, 0.5), (1200, 0.1))
    momentum: float = 0.9
    batch_size: int = 8
    iterations: int = 500
    seed: int = 0
    input_size: tuple[int, int] = (256, 256)
    strides: tuple[int, ...] = DEFAULT_STRIDES
    gamma: float = DEFAULT_GAMMA
    lambda1: float = 1.0
    lambda2: float = 1.0
    neg_ratio: int = 3
    crop_scale_range: tuple[float, float] = (0.1, 1.0)

    def __post_init__(self) -> None:
        if not self.lr_schedule or any(lr <= 0 for _, lr in self.lr_schedule):
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    def learning_rate(self, iteration: int) -> float:
        rate = self.lr_schedule[0][1]
        for start, lr in self.lr_schedule:
            if iteration >= start:
                rate = lr
        return rate


@dataclass
class TrainResult:
    predictor: ToyPredictor
    losses: list[float]


def sgd_momentum_step(params, grads, velocity, lr: float, momentum: float):
    """One momentum SGD update: v <- momentum*v - lr*g; p <- p + v."""
    new_velocity = [momentum * v - lr * g for v, g in zip(velocity, grads)]
    new_params = [p + v for p, v in zip(params, new_velocity)]
    return new_params, new_velocity


def _scene_features(scene: Scene, pyramid: LayerPyramid) -> list[np.ndarray]:
    raster = rasterize(scene)
    return [layer_features(raster, pyramid, spec.index) for spec in pyramid.layers]


def train_toy(scenes: list[Scene], cfg: TrainConfig) -> TrainResult:
    """Run the augment/encode/forward/loss/SGD loop; reproducible from seed."""
    if not scenes:
        raise ValueError("training needs at least one scene")
    pyramid = build_pyramid(*cfg.input_size, cfg.strides, cfg.gamma)
    aug = AugmentConfig(target_size=cfg.input_size, scale_range=cfg.crop_scale_range)
    rng = np.random.default_rng(cfg.seed)
    predictor = ToyPredictor.zeros(pyramid)
    params = predictor.parameters()
    velocity = [np.zeros_like(p) for p in params]
    losses: list[float] = []
    for iteration in range(cfg.iterations):
        chosen = rng.integers(0, len(scenes), size=cfg.batch_size)
        batch_feats = []
        raws = []
        gts = []
        predictor = ToyPredictor.from_parameters(params)
        for scene_idx in chosen:
            cropped = random_crop(scenes[int(scene_idx)], aug, rng)
            gts.append(encode(list(cropped.words), pyramid))
            feats = _scene_features(cropped, pyramid)
            batch_feats.append(feats)
            raws.append(predictor.forward(feats))
        breakdown, raw_grads = loss_mod.batch_gradient(
            raws, gts, cfg.lambda1, cfg.lambda2, cfg.neg_ratio
        )
        if not math.isfinite(breakdown.total):
            raise TrainingDivergedError(f"loss became non-finite at iteration {iteration}")
        losses.append(breakdown.total)
        grads = [np.zeros_like(p) for p in params]
        for feats, image_grads in zip(batch_feats, raw_grads):
            for li in range(len(pyramid.layers)):
                grads[2 * li] += np.tensordot(feats[li], image_grads[li], axes=([0, 1], [0, 1]))
                grads[2 * li + 1] += image_grads[li].sum(axis=(0, 1))
        params, velocity = sgd_momentum_step(
            params, grads, velocity, cfg.learning_rate(iteration), cfg.momentum
        )
    return TrainResult(predictor=ToyPredictor.from_parameters(params), losses=losses)


def _softmax_pair(raw: np.ndarray, pair: slice) -> np.ndarray:
    neg = raw[:, :, pair.start]
    pos = raw[:, :, pair.start + 1]
    m = np.maximum(neg, pos)
    e_neg = np.exp(neg - m)
    e_pos = np.exp(pos - m)
    return e_pos / (e_neg + e_pos)


def predict(predictor: ToyPredictor, scene: Scene, pyramid: LayerPyramid) -> PredictionMaps:
    """Run the predictor on a scene and softmax-normalize the score pairs."""
    feats = _scene_features(scene, pyramid)
    raws = predictor.forward(feats)
    seg = []
    offsets = []
    within = []
    cross = []
    for spec, raw in zip(pyramid.layers, raws):
        h, w = spec.height, spec.width
        seg.append(_softmax_pair(raw, SEG_SLICE))
        offsets.append(raw[:, :, OFFSET_SLICE].copy())
        pairs = raw[:, :, WITHIN_SLICE].reshape(h, w, 8, 2)
        within.append(_pair_probabilities(pairs))
        if spec.index == 1:
            cross.append(None)
        else:
            pairs = raw[:, :, CROSS_SLICE].reshape(h, w, 4, 2)
            cross.append(_pair_probabilities(pairs))
    return PredictionMaps(
        pyramid=pyramid,
        seg_score=seg,
        offsets=offsets,
        within_link_score=within,
        cross_link_score=cross,
    )


def _pair_probabilities(pairs: np.ndarray) -> np.ndarray:
    m = pairs.max(axis=-1, keepdims=True)
    e = np.exp(pairs - m)
    return e[..., 1] / e.sum(axis=-1)
