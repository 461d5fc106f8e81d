"""Synthetic scenes and an oracle that turns groundtruth into prediction maps.

Scenes place non-overlapping oriented words by rejection sampling.  The
oracle maps encode labels to hard 0/1 probabilities and copies the offset
targets, then optionally corrupts them: label flips, logit-space score
jitter, and additive offset jitter.  With zero noise the maps are exact, so
decoding them recovers the encodable words.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .decoder import (
    CROSS_SLICE,
    OFFSET_SLICE,
    SEG_SLICE,
    WITHIN_SLICE,
    PredictionMaps,
    layer_channels,
)
from .encoder import WordBox, encode
from .geometry import RotatedRect, rotated_iou
from .topology import LayerPyramid, build_pyramid

__all__ = [
    "BENCHMARK_NOISE",
    "NoiseSpec",
    "Scene",
    "SceneConfig",
    "ZERO_NOISE",
    "as_logit_maps",
    "generate_scene",
    "noisy_benchmark",
    "oracle_predictions",
    "parallel_pair_scene",
]

# Probabilities 0/1 map to logit pairs of this magnitude in the logit view.
LOGIT_MAGNITUDE = 12.0


@dataclass(frozen=True)
class Scene:
    """A canvas with oriented words; the generator seed is kept for records."""

    canvas_w: int
    canvas_h: int
    words: tuple[WordBox, ...]
    seed: int = 0

    def rects(self) -> list[RotatedRect]:
        return [word.rect for word in self.words]


@dataclass(frozen=True)
class SceneConfig:
    """Word sampling ranges for scene generation.

    Defaults target the 512x512 pyramid: heights stay well inside the sizes
    the first three layers can encode, and words are long enough that their
    clipped segments cover them tightly.
    """

    canvas: tuple[int, int] = (512, 512)
    word_count: tuple[int, int] = (1, 8)
    height_range: tuple[float, float] = (10.0, 44.0)
    aspect_range: tuple[float, float] = (3.0, 8.0)
    theta_range: tuple[float, float] = (-1.2, 1.2)
    min_separation: float = 24.0
    margin: float = 8.0
    max_retries: int = 120


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption applied to oracle maps.

    score_flip_rate  probability of flipping a segment score label
    score_jitter     stddev of logit-space noise on all probability channels
    offset_jitter    stddev of additive noise per offset channel
    link_flip_rate   probability of flipping a link score label
    """

    score_flip_rate: float = 0.0
    score_jitter: float = 0.0
    offset_jitter: float = 0.0
    link_flip_rate: float = 0.0

    def __post_init__(self) -> None:
        for name in ("score_flip_rate", "link_flip_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        for name in ("score_jitter", "offset_jitter"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


ZERO_NOISE = NoiseSpec()


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Place non-overlapping words by rejection sampling, deterministically.

    Placement keeps every word's axis-aligned hull inside the canvas, and
    rejects candidates that overlap an existing word (rotated IoU must be
    exactly zero) or sit closer than the separation minimum.  If the retry
    budget runs out the scene simply carries fewer words.
    """
    rng = np.random.default_rng(seed)
    canvas_w, canvas_h = config.canvas
    lo, hi = config.word_count
    count = int(rng.integers(lo, hi + 1))
    words: list[WordBox] = []
    for _ in range(count):
        for _ in range(config.max_retries):
            h = float(rng.uniform(*config.height_range))
            w = h * float(rng.uniform(*config.aspect_range))
            theta = float(rng.uniform(*config.theta_range))
            ex = (w * abs(math.cos(theta)) + h * abs(math.sin(theta))) / 2.0
            ey = (w * abs(math.sin(theta)) + h * abs(math.cos(theta))) / 2.0
            if 2 * (ex + config.margin) >= canvas_w or 2 * (ey + config.margin) >= canvas_h:
                continue
            x = float(rng.uniform(config.margin + ex, canvas_w - config.margin - ex))
            y = float(rng.uniform(config.margin + ey, canvas_h - config.margin - ey))
            candidate = RotatedRect(x, y, w, h, theta)
            ok = all(
                rotated_iou(candidate, other.rect) == 0.0
                and math.hypot(x - other.rect.x, y - other.rect.y) >= config.min_separation
                for other in words
            )
            if ok:
                words.append(WordBox(rect=candidate, word_id=len(words)))
                break
    return Scene(canvas_w=canvas_w, canvas_h=canvas_h, words=tuple(words), seed=seed)


def parallel_pair_scene(
    height: float,
    gap: float,
    theta: float,
    canvas: tuple[int, int] = (512, 512),
    aspect: float = 6.0,
    seed: int = 0,
) -> Scene:
    """Two parallel words of equal size, stacked across their height axis.

    The centers sit `height + gap` apart along the direction perpendicular
    to the text, so `gap` is the clearance between the word edges.  The pair
    is centered on the canvas with a small seeded position jitter.
    """
    rng = np.random.default_rng(seed)
    w = height * aspect
    cx = canvas[0] / 2.0 + float(rng.uniform(-8.0, 8.0))
    cy = canvas[1] / 2.0 + float(rng.uniform(-8.0, 8.0))
    px = -math.sin(theta)
    py = math.cos(theta)
    offset = (height + gap) / 2.0
    first = RotatedRect(cx - px * offset, cy - py * offset, w, height, theta)
    second = RotatedRect(cx + px * offset, cy + py * offset, w, height, theta)
    return Scene(
        canvas_w=canvas[0],
        canvas_h=canvas[1],
        words=(WordBox(first, 0), WordBox(second, 1)),
        seed=seed,
    )


def _noisy_scores(labels, flip_rate, jitter, rng):
    scores = labels.astype(float)
    if flip_rate > 0.0:
        flips = rng.random(scores.shape) < flip_rate
        scores = np.where(flips, 1.0 - scores, scores)
    if jitter > 0.0:
        logits = np.where(scores > 0.5, LOGIT_MAGNITUDE, -LOGIT_MAGNITUDE)
        logits = logits + rng.normal(0.0, jitter, scores.shape)
        scores = 1.0 / (1.0 + np.exp(-logits))
    return scores


def oracle_predictions(
    scene: Scene,
    pyramid: LayerPyramid,
    noise: NoiseSpec = ZERO_NOISE,
    seed: int = 0,
) -> PredictionMaps:
    """Prediction maps derived from the scene's own groundtruth.

    Labels become probabilities (1 -> 1.0, 0 -> 0.0) and offset targets are
    copied verbatim, then the requested noise is applied.  The random stream
    is consumed in a fixed per-layer order, so (noise, seed) fully determine
    the output.
    """
    rng = np.random.default_rng(seed)
    gt = encode(list(scene.words), pyramid)
    seg = []
    offsets = []
    within = []
    cross = []
    for li, spec in enumerate(pyramid.layers):
        seg.append(_noisy_scores(gt.seg_label[li], noise.score_flip_rate, noise.score_jitter, rng))
        layer_offsets = gt.offsets[li].copy()
        if noise.offset_jitter > 0.0:
            layer_offsets = layer_offsets + rng.normal(
                0.0, noise.offset_jitter, layer_offsets.shape
            )
        offsets.append(layer_offsets)
        within.append(
            _noisy_scores(
                gt.within_link_label[li], noise.link_flip_rate, noise.score_jitter, rng
            )
        )
        if spec.index == 1:
            cross.append(None)
        else:
            cross.append(
                _noisy_scores(
                    gt.cross_link_label[li], noise.link_flip_rate, noise.score_jitter, rng
                )
            )
    return PredictionMaps(
        pyramid=pyramid,
        seg_score=seg,
        offsets=offsets,
        within_link_score=within,
        cross_link_score=cross,
    )


# The standard noisy benchmark used by the threshold-robustness checks.
# Scores stay hard 0/1 (flips only), so filtering is insensitive to the
# exact threshold; the link flips add real structure at the 0.5 boundary
# (a one-direction flip makes the symmetrized within-layer score 0.5).
BENCHMARK_NOISE = NoiseSpec(
    score_flip_rate=2e-4,
    score_jitter=0.0,
    offset_jitter=0.05,
    link_flip_rate=0.03,
)


def noisy_benchmark(n_scenes: int = 40, seed: int = 0):
    """The fixed noisy benchmark: oracle maps plus groundtruth boxes.

    Returns (maps_per_scene, gt_rects_per_scene, pyramid) for `n_scenes`
    default-config 512x512 scenes; scene i uses scene seed `seed + i` and
    oracle seed `seed + 9000 + i`.
    """
    pyramid = build_pyramid(512, 512)
    maps_list = []
    gts = []
    for i in range(n_scenes):
        scene = generate_scene(SceneConfig(), seed=seed + i)
        maps_list.append(
            oracle_predictions(scene, pyramid, BENCHMARK_NOISE, seed=seed + 9000 + i)
        )
        gts.append(scene.rects())
    return maps_list, gts, pyramid


def _logit_pair(prob: np.ndarray) -> np.ndarray:
    """Positive-class logits for a probability map, clipped to +-LOGIT_MAGNITUDE."""
    p = np.clip(prob, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        raw = 0.5 * (np.log(p) - np.log1p(-p))
    return np.clip(raw, -LOGIT_MAGNITUDE, LOGIT_MAGNITUDE)


def as_logit_maps(maps: PredictionMaps) -> list[np.ndarray]:
    """Raw-channel logit view of probability maps.

    Each probability p becomes a (-z, +z) logit pair with z = logit(p)/2
    clipped to +-12, so hard 0/1 scores land exactly on the clip magnitude.
    Offsets are copied unchanged.  The result feeds the loss path.
    """
    raw = []
    for li, spec in enumerate(maps.pyramid.layers):
        h = spec.height
        w = spec.width
        arr = np.zeros((h, w, layer_channels(spec.index)))
        z = _logit_pair(maps.seg_score[li])
        arr[:, :, SEG_SLICE.start] = -z
        arr[:, :, SEG_SLICE.start + 1] = z
        arr[:, :, OFFSET_SLICE] = maps.offsets[li]
        zw = _logit_pair(maps.within_link_score[li])
        arr[:, :, WITHIN_SLICE] = np.stack([-zw, zw], axis=-1).reshape(h, w, 16)
        if spec.index > 1:
            zc = _logit_pair(maps.cross_link_score[li])
            arr[:, :, CROSS_SLICE] = np.stack([-zc, zc], axis=-1).reshape(h, w, 8)
        raw.append(arr)
    return raw
