"""Online crop augmentation for geometric scenes.

A crop is sampled at a random scale and must reach a randomly chosen Jaccard
overlap with at least one word's axis-aligned box; words whose box center
survives the crop are carried over and rescaled to the target canvas.
Horizontal flipping is deliberately absent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    AlignedBox,
    axis_aligned_bbox,
    jaccard,
    min_area_rect,
    orient_width_along,
    to_quad,
)
from .encoder import WordBox
from .synth import Scene

__all__ = ["AugmentConfig", "random_crop"]


@dataclass(frozen=True)
class AugmentConfig:
    """Crop sampling parameters.

    The overlap constraint is drawn per sample from `overlap_choices` (0
    meaning unconstrained); crop side scale comes from `scale_range`.  After
    `max_retries` failed crops the constraint falls back to 0 so augmentation
    always makes progress.
    """

    overlap_choices: tuple[float, ...] = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
    scale_range: tuple[float, float] = (0.1, 1.0)
    target_size: tuple[int, int] = (512, 512)
    flip: bool = False
    max_retries: int = 50

    def __post_init__(self) -> None:
        if self.flip:
            raise ValueError("horizontal flipping is not part of this pipeline")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop scale range must sit inside (0, 1], got {self.scale_range}")


def _transform_word(word: WordBox, x0, y0, sx, sy) -> WordBox:
    """Map a word through crop translation plus anisotropic scaling.

    The corners are transformed and re-fit with a minimum-area rectangle
    (theta is not preserved under anisotropic scaling), then re-oriented so
    the width axis follows the transformed width direction.
    """
    corners = [((x - x0) * sx, (y - y0) * sy) for x, y in to_quad(word.rect).vertices]
    fitted = min_area_rect(corners)
    direction = (
        sx * math.cos(word.rect.theta),
        sy * math.sin(word.rect.theta),
    )
    return WordBox(rect=orient_width_along(fitted, direction), word_id=word.word_id)


def random_crop(scene: Scene, cfg: AugmentConfig, rng: np.random.Generator) -> Scene:
    """Sample one Jaccard-constrained crop of a scene, resized to the target.

    Words are kept when their axis-aligned box center lies inside the crop
    rectangle (bounds inclusive).
    """
    width = float(scene.canvas_w)
    height = float(scene.canvas_h)
    word_boxes = [axis_aligned_bbox(word.rect) for word in scene.words]

    overlap = float(rng.choice(cfg.overlap_choices))
    crop = None
    for attempt in range(cfg.max_retries + 1):
        if attempt == cfg.max_retries:
            overlap = 0.0
        scale = float(rng.uniform(*cfg.scale_range))
        cw = scale * width
        ch = scale * height
        x0 = float(rng.uniform(0.0, width - cw))
        y0 = float(rng.uniform(0.0, height - ch))
        candidate = AlignedBox(x0, y0, x0 + cw, y0 + ch)
        if overlap == 0.0 or any(jaccard(candidate, b) >= overlap for b in word_boxes):
            crop = candidate
            break

    target_w, target_h = cfg.target_size
    sx = target_w / crop.width
    sy = target_h / crop.height
    kept = []
    for word, box in zip(scene.words, word_boxes):
        cx, cy = box.center
        if crop.xmin <= cx <= crop.xmax and crop.ymin <= cy <= crop.ymax:
            kept.append(_transform_word(word, crop.xmin, crop.ymin, sx, sy))
    return Scene(
        canvas_w=int(target_w),
        canvas_h=int(target_h),
        words=tuple(kept),
        seed=scene.seed,
    )
