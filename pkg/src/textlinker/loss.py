"""Training objective: softmax confidence terms, offset regression, mining.

Raw predictions are per-layer (h, w, C) logit arrays in the channel layout
documented in `decoder`.  Segment and link classification use a two-way
softmax loss; offsets use Smooth L1 on positive cells only.  Negatives are
mined online at up to 3x the positives, separately for segments and links,
and the whole batch is pooled before mining.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import (
    CROSS_SLICE,
    OFFSET_SLICE,
    SEG_SLICE,
    WITHIN_SLICE,
    layer_channels,
)
from .encoder import GroundTruthMaps
from .errors import ShapeMismatchError

__all__ = [
    "LossBreakdown",
    "MinedMask",
    "batch_gradient",
    "batch_loss",
    "loss_gradient",
    "mine_batch",
    "mine_hard_negatives",
    "smooth_l1_loss",
    "softmax_conf_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossBreakdown:
    """Unnormalized loss sums plus the normalized weighted total.

    `total` equals seg_conf/N_s + lambda1*loc/N_s + lambda2*link_conf/N_l
    with any term defined as 0 when its normalizer is 0.
    """

    seg_conf: float
    loc: float
    link_conf: float
    total: float
    n_pos_seg: int
    n_pos_link: int


@dataclass(frozen=True)
class MinedMask:
    """Inclusion flags over the pooled segment cells and link slots."""

    seg_include: np.ndarray
    link_include: np.ndarray


def _pair_loss(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample -log softmax(logits)[label] for two-way logits, stable."""
    rows = np.arange(logits.shape[0])
    chosen = logits[rows, labels]
    other = logits[rows, 1 - labels]
    return np.logaddexp(0.0, other - chosen)


def softmax_conf_loss(logits, labels, include=None) -> float:
    """Summed two-class softmax loss over the included samples."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatchError("expected (n, 2) logits and (n,) labels")
    losses = _pair_loss(logits, labels)
    if include is not None:
        losses = losses[np.asarray(include, dtype=bool)]
    return float(losses.sum())


def _smooth_l1(diff: np.ndarray) -> np.ndarray:
    a = np.abs(diff)
    return np.where(a < 1.0, 0.5 * diff * diff, a - 0.5)


def smooth_l1_loss(pred, target, include=None) -> float:
    """Summed per-coordinate Smooth L1 between predictions and targets."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    if include is not None:
        diff = diff[np.asarray(include, dtype=bool)]
    return float(_smooth_l1(diff).sum())


def _mine_group(losses: np.ndarray, labels: np.ndarray, neg_ratio: int) -> np.ndarray:
    """Keep all positives plus the top-loss negatives, at most neg_ratio per positive."""
    include = labels == 1
    n_pos = int(include.sum())
    neg_idx = np.nonzero(labels == 0)[0]
    keep = min(neg_ratio * n_pos, neg_idx.size)
    if keep > 0:
        # Stable sort on descending loss; ties fall back to sample order.
        order = np.argsort(-losses[neg_idx], kind="stable")
        include = include.copy()
        include[neg_idx[order[:keep]]] = True
    return include


def mine_hard_negatives(
    seg_losses,
    seg_labels,
    link_losses,
    link_labels,
    neg_ratio: int = 3,
) -> MinedMask:
    """Online hard negative mining, performed independently per group."""
    return MinedMask(
        seg_include=_mine_group(
            np.asarray(seg_losses, dtype=float), np.asarray(seg_labels, dtype=np.int64), neg_ratio
        ),
        link_include=_mine_group(
            np.asarray(link_losses, dtype=float), np.asarray(link_labels, dtype=np.int64), neg_ratio
        ),
    )


class _Gathered:
    """Flattened batch view of raw predictions and groundtruth targets.

    Sample order is fixed: images, then layers; segment cells row-major;
    link slots per layer list the within block (cell-major, slot minor)
    followed by the cross block.  The scatter step relies on this order.
    """

    def __init__(self, raws, gts):
        if len(raws) != len(gts):
            raise ShapeMismatchError("batch prediction/groundtruth counts differ")
        seg_logits = []
        seg_labels = []
        off_pred = []
        off_target = []
        link_logits = []
        link_labels = []
        for raw, gt in zip(raws, gts):
            pyramid = gt.pyramid
            if len(raw) != len(pyramid.layers):
                raise ShapeMismatchError(
                    f"expected {len(pyramid.layers)} raw layers, got {len(raw)}"
                )
            for li, spec in enumerate(pyramid.layers):
                arr = np.asarray(raw[li], dtype=float)
                want = (spec.height, spec.width, layer_channels(spec.index))
                if arr.shape != want:
                    raise ShapeMismatchError(
                        f"raw layer {spec.index} must have shape {want}, got {arr.shape}"
                    )
                seg_logits.append(arr[:, :, SEG_SLICE].reshape(-1, 2))
                seg_labels.append(gt.seg_label[li].reshape(-1))
                off_pred.append(arr[:, :, OFFSET_SLICE].reshape(-1, 5))
                off_target.append(gt.offsets[li].reshape(-1, 5))
                link_logits.append(arr[:, :, WITHIN_SLICE].reshape(-1, 2))
                link_labels.append(gt.within_link_label[li].reshape(-1))
                if spec.index > 1:
                    link_logits.append(arr[:, :, CROSS_SLICE].reshape(-1, 2))
                    link_labels.append(gt.cross_link_label[li].reshape(-1))
        self.gts = gts
        self.seg_logits = np.concatenate(seg_logits, axis=0)
        self.seg_labels = np.concatenate(seg_labels, axis=0).astype(np.int64)
        self.off_pred = np.concatenate(off_pred, axis=0)
        self.off_target = np.concatenate(off_target, axis=0)
        self.link_logits = np.concatenate(link_logits, axis=0)
        self.link_labels = np.concatenate(link_labels, axis=0).astype(np.int64)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _evaluate(gathered, lambda1, lambda2, neg_ratio, mined):
    seg_losses = _pair_loss(gathered.seg_logits, gathered.seg_labels)
    link_losses = _pair_loss(gathered.link_logits, gathered.link_labels)
    if mined is None:
        mined = MinedMask(
            seg_include=_mine_group(seg_losses, gathered.seg_labels, neg_ratio),
            link_include=_mine_group(link_losses, gathered.link_labels, neg_ratio),
        )
    n_pos_seg = int((gathered.seg_labels == 1).sum())
    n_pos_link = int((gathered.link_labels == 1).sum())
    seg_conf = float(seg_losses[mined.seg_include].sum())
    link_conf = float(link_losses[mined.link_include].sum())
    pos = gathered.seg_labels == 1
    loc = float(_smooth_l1(gathered.off_pred[pos] - gathered.off_target[pos]).sum())
    total = 0.0
    if n_pos_seg > 0:
        total += seg_conf / n_pos_seg + lambda1 * loc / n_pos_seg
    if n_pos_link > 0:
        total += lambda2 * link_conf / n_pos_link
    breakdown = LossBreakdown(
        seg_conf=seg_conf,
        loc=loc,
        link_conf=link_conf,
        total=total,
        n_pos_seg=n_pos_seg,
        n_pos_link=n_pos_link,
    )
    return breakdown, mined


def batch_loss(
    raws,
    gts,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
    neg_ratio: int = 3,
    mined: MinedMask | None = None,
) -> LossBreakdown:
    """Loss over a batch, with mining pooled across all images."""
    breakdown, _ = _evaluate(_Gathered(raws, gts), lambda1, lambda2, neg_ratio, mined)
    return breakdown


def total_loss(
    raw,
    gt: GroundTruthMaps,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
    neg_ratio: int = 3,
    mined: MinedMask | None = None,
) -> LossBreakdown:
    """Loss for a single image (a batch of one)."""
    return batch_loss([raw], [gt], lambda1, lambda2, neg_ratio, mined)


def mine_batch(raws, gts, neg_ratio: int = 3) -> MinedMask:
    """The mining mask a loss evaluation over this batch would use."""
    gathered = _Gathered(raws, gts)
    _, mined = _evaluate(gathered, 1.0, 1.0, neg_ratio, None)
    return mined


def _gradient_arrays(gathered, lambda1, lambda2, neg_ratio, mined):
    breakdown, mined = _evaluate(gathered, lambda1, lambda2, neg_ratio, mined)

    n = gathered.seg_logits.shape[0]
    seg_grad = np.zeros((n, 2))
    if breakdown.n_pos_seg > 0:
        scale = 1.0 / breakdown.n_pos_seg
        m = mined.seg_include
        probs = _softmax(gathered.seg_logits[m])
        probs[np.arange(probs.shape[0]), gathered.seg_labels[m]] -= 1.0
        seg_grad[m] = probs * scale

        pos = gathered.seg_labels == 1
        off_grad = np.zeros_like(gathered.off_pred)
        diff = gathered.off_pred[pos] - gathered.off_target[pos]
        off_grad[pos] = np.clip(diff, -1.0, 1.0) * (lambda1 * scale)
    else:
        off_grad = np.zeros_like(gathered.off_pred)

    link_grad = np.zeros((gathered.link_logits.shape[0], 2))
    if breakdown.n_pos_link > 0:
        scale = lambda2 / breakdown.n_pos_link
        m = mined.link_include
        probs = _softmax(gathered.link_logits[m])
        probs[np.arange(probs.shape[0]), gathered.link_labels[m]] -= 1.0
        link_grad[m] = probs * scale

    return breakdown, mined, seg_grad, off_grad, link_grad


def _scatter(gathered, seg_grad, off_grad, link_grad):
    """Reshape flat sample gradients back into per-layer raw-shaped arrays."""
    grads = []
    seg_at = 0
    link_at = 0
    for gt in gathered.gts:
        image_grads = []
        for li, spec in enumerate(gt.pyramid.layers):
            h, w = spec.height, spec.width
            cells = h * w
            grad = np.zeros((h, w, layer_channels(spec.index)))
            grad[:, :, SEG_SLICE] = seg_grad[seg_at : seg_at + cells].reshape(h, w, 2)
            grad[:, :, OFFSET_SLICE] = off_grad[seg_at : seg_at + cells].reshape(h, w, 5)
            seg_at += cells
            grad[:, :, WITHIN_SLICE] = link_grad[link_at : link_at + cells * 8].reshape(
                h, w, 16
            )
            link_at += cells * 8
            if spec.index > 1:
                grad[:, :, CROSS_SLICE] = link_grad[
                    link_at : link_at + cells * 4
                ].reshape(h, w, 8)
                link_at += cells * 4
            image_grads.append(grad)
        grads.append(image_grads)
    return grads


def batch_gradient(
    raws,
    gts,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
    neg_ratio: int = 3,
    mined: MinedMask | None = None,
):
    """Analytic gradients of the batch loss w.r.t. every raw channel.

    The mining mask is treated as a constant: softmax gradients (p - onehot)
    apply on mined samples, clamp(d, -1, 1) on positive offset rows, zero
    everywhere else.  Returns (LossBreakdown, per-image per-layer arrays).
    """
    gathered = _Gathered(raws, gts)
    breakdown, _, seg_grad, off_grad, link_grad = _gradient_arrays(
        gathered, lambda1, lambda2, neg_ratio, mined
    )
    return breakdown, _scatter(gathered, seg_grad, off_grad, link_grad)


def loss_gradient(
    raw,
    gt: GroundTruthMaps,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
    neg_ratio: int = 3,
    mined: MinedMask | None = None,
):
    """Gradients for a single image; see `batch_gradient`."""
    breakdown, grads = batch_gradient([raw], [gt], lambda1, lambda2, neg_ratio, mined)
    return breakdown, grads[0]
