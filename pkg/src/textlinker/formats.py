"""File formats: binary tensor maps, text scene files, predictor snapshots.

Tensor-map files ("SLPM") hold one float32 block per layer in the raw
channel layout (score pairs, offsets, link pairs), little-endian, values
ordered y-major then x then channel.  Scene files are line-oriented text and
round-trip losslessly; detections reuse the same record shape.  Predictor
files ("SLTP") store the per-layer linear maps as float64.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .decoder import (
    CROSS_SLICE,
    OFFSET_SLICE,
    SEG_SLICE,
    WITHIN_SLICE,
    PredictionMaps,
    layer_channels,
)
from .encoder import GroundTruthMaps, WordBox
from .errors import DataFormatError, ShapeMismatchError
from .evaluation import EvalReport
from .geometry import RotatedRect
from .synth import Scene
from .topology import NUM_LAYERS, build_pyramid
from .trainer import FEATURE_DIM, ToyPredictor

__all__ = [
    "MAPS_MAGIC",
    "PREDICTOR_MAGIC",
    "groundtruth_to_prediction_maps",
    "load_predictor",
    "read_prediction_maps",
    "read_scene",
    "save_predictor",
    "write_prediction_maps",
    "write_report",
    "write_scene",
]

MAPS_MAGIC = b"SLPM"
PREDICTOR_MAGIC = b"SLTP"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIII6Id")
_LAYER_HEADER = struct.Struct("<IIII")
_PREDICTOR_HEADER = struct.Struct("<4sIII")
_PREDICTOR_LAYER = struct.Struct("<II")


def _compose_raw(maps: PredictionMaps) -> list[np.ndarray]:
    """Stack probability maps into raw-layout arrays with (neg, pos) pairs."""
    raws = []
    for li, spec in enumerate(maps.pyramid.layers):
        h, w = spec.height, spec.width
        arr = np.zeros((h, w, layer_channels(spec.index)), dtype=np.float32)
        seg = maps.seg_score[li]
        arr[:, :, SEG_SLICE.start] = 1.0 - seg
        arr[:, :, SEG_SLICE.start + 1] = seg
        arr[:, :, OFFSET_SLICE] = maps.offsets[li]
        within = maps.within_link_score[li]
        arr[:, :, WITHIN_SLICE] = np.stack([1.0 - within, within], axis=-1).reshape(h, w, 16)
        if spec.index > 1:
            cross = maps.cross_link_score[li]
            arr[:, :, CROSS_SLICE] = np.stack([1.0 - cross, cross], axis=-1).reshape(h, w, 8)
        raws.append(arr)
    return raws


def write_prediction_maps(path, maps: PredictionMaps) -> None:
    """Serialize probability maps (scores stored as softmax-style pairs)."""
    pyramid = maps.pyramid
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            MAPS_MAGIC,
            FORMAT_VERSION,
            pyramid.input_w,
            pyramid.input_h,
            *pyramid.strides,
            pyramid.gamma,
        )
    )
    for spec, raw in zip(pyramid.layers, _compose_raw(maps)):
        buf.write(
            _LAYER_HEADER.pack(spec.index, spec.width, spec.height, raw.shape[2])
        )
        buf.write(raw.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def read_prediction_maps(path) -> PredictionMaps:
    """Parse a tensor-map file back into probability maps."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, input_w, input_h, *rest = _HEADER.unpack_from(data, 0)
    strides = tuple(rest[:6])
    gamma = rest[6]
    if magic != MAPS_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    try:
        pyramid = build_pyramid(input_w, input_h, strides, gamma)
    except ValueError as exc:
        raise DataFormatError(f"{path}: invalid pyramid config: {exc}") from exc
    at = _HEADER.size
    seg, offsets, within, cross = [], [], [], []
    for spec in pyramid.layers:
        if at + _LAYER_HEADER.size > len(data):
            raise DataFormatError(f"{path}: truncated layer header")
        index, width, height, channels = _LAYER_HEADER.unpack_from(data, at)
        at += _LAYER_HEADER.size
        if (index, width, height) != (spec.index, spec.width, spec.height):
            raise DataFormatError(
                f"{path}: layer block {index} ({width}x{height}) does not match "
                f"the pyramid ({spec.index}: {spec.width}x{spec.height})"
            )
        if channels != layer_channels(spec.index):
            raise DataFormatError(
                f"{path}: layer {index} must have {layer_channels(spec.index)} "
                f"channels, got {channels}"
            )
        count = width * height * channels
        nbytes = 4 * count
        if at + nbytes > len(data):
            raise DataFormatError(f"{path}: truncated layer data")
        raw = (
            np.frombuffer(data, dtype="<f4", count=count, offset=at)
            .reshape(height, width, channels)
            .astype(np.float64)
        )
        at += nbytes
        seg.append(raw[:, :, SEG_SLICE.start + 1].copy())
        offsets.append(raw[:, :, OFFSET_SLICE].copy())
        within.append(raw[:, :, WITHIN_SLICE].reshape(height, width, 8, 2)[:, :, :, 1].copy())
        if spec.index == 1:
            cross.append(None)
        else:
            cross.append(
                raw[:, :, CROSS_SLICE].reshape(height, width, 4, 2)[:, :, :, 1].copy()
            )
    if at != len(data):
        raise DataFormatError(f"{path}: {len(data) - at} trailing bytes")
    try:
        return PredictionMaps(
            pyramid=pyramid,
            seg_score=seg,
            offsets=offsets,
            within_link_score=within,
            cross_link_score=cross,
        )
    except (ValueError, ShapeMismatchError) as exc:
        raise DataFormatError(f"{path}: invalid map content: {exc}") from exc


def groundtruth_to_prediction_maps(gt: GroundTruthMaps) -> PredictionMaps:
    """View groundtruth maps as exact predictions (labels become 0/1 scores)."""
    return PredictionMaps(
        pyramid=gt.pyramid,
        seg_score=[m.astype(np.float64) for m in gt.seg_label],
        offsets=[m.copy() for m in gt.offsets],
        within_link_score=[m.astype(np.float64) for m in gt.within_link_label],
        cross_link_score=[
            None if m is None else m.astype(np.float64) for m in gt.cross_link_label
        ],
    )


def write_scene(path, scene: Scene) -> None:
    """Write a scene (or detections, which share the record shape) as text."""
    lines = [
        f"canvas {scene.canvas_w} {scene.canvas_h}",
        f"seed {scene.seed}",
    ]
    for word in scene.words:
        r = word.rect
        lines.append(
            f"word {word.word_id} {r.x!r} {r.y!r} {r.w!r} {r.h!r} {r.theta!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_scene(path) -> Scene:
    """Parse a scene file; raises DataFormatError on any malformed line."""
    canvas = None
    seed = 0
    words = []
    for ln, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "canvas" and len(parts) == 3:
                canvas = (int(parts[1]), int(parts[2]))
            elif parts[0] == "seed" and len(parts) == 2:
                seed = int(parts[1])
            elif parts[0] == "word" and len(parts) == 7:
                words.append(
                    WordBox(
                        rect=RotatedRect(*(float(v) for v in parts[2:7])),
                        word_id=int(parts[1]),
                    )
                )
            else:
                raise ValueError(f"unrecognized record {parts[0]!r}")
        except ValueError as exc:
            raise DataFormatError(f"{path}:{ln}: {exc}") from exc
    if canvas is None:
        raise DataFormatError(f"{path}: missing canvas record")
    return Scene(canvas_w=canvas[0], canvas_h=canvas[1], words=tuple(words), seed=seed)


def detections_to_scene(dets: list[RotatedRect], canvas: tuple[int, int]) -> Scene:
    """Wrap detections in the shared scene record shape with serial ids."""
    return Scene(
        canvas_w=canvas[0],
        canvas_h=canvas[1],
        words=tuple(WordBox(rect=d, word_id=i) for i, d in enumerate(dets)),
        seed=0,
    )


def save_predictor(path, predictor: ToyPredictor) -> None:
    """Write the linear predictor: magic, dims, float64 row-major blocks."""
    buf = io.BytesIO()
    buf.write(
        _PREDICTOR_HEADER.pack(
            PREDICTOR_MAGIC, FORMAT_VERSION, len(predictor.weights), FEATURE_DIM
        )
    )
    for li, (w, b) in enumerate(zip(predictor.weights, predictor.biases), start=1):
        buf.write(_PREDICTOR_LAYER.pack(li, w.shape[1]))
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_predictor(path) -> ToyPredictor:
    data = Path(path).read_bytes()
    if len(data) < _PREDICTOR_HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, n_layers, feature_dim = _PREDICTOR_HEADER.unpack_from(data, 0)
    if magic != PREDICTOR_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if n_layers != NUM_LAYERS or feature_dim != FEATURE_DIM:
        raise DataFormatError(
            f"{path}: expected {NUM_LAYERS} layers of {FEATURE_DIM} features, "
            f"got {n_layers} of {feature_dim}"
        )
    at = _PREDICTOR_HEADER.size
    weights = []
    biases = []
    for li in range(1, n_layers + 1):
        if at + _PREDICTOR_LAYER.size > len(data):
            raise DataFormatError(f"{path}: truncated layer header")
        index, channels = _PREDICTOR_LAYER.unpack_from(data, at)
        at += _PREDICTOR_LAYER.size
        if index != li or channels != layer_channels(li):
            raise DataFormatError(f"{path}: unexpected layer block {index}/{channels}")
        w_count = feature_dim * channels
        need = 8 * (w_count + channels)
        if at + need > len(data):
            raise DataFormatError(f"{path}: truncated layer data")
        weights.append(
            np.frombuffer(data, dtype="<f8", count=w_count, offset=at)
            .reshape(feature_dim, channels)
            .astype(np.float64)
        )
        at += 8 * w_count
        biases.append(
            np.frombuffer(data, dtype="<f8", count=channels, offset=at).astype(np.float64)
        )
        at += 8 * channels
    if at != len(data):
        raise DataFormatError(f"{path}: {len(data) - at} trailing bytes")
    return ToyPredictor(weights=weights, biases=biases)


def format_report(name: str, report: EvalReport) -> str:
    return (
        f"{name} tp {report.tp} fp {report.fp} fn {report.fn} "
        f"precision {report.precision:.6f} recall {report.recall:.6f} "
        f"f_measure {report.f_measure:.6f}"
    )


def write_report(path, per_image: list[tuple[str, EvalReport]], aggregate: EvalReport) -> None:
    """One record per image plus the aggregate, as structured text."""
    lines = [format_report(f"image {name}", report) for name, report in per_image]
    lines.append(format_report("aggregate", aggregate))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
