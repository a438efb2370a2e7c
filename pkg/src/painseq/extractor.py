"""Frozen feature extractor: VGG16 topology with Global Average Pooling.

Forward inference only. Thirteen 3x3 convolutions in five stages; 2x2 max
pooling after the first four stages, Global Average Pooling after the
fifth, then a 512 -> 1024 fully connected layer with ReLU whose output is
the feature vector. Weights are loaded from a PSQW checkpoint and are
immutable afterwards.
"""

import logging

import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .data import FeatureSequence
from .errors import DataError, FormatError, ShapeError

logger = logging.getLogger(__name__)

INPUT_SIZE = 224
FEATURE_DIM = 1024
CHANNEL_MEAN = (0.5, 0.5, 0.5)

# (name, in_channels, out_channels) per conv; "pool" markers between stages.
VGG16_PLAN = [
    ("conv1_1", 3, 64), ("conv1_2", 64, 64), "pool",
    ("conv2_1", 64, 128), ("conv2_2", 128, 128), "pool",
    ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256), "pool",
    ("conv4_1", 256, 512), ("conv4_2", 512, 512), ("conv4_3", 512, 512), "pool",
    ("conv5_1", 512, 512), ("conv5_2", 512, 512), ("conv5_3", 512, 512), "gap",
]
FC_NAME = "fc1024"
FC_IN = 512


def conv_layer_names():
    return [entry[0] for entry in VGG16_PLAN if isinstance(entry, tuple)]


class ExtractorWeights:
    """Validated parameter set for the fixed VGG16-GAP topology."""

    def __init__(self, tensors):
        self.tensors = tensors
        for name, n_in, n_out in (e for e in VGG16_PLAN if isinstance(e, tuple)):
            self._require(f"{name}.weight", (3, 3, n_in, n_out))
            self._require(f"{name}.bias", (n_out,))
        self._require(f"{FC_NAME}.weight", (FC_IN, FEATURE_DIM))
        self._require(f"{FC_NAME}.bias", (FEATURE_DIM,))

    def _require(self, key, shape):
        if key not in self.tensors:
            raise FormatError(f"extractor checkpoint missing layer {key!r}")
        got = self.tensors[key].shape
        if got != shape:
            raise FormatError(f"layer {key!r} has shape {got}, expected {shape}")

    def __getitem__(self, key):
        return self.tensors[key]


def load_extractor_weights(path):
    return ExtractorWeights(read_checkpoint(path))


def random_extractor_checkpoint(path, seed=0, scale=0.05, dtype=np.float32):
    """Write a deterministic randomly-initialized extractor checkpoint.

    The weights carry no pain semantics; they exist so the pipeline can be
    exercised without the original (non-distributable) model.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, n_in, n_out in (e for e in VGG16_PLAN if isinstance(e, tuple)):
        tensors[f"{name}.weight"] = rng.normal(0.0, scale, (3, 3, n_in, n_out)).astype(dtype)
        tensors[f"{name}.bias"] = np.zeros(n_out, dtype=dtype)
    tensors[f"{FC_NAME}.weight"] = rng.normal(0.0, scale, (FC_IN, FEATURE_DIM)).astype(dtype)
    tensors[f"{FC_NAME}.bias"] = np.zeros(FEATURE_DIM, dtype=dtype)
    write_checkpoint(path, tensors)
    return path


def conv3x3(x, weight, bias):
    """Cross-correlation with a 3x3 kernel, stride 1, zero padding 1.

    x: (H, W, C_in); weight: (3, 3, C_in, C_out); returns (H, W, C_out).
    """
    h, w, c_in = x.shape
    if weight.shape[:3] != (3, 3, c_in):
        raise ShapeError(f"conv weight {weight.shape} incompatible with input {x.shape}")
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    # im2col: (H*W, 9*C_in) patches ordered (ky, kx, c) to match the kernel layout
    cols = np.empty((h * w, 9 * c_in), dtype=x.dtype)
    k = 0
    for ky in range(3):
        for kx in range(3):
            cols[:, k * c_in:(k + 1) * c_in] = padded[ky:ky + h, kx:kx + w, :].reshape(h * w, c_in)
            k += 1
    out = cols @ weight.reshape(9 * c_in, -1).astype(x.dtype, copy=False)
    out += bias.astype(x.dtype, copy=False)
    return out.reshape(h, w, -1)


def maxpool2x2(x):
    """Non-overlapping 2x2 max pooling; H and W must be even."""
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {x.shape}")
    return x.reshape(h // 2, 2, w // 2, 2, c).max(axis=(1, 3))


def global_average_pool(x):
    """Per-channel mean over all spatial positions."""
    return x.mean(axis=(0, 1))


def bilinear_resize(image, out_h, out_w):
    """Bilinear resampling with half-pixel-centered sampling.

    Identity when the output size equals the input size.
    """
    image = np.asarray(image, dtype=np.float64)
    in_h, in_w = image.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bottom = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def preprocess_frame(raw, bbox):
    """Crop to the face bounding box and produce the network input.

    ``raw`` is an (H, W, 3) image with values in 0..255; ``bbox`` is
    (x, y, w, h) in pixels. The crop is bilinear-resized to 224x224,
    scaled to [0,1], then shifted by the per-channel mean.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) RGB image, got shape {raw.shape}")
    x, y, w, h = (int(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise DataError(f"degenerate bounding box {bbox}")
    img_h, img_w = raw.shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, img_w), min(y + h, img_h)
    if x1 <= x0 or y1 <= y0:
        raise DataError(f"bounding box {bbox} lies outside the {img_w}x{img_h} image")
    if (x0, y0, x1, y1) != (x, y, x + w, y + h):
        logger.warning("bounding box %s clamped to image bounds (%d,%d,%d,%d)",
                       bbox, x0, y0, x1 - x0, y1 - y0)
    crop = raw[y0:y1, x0:x1, :]
    resized = bilinear_resize(crop, INPUT_SIZE, INPUT_SIZE)
    scaled = resized / 255.0
    return scaled - np.asarray(CHANNEL_MEAN)


def extract_features(weights, image):
    """Deterministic forward pass producing the 1024-d feature vector."""
    x = np.asarray(image)
    if x.shape != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ShapeError(f"extractor input must be {INPUT_SIZE}x{INPUT_SIZE}x3, got {x.shape}")
    for entry in VGG16_PLAN:
        if entry == "pool":
            x = maxpool2x2(x)
        elif entry == "gap":
            x = global_average_pool(x)
        else:
            name = entry[0]
            x = np.maximum(conv3x3(x, weights[f"{name}.weight"], weights[f"{name}.bias"]), 0.0)
            if not np.all(np.isfinite(x)):
                raise DataError(f"non-finite activation after layer {name!r}")
    features = np.maximum(
        x @ weights[f"{FC_NAME}.weight"].astype(x.dtype, copy=False)
        + weights[f"{FC_NAME}.bias"].astype(x.dtype, copy=False),
        0.0,
    )
    if not np.all(np.isfinite(features)):
        raise DataError(f"non-finite activation after layer {FC_NAME!r}")
    return features


def extract_video(weights, frames, fps=30.0, source_id="", participant_id=""):
    """Per-frame feature extraction, stacked in time order."""
    frames = list(frames)
    if not frames:
        raise DataError("extract_video: no frames")
    rows = np.stack([extract_features(weights, frame) for frame in frames])
    return FeatureSequence(rows, fps=fps, source_id=source_id,
                           participant_id=participant_id)
