"""Gathering dense feature maps into per-line token sequences and back.

A line pair's pixels, read in order along the line, form a token sequence;
augmented sequences are scattered back onto a template map, leaving hole-mask
pixels untouched. Gather then scatter is an exact identity on clustered
pixels because every pixel belongs to at most one sequence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ShapeMismatchError
from .pair_search import EpipolarPairSet

_EPFM_MAGIC = b"EPFM"


@dataclass(frozen=True)
class FeatureMap:
    """Dense (height, width, channels) grid of finite floating-point features."""

    data: np.ndarray

    def __post_init__(self):
        # Copy before freezing so the caller's array is never altered.
        data = np.array(self.data, order="C", copy=True)
        if data.ndim != 3:
            raise ValueError(f"feature map must be (H, W, C), got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.isfinite(data).all():
            raise ValueError("feature map contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LineSequence:
    """Tokens of one line pair side, aligned with the pixels they came from."""

    pair_index: int
    tokens: np.ndarray  # (n, channels)
    pixel_order: np.ndarray  # (n, 2) int64, columns (x, y)

    def __post_init__(self):
        tokens = np.array(self.tokens, order="C", copy=True)
        order = np.array(self.pixel_order, dtype=np.int64, order="C", copy=True).reshape(-1, 2)
        if tokens.ndim != 2 or tokens.shape[0] != order.shape[0]:
            raise ShapeMismatchError(
                f"tokens {tokens.shape} do not align with pixel_order {order.shape}"
            )
        tokens.flags.writeable = False
        order.flags.writeable = False
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "pixel_order", order)

    @property
    def n(self) -> int:
        return self.tokens.shape[0]


def gather(fmap: FeatureMap, pairs: EpipolarPairSet, side: str) -> list[LineSequence]:
    """Read each pair's pixels out of the map as an ordered token sequence.

    Args:
        fmap: Feature map for the requested side.
        pairs: Pair set whose image size must match the map.
        side: "ref" or "src".

    Returns:
        One LineSequence per pair, in pair order; source sequences may be
        empty when no source pixel matched the line.
    """
    if side not in ("ref", "src"):
        raise ValueError(f"side must be 'ref' or 'src', got {side!r}")
    if (fmap.height, fmap.width) != pairs.image_size:
        raise DimensionMismatchError(
            f"map is {fmap.height}x{fmap.width} but pair set is "
            f"{pairs.image_size[0]}x{pairs.image_size[1]}"
        )
    sequences = []
    for index, pair in enumerate(pairs.pairs):
        pixels = pair.ref_pixels if side == "ref" else pair.src_pixels
        tokens = fmap.data[pixels[:, 1], pixels[:, 0], :]
        sequences.append(LineSequence(pair_index=index, tokens=tokens, pixel_order=pixels))
    return sequences


def scatter(
    sequences: list[LineSequence], pairs: EpipolarPairSet, template: FeatureMap
) -> FeatureMap:
    """Write sequence tokens back onto a copy of the template map.

    Pixels not covered by any sequence keep their template values. Unique
    assignment in the pair search guarantees each pixel is written at most
    once.
    """
    if len(sequences) != len(pairs.pairs):
        raise ShapeMismatchError(
            f"{len(sequences)} sequences for {len(pairs.pairs)} pairs"
        )
    if (template.height, template.width) != pairs.image_size:
        raise DimensionMismatchError(
            f"template is {template.height}x{template.width} but pair set is "
            f"{pairs.image_size[0]}x{pairs.image_size[1]}"
        )
    out = template.data.copy()
    for seq in sequences:
        if seq.tokens.shape[1] != template.channels:
            raise ShapeMismatchError(
                f"sequence has {seq.tokens.shape[1]} channels, template has "
                f"{template.channels}"
            )
        if seq.n == 0:
            continue
        xs, ys = seq.pixel_order[:, 0], seq.pixel_order[:, 1]
        if xs.min() < 0 or xs.max() >= template.width or ys.min() < 0 or ys.max() >= template.height:
            raise ShapeMismatchError("sequence pixel coordinates fall outside the template")
        out[ys, xs, :] = seq.tokens
    return FeatureMap(out)


def write_feature_map(path, fmap: FeatureMap) -> None:
    """Write the binary map format: 'EPFM', u32 H/W/C, then f32 row-major data."""
    header = _EPFM_MAGIC + struct.pack("<III", fmap.height, fmap.width, fmap.channels)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(fmap.data, dtype="<f4").tobytes())


def read_feature_map(path) -> FeatureMap:
    """Read the binary map format written by :func:`write_feature_map`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != _EPFM_MAGIC:
        raise ValueError(f"{path}: not a feature-map file (bad magic)")
    height, width, channels = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * height * width * channels
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(height, width, channels)
    return FeatureMap(data.astype(np.float32))
