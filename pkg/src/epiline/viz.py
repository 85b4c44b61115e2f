"""Cluster visualization as binary PPM images.

Each line pair gets a color from a deterministic hash of its key, so the same
cluster shows the same tint in both views and re-renders are byte-identical.
Hole pixels stay black.
"""

from __future__ import annotations

import colorsys

import numpy as np

from .pair_search import EpipolarPairSet, QuantizedLineKey

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def cluster_color(key: QuantizedLineKey) -> tuple[int, int, int]:
    """Stable RGB tint for a cluster key (hue from a 64-bit hash)."""
    h = _splitmix64(1 if key.orientation.value == "swapped" else 0)
    h = _splitmix64(h ^ (key.qk & _MASK64))
    h = _splitmix64(h ^ (key.qb & _MASK64))
    hue = h / float(1 << 64)
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
    return int(r * 255), int(g * 255), int(b * 255)


def render_pair_images(pair_set: EpipolarPairSet) -> tuple[np.ndarray, np.ndarray]:
    """Reference and source images with every cluster tinted by its key."""
    h, w = pair_set.image_size
    ref_img = np.zeros((h, w, 3), dtype=np.uint8)
    src_img = np.zeros((h, w, 3), dtype=np.uint8)
    for pair in pair_set.pairs:
        color = cluster_color(pair.key)
        if pair.n_ref:
            ref_img[pair.ref_pixels[:, 1], pair.ref_pixels[:, 0]] = color
        if pair.n_src:
            src_img[pair.src_pixels[:, 1], pair.src_pixels[:, 0]] = color
    return ref_img, src_img


def write_ppm(path, image: np.ndarray) -> None:
    """Write a binary (P6) PPM."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3) uint8, got shape {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())
