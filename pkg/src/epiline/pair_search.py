"""Quantized line-pair search.

Every reference pixel owns a closed-form line in the source view. Pixels whose
rounded line parameters coincide are clustered into one line pair; source
pixels are then assigned to their nearest retained line by perpendicular
distance. The result partitions both images into matched line sequences plus
hole masks of leftover pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllDegenerateError
from .geometry import (
    CameraPair,
    EpipolarLine,
    Orientation,
    line_parameter_grid,
    projection_constants,
)

_INT64_GUARD = float(2**62)


@dataclass(frozen=True)
class SearchConfig:
    """Tunables for the pair search.

    Args:
        s_k: Slope rounding step.
        s_b: Intercept rounding step, in pixels.
        delta: Perpendicular-distance threshold for source pixels, in pixels.
        min_cluster_size: Reference clusters smaller than this dissolve into
            the hole mask; a one-pixel "line" carries no non-local context.
    """

    s_k: float = 0.1
    s_b: float = 10.0
    delta: float = 1.0
    min_cluster_size: int = 2

    def __post_init__(self):
        if not (self.s_k > 0.0 and self.s_b > 0.0 and self.delta > 0.0):
            raise ValueError("s_k, s_b, and delta must all be positive")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be at least 1")


@dataclass(frozen=True)
class QuantizedLineKey:
    """Cluster identity: orientation plus rounded slope and intercept indices."""

    orientation: Orientation
    qk: int
    qb: int

    def dequantize(self, config: SearchConfig) -> EpipolarLine:
        """The representative line shared by every pixel in the cluster."""
        return EpipolarLine(self.orientation, self.qk * config.s_k, self.qb * config.s_b)

    def sort_tuple(self) -> tuple[int, int, int]:
        return (0 if self.orientation is Orientation.STANDARD else 1, self.qk, self.qb)


def _round_half_even(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties to even, saturating at the int64 guard band."""
    return np.rint(np.clip(values, -_INT64_GUARD, _INT64_GUARD)).astype(np.int64)


def quantize_line(line: EpipolarLine, config: SearchConfig) -> QuantizedLineKey:
    """Round a line's parameters onto the quantization grid."""
    qk = int(_round_half_even(np.asarray(line.slope / config.s_k)))
    qb = int(_round_half_even(np.asarray(line.intercept / config.s_b)))
    return QuantizedLineKey(line.orientation, qk, qb)


@dataclass(frozen=True)
class EpipolarPair:
    """One matched line pair: the cluster key, its representative line, and the
    member pixels of both views ordered along the line."""

    key: QuantizedLineKey
    line: EpipolarLine
    ref_pixels: np.ndarray  # (n_ref, 2) int64, columns (x, y)
    src_pixels: np.ndarray  # (n_src, 2) int64, columns (x, y)

    def __post_init__(self):
        for name in ("ref_pixels", "src_pixels"):
            arr = np.array(getattr(self, name), dtype=np.int64, order="C", copy=True)
            arr = arr.reshape(-1, 2)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_ref(self) -> int:
        return self.ref_pixels.shape[0]

    @property
    def n_src(self) -> int:
        return self.src_pixels.shape[0]


@dataclass(frozen=True)
class EpipolarPairSet:
    """All line pairs of a rig plus the hole masks of unassigned pixels.

    Pairs are sorted by (orientation, qk, qb). Every reference pixel appears
    in exactly one pair or in ``ref_hole_mask``; likewise for source pixels,
    each of which is assigned to at most one (its nearest) line.
    """

    pairs: tuple[EpipolarPair, ...]
    ref_hole_mask: np.ndarray  # (H, W) bool, True = unclustered
    src_hole_mask: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        h, w = self.image_size
        object.__setattr__(self, "image_size", (int(h), int(w)))
        object.__setattr__(self, "pairs", tuple(self.pairs))
        for name in ("ref_hole_mask", "src_hole_mask"):
            mask = np.array(getattr(self, name), dtype=bool, order="C", copy=True)
            if mask.shape != (int(h), int(w)):
                raise ValueError(f"{name} must have shape {(h, w)}, got {mask.shape}")
            mask.flags.writeable = False
            object.__setattr__(self, name, mask)

    @property
    def cluster_count(self) -> int:
        return len(self.pairs)

    @property
    def ref_coverage(self) -> float:
        """Fraction of reference pixels that belong to some pair."""
        return 1.0 - float(self.ref_hole_mask.mean())


def _order_along_line(line: EpipolarLine, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sort order along the line: arc parameter first, then (x, y) to break ties."""
    t = line.arc_parameter(xs.astype(float), ys.astype(float))
    return np.lexsort((ys, xs, t))


def assign_source_pixels(
    pair: CameraPair, keys: list[QuantizedLineKey], config: SearchConfig
) -> tuple[list[np.ndarray], np.ndarray]:
    """Assign every source pixel to its nearest line within the distance threshold.

    Each pixel is tested against every key's dequantized line; pixels within
    ``config.delta`` of several lines go to the nearest one, with exact ties
    broken toward the lowest (orientation, qk, qb). Pixels near no line form
    the source hole mask.

    Args:
        pair: The camera pair (supplies the source image size).
        keys: Deduplicated cluster keys.
        config: Search tunables.

    Returns:
        (per_key_pixels, src_hole_mask): one (n_i, 2) array of (x, y) pixels
        per input key, ordered along the line, plus the (H, W) hole mask.
    """
    if len(set(keys)) != len(keys):
        raise ValueError("keys must be deduplicated")
    h, w = pair.image_size
    xs = np.tile(np.arange(w, dtype=float), h)
    ys = np.repeat(np.arange(h, dtype=float), w)

    best_dist = np.full(h * w, np.inf)
    best_idx = np.full(h * w, -1, dtype=np.int64)
    order = sorted(range(len(keys)), key=lambda i: keys[i].sort_tuple())
    lines = [keys[i].dequantize(config) for i in range(len(keys))]
    for i in order:
        d = lines[i].perpendicular_distance(xs, ys)
        better = d < best_dist  # strict: the earliest (lowest) key keeps ties
        best_dist[better] = d[better]
        best_idx[better] = i

    assigned = best_dist < config.delta
    src_hole_mask = ~assigned.reshape(h, w)

    per_key: list[np.ndarray] = []
    xs_i = xs.astype(np.int64)
    ys_i = ys.astype(np.int64)
    for i, line in enumerate(lines):
        sel = assigned & (best_idx == i)
        px, py = xs_i[sel], ys_i[sel]
        order_ix = _order_along_line(line, px, py)
        per_key.append(np.stack([px[order_ix], py[order_ix]], axis=1))
    return per_key, src_hole_mask


def search_pairs(pair: CameraPair, config: SearchConfig = SearchConfig()) -> EpipolarPairSet:
    """Cluster reference pixels by rounded line parameters and match source pixels.

    Raises:
        AllDegenerateError: When no reference pixel yields a usable line.
    """
    h, w = pair.image_size
    constants = projection_constants(pair)
    swapped, slope, intercept, degenerate = line_parameter_grid(constants, h, w)
    valid = ~degenerate
    if not valid.any():
        raise AllDegenerateError("every reference pixel is degenerate for this rig")

    qk = _round_half_even(np.where(valid, slope, 0.0) / config.s_k)
    qb = _round_half_even(np.where(valid, intercept, 0.0) / config.s_b)

    ref_ys, ref_xs = np.nonzero(valid)
    triples = np.stack(
        [swapped[valid].astype(np.int64), qk[valid], qb[valid]], axis=1
    )
    # Unique rows come back lexicographically sorted, which is exactly the
    # required (orientation, qk, qb) pair order.
    unique_keys, inverse, counts = np.unique(
        triples, axis=0, return_inverse=True, return_counts=True
    )

    retained = counts >= config.min_cluster_size
    ref_hole_mask = np.ones((h, w), dtype=bool)

    keys: list[QuantizedLineKey] = []
    ref_lists: list[np.ndarray] = []
    for cluster_id in np.nonzero(retained)[0]:
        orient_code, k_idx, b_idx = unique_keys[cluster_id]
        key = QuantizedLineKey(
            Orientation.SWAPPED if orient_code else Orientation.STANDARD,
            int(k_idx),
            int(b_idx),
        )
        member = inverse == cluster_id
        px = ref_xs[member].astype(np.int64)
        py = ref_ys[member].astype(np.int64)
        line = key.dequantize(config)
        order_ix = _order_along_line(line, px, py)
        keys.append(key)
        ref_lists.append(np.stack([px[order_ix], py[order_ix]], axis=1))
        ref_hole_mask[py, px] = False

    src_lists, src_hole_mask = assign_source_pixels(pair, keys, config)

    pairs = tuple(
        EpipolarPair(key=key, line=key.dequantize(config), ref_pixels=rp, src_pixels=sp)
        for key, rp, sp in zip(keys, ref_lists, src_lists)
    )
    return EpipolarPairSet(
        pairs=pairs,
        ref_hole_mask=ref_hole_mask,
        src_hole_mask=src_hole_mask,
        image_size=(h, w),
    )


@dataclass(frozen=True)
class SweepEntry:
    """One row of a quantization-precision sweep."""

    s_k: float
    s_b: float
    cluster_count: int
    coverage: float


def precision_sweep(
    pair: CameraPair,
    grid: list[tuple[float, float]],
    base: SearchConfig = SearchConfig(),
) -> list[SweepEntry]:
    """Run the pair search over a grid of (s_k, s_b) steps.

    ``base`` supplies the distance threshold and minimum cluster size shared
    by every grid point.
    """
    if not grid:
        raise ValueError("sweep grid must not be empty")
    rows = []
    for s_k, s_b in grid:
        config = SearchConfig(
            s_k=s_k, s_b=s_b, delta=base.delta, min_cluster_size=base.min_cluster_size
        )
        result = search_pairs(pair, config)
        rows.append(
            SweepEntry(
                s_k=s_k,
                s_b=s_b,
                cluster_count=result.cluster_count,
                coverage=result.ref_coverage,
            )
        )
    return rows


def _mask_to_runs(mask: np.ndarray) -> list[list[int]]:
    """Run-length encode the True entries of a flattened row-major mask."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    edges = np.flatnonzero(np.diff(flat.astype(np.int8)))
    starts = []
    lengths = []
    prev = 0
    boundaries = list(edges + 1) + [flat.size]
    for boundary in boundaries:
        if flat[prev]:
            starts.append(prev)
            lengths.append(boundary - prev)
        prev = boundary
    return [[int(s), int(n)] for s, n in zip(starts, lengths)]


def _runs_to_mask(runs: list[list[int]], height: int, width: int) -> np.ndarray:
    flat = np.zeros(height * width, dtype=bool)
    for start, length in runs:
        flat[start : start + length] = True
    return flat.reshape(height, width)


def pair_set_to_dict(pair_set: EpipolarPairSet) -> dict:
    """JSON-ready dictionary: pairs with dequantized parameters plus RLE hole masks."""
    h, w = pair_set.image_size
    return {
        "schema": 1,
        "image_size": [h, w],
        "pairs": [
            {
                "orientation": p.key.orientation.value,
                "qk": p.key.qk,
                "qb": p.key.qb,
                "k": p.line.slope,
                "b": p.line.intercept,
                "ref_pixels": p.ref_pixels.tolist(),
                "src_pixels": p.src_pixels.tolist(),
            }
            for p in pair_set.pairs
        ],
        "ref_hole_mask": {"height": h, "width": w, "runs": _mask_to_runs(pair_set.ref_hole_mask)},
        "src_hole_mask": {"height": h, "width": w, "runs": _mask_to_runs(pair_set.src_hole_mask)},
    }


def pair_set_from_dict(data: dict) -> EpipolarPairSet:
    """Rebuild a pair set from its JSON dictionary form."""
    if data.get("schema") != 1:
        raise ValueError(f"unsupported pair-set schema: {data.get('schema')!r}")
    h, w = data["image_size"]
    pairs = []
    for entry in data["pairs"]:
        orientation = Orientation(entry["orientation"])
        key = QuantizedLineKey(orientation, int(entry["qk"]), int(entry["qb"]))
        line = EpipolarLine(orientation, float(entry["k"]), float(entry["b"]))
        pairs.append(
            EpipolarPair(
                key=key,
                line=line,
                ref_pixels=np.asarray(entry["ref_pixels"], dtype=np.int64).reshape(-1, 2),
                src_pixels=np.asarray(entry["src_pixels"], dtype=np.int64).reshape(-1, 2),
            )
        )
    return EpipolarPairSet(
        pairs=tuple(pairs),
        ref_hole_mask=_runs_to_mask(data["ref_hole_mask"]["runs"], h, w),
        src_hole_mask=_runs_to_mask(data["src_hole_mask"]["runs"], h, w),
        image_size=(h, w),
    )
