"""Line-sequence attention: per-line self-attention, cross-line attention with
a feed-forward stage, and a final local convolution.

Each source sequence is augmented in place of its residual stream:

    s = mhsa(s) + s                      (within the source line)
    s = mhca(s, r, r) + s                (from the paired reference line)
    s = ffn(s) + s

stackable ``n_blocks`` times, with sinusoidal position offsets along the line
added once before the first block. Augmented sequences are scattered back to
the grid and a stride-1 convolution re-aggregates local context, filling the
hole pixels no sequence wrote to. All arithmetic runs in float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    IndexMisalignmentError,
    OddChannelsError,
)
from .pair_search import EpipolarPairSet
from .sequences import FeatureMap, LineSequence, gather, scatter

_EPWT_MAGIC = b"EPWT"

_PE_MODES = ("none", "sine", "learnable")


@dataclass(frozen=True)
class AttentionConfig:
    """Shape and wiring of the augmentation stack."""

    channels: int
    heads: int
    ffn_ratio: int = 4
    n_blocks: int = 1
    pe_mode: str = "sine"
    la_kernel: int = 3

    def __post_init__(self):
        if self.channels < 1 or self.heads < 1 or self.channels % self.heads != 0:
            raise ValueError(
                f"channels ({self.channels}) must be a positive multiple of heads ({self.heads})"
            )
        if self.ffn_ratio < 1:
            raise ValueError("ffn_ratio must be at least 1")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be at least 1")
        if self.la_kernel < 1 or self.la_kernel % 2 == 0:
            raise ValueError("la_kernel must be odd")
        if self.pe_mode not in _PE_MODES:
            raise ValueError(f"pe_mode must be one of {_PE_MODES}, got {self.pe_mode!r}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


@dataclass(frozen=True)
class AttentionProjection:
    """Query/key/value/output projections of one attention layer."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray


@dataclass(frozen=True)
class FeedForwardWeights:
    w1: np.ndarray  # (c, ffn_ratio * c)
    b1: np.ndarray
    w2: np.ndarray  # (ffn_ratio * c, c)
    b2: np.ndarray


@dataclass(frozen=True)
class BlockWeights:
    intra: AttentionProjection
    cross: AttentionProjection
    ffn: FeedForwardWeights


@dataclass(frozen=True)
class LocalAugmentWeights:
    kernel: np.ndarray  # (k, k, c_in, c_out)
    bias: np.ndarray  # (c_out,)


@dataclass(frozen=True)
class AttentionWeights:
    """Weights for every block plus the local convolution.

    ``pe_table`` holds a stored (max_positions, channels) table for the
    "learnable" positional mode; it is never fitted here.
    """

    blocks: tuple[BlockWeights, ...]
    local: LocalAugmentWeights
    pe_table: np.ndarray | None = None


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically shifted softmax; rows sum to one."""
    shifted = scores - scores.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def sine_pe(n: int, c: int) -> np.ndarray:
    """Sinusoidal position offsets for an n-token sequence of c channels.

    Channel 2i holds sin(pos / 10000^(2i/c)), channel 2i+1 the matching cos.
    Positions index tokens along the ordered sequence.
    """
    if c % 2 != 0:
        raise OddChannelsError(f"channel count must be even, got {c}")
    positions = np.arange(n, dtype=np.float64)[:, None]
    wavelengths = 10000.0 ** (np.arange(0, c, 2, dtype=np.float64) / c)
    angles = positions / wavelengths[None, :]
    pe = np.empty((n, c), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def mhca(
    query_seq: np.ndarray,
    kv_seq: np.ndarray,
    proj: AttentionProjection,
    heads: int,
    return_attention: bool = False,
):
    """Multi-head attention with queries from one sequence, keys/values from another.

    Scores are scaled by sqrt(head_dim) and softmaxed over keys per head.
    Returns the pre-residual output (n_q, c), or (output, attention) with
    attention shaped (heads, n_q, n_kv) when requested.
    """
    query_seq = np.asarray(query_seq, dtype=np.float64)
    kv_seq = np.asarray(kv_seq, dtype=np.float64)
    n_q, c = query_seq.shape
    n_kv = kv_seq.shape[0]
    if n_q < 1 or n_kv < 1:
        raise ValueError("attention requires at least one query and one key")
    if c % heads != 0:
        raise ValueError(f"channels ({c}) not divisible by heads ({heads})")
    d = c // heads

    q = query_seq @ proj.wq + proj.bq
    k = kv_seq @ proj.wk + proj.bk
    v = kv_seq @ proj.wv + proj.bv

    qh = q.reshape(n_q, heads, d).transpose(1, 0, 2)
    kh = k.reshape(n_kv, heads, d).transpose(1, 0, 2)
    vh = v.reshape(n_kv, heads, d).transpose(1, 0, 2)

    scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(d)
    attention = softmax(scores, axis=-1)
    context = attention @ vh
    merged = context.transpose(1, 0, 2).reshape(n_q, c)
    out = merged @ proj.wo + proj.bo
    if return_attention:
        return out, attention
    return out


def mhsa(seq: np.ndarray, proj: AttentionProjection, heads: int, return_attention: bool = False):
    """Multi-head self-attention: queries, keys and values from the same sequence."""
    return mhca(seq, seq, proj, heads, return_attention=return_attention)


def feed_forward(seq: np.ndarray, ffn: FeedForwardWeights) -> np.ndarray:
    return np.maximum(seq @ ffn.w1 + ffn.b1, 0.0) @ ffn.w2 + ffn.b2


def _positional(config: AttentionConfig, weights: AttentionWeights, n: int) -> np.ndarray:
    if config.pe_mode == "sine":
        return sine_pe(n, config.channels)
    if config.pe_mode == "learnable":
        if weights.pe_table is None:
            raise ValueError("learnable positional mode requires a stored pe_table")
        if n > weights.pe_table.shape[0]:
            raise ValueError(
                f"sequence of {n} tokens exceeds stored positional table "
                f"({weights.pe_table.shape[0]} positions)"
            )
        return np.asarray(weights.pe_table[:n], dtype=np.float64)
    raise ValueError(f"no positional table for mode {config.pe_mode!r}")


def et_forward(
    ref_seqs: list[LineSequence],
    src_seqs: list[LineSequence],
    weights: AttentionWeights,
    config: AttentionConfig,
) -> list[LineSequence]:
    """Augment every source sequence from itself and its paired reference sequence.

    Pairs with an empty source sequence pass through untouched; pairs with an
    empty reference sequence skip the cross-attention and feed-forward steps.
    Inputs are never mutated.

    Raises:
        IndexMisalignmentError: When the two lists are not aligned pair-by-pair.
    """
    if len(ref_seqs) != len(src_seqs):
        raise IndexMisalignmentError(
            f"{len(ref_seqs)} reference sequences vs {len(src_seqs)} source sequences"
        )
    out = []
    for ref_seq, src_seq in zip(ref_seqs, src_seqs):
        if ref_seq.pair_index != src_seq.pair_index:
            raise IndexMisalignmentError(
                f"pair index mismatch: {ref_seq.pair_index} vs {src_seq.pair_index}"
            )
        if src_seq.n == 0:
            out.append(src_seq)
            continue
        src = np.asarray(src_seq.tokens, dtype=np.float64).copy()
        ref = np.asarray(ref_seq.tokens, dtype=np.float64).copy()
        if config.pe_mode != "none":
            src = src + _positional(config, weights, src.shape[0])
            if ref.shape[0] > 0:
                ref = ref + _positional(config, weights, ref.shape[0])
        for block in weights.blocks:
            src = mhsa(src, block.intra, config.heads) + src
            if ref.shape[0] > 0:
                src = mhca(src, ref, block.cross, config.heads) + src
                src = feed_forward(src, block.ffn) + src
        out.append(
            LineSequence(pair_index=src_seq.pair_index, tokens=src, pixel_order=src_seq.pixel_order)
        )
    return out


def local_augment(
    fmap: FeatureMap, local: LocalAugmentWeights, hole_mask: np.ndarray | None = None
) -> FeatureMap:
    """Stride-1, zero-padded, same-size convolution over the whole map.

    Applied to every pixel, holes included; that is what fills hole pixels
    with neighboring context. ``hole_mask``, when given, is only checked for
    shape: it documents which pixels carried no attended features.
    """
    kernel = np.asarray(local.kernel, dtype=np.float64)
    k = kernel.shape[0]
    if kernel.ndim != 4 or kernel.shape[1] != k or k % 2 == 0:
        raise ValueError(f"kernel must be (k, k, c_in, c_out) with odd k, got {kernel.shape}")
    if kernel.shape[2] != fmap.channels:
        raise ValueError(
            f"kernel expects {kernel.shape[2]} input channels, map has {fmap.channels}"
        )
    if hole_mask is not None and hole_mask.shape != (fmap.height, fmap.width):
        raise ValueError("hole mask shape does not match the map")
    r = k // 2
    h, w, _ = fmap.data.shape
    c_out = kernel.shape[3]
    padded = np.zeros((h + 2 * r, w + 2 * r, fmap.channels), dtype=np.float64)
    padded[r : r + h, r : r + w] = fmap.data
    out = np.zeros((h, w, c_out), dtype=np.float64)
    for u in range(k):
        for v in range(k):
            out += padded[u : u + h, v : v + w] @ kernel[u, v]
    out += np.asarray(local.bias, dtype=np.float64)
    return FeatureMap(out)


def identity_local_weights(channels: int, kernel_size: int = 3) -> LocalAugmentWeights:
    """Delta kernel: the convolution becomes the identity map."""
    kernel = np.zeros((kernel_size, kernel_size, channels, channels))
    kernel[kernel_size // 2, kernel_size // 2] = np.eye(channels)
    return LocalAugmentWeights(kernel=kernel, bias=np.zeros(channels))


def augment_pipeline(
    ref_map: FeatureMap,
    src_map: FeatureMap,
    pairs: EpipolarPairSet,
    weights: AttentionWeights,
    config: AttentionConfig,
) -> FeatureMap:
    """Gather both sides, augment the source sequences, scatter, then smooth.

    Returns the enhanced source feature map; hole pixels keep their template
    values until the final convolution mixes in their neighborhoods.
    """
    ref_seqs = gather(ref_map, pairs, "ref")
    src_seqs = gather(src_map, pairs, "src")
    augmented = et_forward(ref_seqs, src_seqs, weights, config)
    scattered = scatter(augmented, pairs, template=src_map)
    return local_augment(scattered, weights.local, pairs.src_hole_mask)


def seeded_weights(
    config: AttentionConfig, seed: int, pe_positions: int = 4096
) -> AttentionWeights:
    """Reproducible weights, uniform in [-1/sqrt(c), 1/sqrt(c)].

    There is no training here, so initialization only pins down demo and
    benchmark outputs.
    """
    rng = np.random.default_rng(seed)
    c = config.channels
    bound = 1.0 / math.sqrt(c)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    def projection():
        return AttentionProjection(
            wq=u(c, c), wk=u(c, c), wv=u(c, c), wo=u(c, c),
            bq=u(c), bk=u(c), bv=u(c), bo=u(c),
        )

    blocks = tuple(
        BlockWeights(
            intra=projection(),
            cross=projection(),
            ffn=FeedForwardWeights(
                w1=u(c, config.ffn_ratio * c),
                b1=u(config.ffn_ratio * c),
                w2=u(config.ffn_ratio * c, c),
                b2=u(c),
            ),
        )
        for _ in range(config.n_blocks)
    )
    local = LocalAugmentWeights(
        kernel=u(config.la_kernel, config.la_kernel, c, c), bias=u(c)
    )
    pe_table = u(pe_positions, c) if config.pe_mode == "learnable" else None
    return AttentionWeights(blocks=blocks, local=local, pe_table=pe_table)


def zero_weights(config: AttentionConfig) -> AttentionWeights:
    """All-zero weights; with an identity local kernel the pipeline is the identity."""
    c = config.channels

    def z(*shape):
        return np.zeros(shape)

    blocks = tuple(
        BlockWeights(
            intra=AttentionProjection(
                wq=z(c, c), wk=z(c, c), wv=z(c, c), wo=z(c, c),
                bq=z(c), bk=z(c), bv=z(c), bo=z(c),
            ),
            cross=AttentionProjection(
                wq=z(c, c), wk=z(c, c), wv=z(c, c), wo=z(c, c),
                bq=z(c), bk=z(c), bv=z(c), bo=z(c),
            ),
            ffn=FeedForwardWeights(
                w1=z(c, config.ffn_ratio * c),
                b1=z(config.ffn_ratio * c),
                w2=z(config.ffn_ratio * c, c),
                b2=z(c),
            ),
        )
        for _ in range(config.n_blocks)
    )
    local = LocalAugmentWeights(kernel=z(config.la_kernel, config.la_kernel, c, c), bias=z(c))
    pe_table = z(4096, c) if config.pe_mode == "learnable" else None
    return AttentionWeights(blocks=blocks, local=local, pe_table=pe_table)


def _weight_tensors(weights: AttentionWeights):
    """The fixed serialization order of every tensor in the container."""
    for block in weights.blocks:
        for proj in (block.intra, block.cross):
            yield from (proj.wq, proj.bq, proj.wk, proj.bk, proj.wv, proj.bv, proj.wo, proj.bo)
        yield from (block.ffn.w1, block.ffn.b1, block.ffn.w2, block.ffn.b2)
    yield weights.local.kernel
    yield weights.local.bias


def write_weights(path, weights: AttentionWeights, config: AttentionConfig) -> None:
    """Write the binary container: 'EPWT' header then f32 tensors.

    Header fields: u32 n_blocks, channels, heads, ffn_ratio, la_kernel. The
    tensor payload order is, per block: intra wq,bq,wk,bk,wv,bv,wo,bo; cross
    likewise; ffn w1,b1,w2,b2; then the local kernel and bias. Stored
    positional tables are in-memory only and not serialized.
    """
    header = _EPWT_MAGIC + struct.pack(
        "<IIIII",
        config.n_blocks,
        config.channels,
        config.heads,
        config.ffn_ratio,
        config.la_kernel,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for tensor in _weight_tensors(weights):
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def read_weights(path) -> tuple[AttentionWeights, AttentionConfig]:
    """Read a weight container; the positional mode defaults to "sine"."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 24 or blob[:4] != _EPWT_MAGIC:
        raise ValueError(f"{path}: not a weight file (bad magic)")
    n_blocks, channels, heads, ffn_ratio, la_kernel = struct.unpack("<IIIII", blob[4:24])
    config = AttentionConfig(
        channels=channels,
        heads=heads,
        ffn_ratio=ffn_ratio,
        n_blocks=n_blocks,
        pe_mode="sine",
        la_kernel=la_kernel,
    )
    cursor = 24
    values = np.frombuffer(blob, dtype="<f4", offset=cursor).astype(np.float64)

    consumed = 0

    def take(*shape):
        nonlocal consumed
        size = int(np.prod(shape))
        chunk = values[consumed : consumed + size]
        if chunk.size != size:
            raise ValueError(f"{path}: truncated weight payload")
        consumed += size
        return chunk.reshape(shape)

    c, f = channels, ffn_ratio
    blocks = []
    for _ in range(n_blocks):
        projs = []
        for _ in range(2):
            projs.append(
                AttentionProjection(
                    wq=take(c, c), bq=take(c), wk=take(c, c), bk=take(c),
                    wv=take(c, c), bv=take(c), wo=take(c, c), bo=take(c),
                )
            )
        ffn = FeedForwardWeights(w1=take(c, f * c), b1=take(f * c), w2=take(f * c, c), b2=take(c))
        blocks.append(BlockWeights(intra=projs[0], cross=projs[1], ffn=ffn))
    local = LocalAugmentWeights(kernel=take(la_kernel, la_kernel, c, c), bias=take(c))
    if consumed != values.size:
        raise ValueError(f"{path}: {values.size - consumed} unread trailing values")
    return AttentionWeights(blocks=tuple(blocks), local=local), config
