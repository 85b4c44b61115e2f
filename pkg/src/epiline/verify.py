"""Self-check suites runnable from the command line.

Each suite cross-validates one subsystem against an independent formulation:
projected points against the closed-form line, that line against the
fundamental matrix, the batched attention against a plain per-head loop, and
the cost model against its frozen reference counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import synthetic
from .attention import (
    AttentionConfig,
    AttentionProjection,
    et_forward,
    seeded_weights,
    sine_pe,
)
from .complexity import Strategy, gmacs, strategy_macs
from .geometry import (
    epipolar_line,
    fundamental_matrix,
    pixel_coeffs,
    project_pixel_sweep,
    projection_constants,
)
from .sequences import LineSequence


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    max_residual: float
    threshold: float
    detail: str


def collinearity_suite(seed: int = 0, trials: int = 100) -> SuiteResult:
    """Projections at many depths must sit on the closed-form line.

    ``trials`` rigs x 10 pixels x 100 depths; the perpendicular residual of
    every finite projection to the derived line must stay below 1e-6 px.
    """
    rng = np.random.default_rng(seed)
    depths = np.linspace(*synthetic.DEPTH_SWEEP, 100)
    worst = 0.0
    for _ in range(trials):
        pair = synthetic.random_pair(rng)
        constants = projection_constants(pair)
        h, w = pair.image_size
        for _ in range(10):
            x = int(rng.integers(0, w))
            y = int(rng.integers(0, h))
            coeffs = pixel_coeffs(constants, x, y)
            line = epipolar_line(coeffs)
            xs, ys, finite = project_pixel_sweep(coeffs, depths)
            if finite.any():
                residual = line.perpendicular_distance(xs[finite], ys[finite]).max()
                worst = max(worst, float(residual))
    return SuiteResult(
        name="collinearity",
        passed=worst < 1e-6,
        max_residual=worst,
        threshold=1e-6,
        detail=f"{trials} rigs x 10 pixels x 100 depths",
    )


def fundamental_suite(seed: int = 0, trials: int = 100) -> SuiteResult:
    """The slope/intercept line and the fundamental matrix must agree.

    For each draw, the implicit forms of the two are compared by the cosine
    of their angle, which must exceed 1 - 1e-9 in magnitude.
    """
    rng = np.random.default_rng(seed)
    draws_per_rig = 100
    worst_deviation = 0.0
    for _ in range(trials):
        pair = synthetic.random_pair(rng)
        constants = projection_constants(pair)
        f = fundamental_matrix(pair)
        h, w = pair.image_size
        for _ in range(draws_per_rig):
            x = int(rng.integers(0, w))
            y = int(rng.integers(0, h))
            line = epipolar_line(pixel_coeffs(constants, x, y))
            lhs = line.coeffs3()
            rhs = f @ np.array([x, y, 1.0])
            cosine = abs(float(lhs @ rhs)) / (
                float(np.linalg.norm(lhs)) * float(np.linalg.norm(rhs))
            )
            worst_deviation = max(worst_deviation, 1.0 - cosine)
    return SuiteResult(
        name="fundamental-equivalence",
        passed=worst_deviation < 1e-9,
        max_residual=worst_deviation,
        threshold=1e-9,
        detail=f"{trials * draws_per_rig} (rig, pixel) draws",
    )


def _naive_attention(query, kv, proj: AttentionProjection, heads: int) -> np.ndarray:
    """Reference attention: explicit per-head, per-query loops."""
    q = query @ proj.wq + proj.bq
    k = kv @ proj.wk + proj.bk
    v = kv @ proj.wv + proj.bv
    n_q, c = q.shape
    d = c // heads
    merged = np.zeros((n_q, c))
    for head in range(heads):
        sl = slice(head * d, (head + 1) * d)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        for i in range(n_q):
            logits = np.array([float(qh[i] @ kh[j]) / math.sqrt(d) for j in range(kh.shape[0])])
            weights_row = np.exp(logits - logits.max())
            weights_row /= weights_row.sum()
            merged[i, sl] = sum(weights_row[j] * vh[j] for j in range(kh.shape[0]))
    return merged @ proj.wo + proj.bo


def _naive_et_forward(ref_seqs, src_seqs, weights, config):
    out = []
    for ref_seq, src_seq in zip(ref_seqs, src_seqs):
        if src_seq.n == 0:
            out.append(src_seq.tokens)
            continue
        src = np.asarray(src_seq.tokens, dtype=np.float64).copy()
        ref = np.asarray(ref_seq.tokens, dtype=np.float64).copy()
        if config.pe_mode == "sine":
            src = src + sine_pe(src.shape[0], config.channels)
            if ref.shape[0]:
                ref = ref + sine_pe(ref.shape[0], config.channels)
        for block in weights.blocks:
            src = _naive_attention(src, src, block.intra, config.heads) + src
            if ref.shape[0]:
                src = _naive_attention(src, ref, block.cross, config.heads) + src
                hidden = np.maximum(src @ block.ffn.w1 + block.ffn.b1, 0.0)
                src = hidden @ block.ffn.w2 + block.ffn.b2 + src
        out.append(src)
    return out


def attention_suite(seed: int = 0, trials: int = 20) -> SuiteResult:
    """Batched augmentation must match the per-head loop within 1e-8."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        c = int(rng.choice([16, 32, 64]))
        heads = int(rng.choice([2, 4, 8]))
        config = AttentionConfig(channels=c, heads=heads, pe_mode="sine")
        weights = seeded_weights(config, seed=seed + trial)
        n_pairs = int(rng.integers(1, 4))
        ref_seqs, src_seqs = [], []
        for index in range(n_pairs):
            n_ref = int(rng.integers(0, 24))
            n_src = int(rng.integers(0, 24))
            ref_seqs.append(
                LineSequence(
                    index,
                    rng.standard_normal((n_ref, c)),
                    np.stack([np.arange(n_ref), np.zeros(n_ref, dtype=int)], axis=1),
                )
            )
            src_seqs.append(
                LineSequence(
                    index,
                    rng.standard_normal((n_src, c)),
                    np.stack([np.arange(n_src), np.ones(n_src, dtype=int)], axis=1),
                )
            )
        got = et_forward(ref_seqs, src_seqs, weights, config)
        expected = _naive_et_forward(ref_seqs, src_seqs, weights, config)
        for got_seq, exp_tokens in zip(got, expected):
            if got_seq.n:
                worst = max(worst, float(np.abs(got_seq.tokens - exp_tokens).max()))
    return SuiteResult(
        name="attention-oracle",
        passed=worst < 1e-8,
        max_residual=worst,
        threshold=1e-8,
        detail=f"{trials} random instances vs per-head loop",
    )


# Frozen reference counts at H=80, W=64, C=64, S=30, M=30.
_REFERENCE_COUNTS = {
    Strategy.POINT_TO_LINE: 1_466_695_680,
    Strategy.LINE_TO_LINE: 44_006_400,
    Strategy.PLANE_TO_PLANE: 272_629_760,
}


def complexity_suite() -> SuiteResult:
    """The closed forms must reproduce the frozen counts exactly."""
    mismatches = []
    for strategy, expected in _REFERENCE_COUNTS.items():
        got = strategy_macs(strategy, h=80, w=64, c=64, s=30, m=30)
        if got != expected:
            mismatches.append(f"{strategy.value}: {got} != {expected}")
    rounded_ok = (
        round(_REFERENCE_COUNTS[Strategy.POINT_TO_LINE] / 1e9, 1) == 1.5
        and gmacs(_REFERENCE_COUNTS[Strategy.LINE_TO_LINE]) == 0.04
        and gmacs(_REFERENCE_COUNTS[Strategy.PLANE_TO_PLANE]) == 0.27
    )
    if not rounded_ok:
        mismatches.append("rounded GMAC values drifted")
    return SuiteResult(
        name="complexity-regression",
        passed=not mismatches,
        max_residual=float(len(mismatches)),
        threshold=1.0,
        detail="; ".join(mismatches) if mismatches else "3 exact counts + roundings",
    )


def run_all(seed: int = 0, trials: int = 100) -> list[SuiteResult]:
    """Run every suite; ``trials`` scales the randomized ones."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    return [
        collinearity_suite(seed=seed, trials=trials),
        fundamental_suite(seed=seed, trials=trials),
        attention_suite(seed=seed, trials=max(1, trials // 5)),
        complexity_suite(),
    ]
