"""Task heads on top of the encoder: attention pooling, the linear
classifier with cross-entropy, the contrastive projection with NT-Xent,
and the translation-consistency penalty.

All functions accept batched inputs; the batch dimension may be 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError, RangeError, ValidationError
from .tensor import (
    Tensor,
    add,
    add_bias,
    bmm,
    clamp_min,
    exp,
    log,
    matmul,
    mean_all,
    mul,
    neg,
    relu,
    reshape,
    rsqrt,
    scale,
    softmax_rows,
    sub,
    sum_all,
    sum_rows,
    take_per_row,
    tanh,
    tile_cols,
    transpose,
)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class AttentionPoolParams:
    """Token-scoring pooling weights: score_i = v . tanh(W_a h_i + b_a)."""

    wa: Tensor  # [d', d]
    ba: Tensor  # [d']
    v: Tensor  # [d']


@dataclass(frozen=True)
class ClassifierParams:
    w: Tensor  # [num_classes, d]
    b: Tensor  # [num_classes]


@dataclass(frozen=True)
class ProjectionParams:
    """Two affine layers with a ReLU between them."""

    w1: Tensor  # [hidden, d]
    b1: Tensor  # [hidden]
    w2: Tensor  # [out, hidden]
    b2: Tensor  # [out]


@dataclass(frozen=True)
class PooledOutput:
    attn_weights: Tensor  # [n], zero at padded positions
    pooled: Tensor  # [d]


def attention_pool_batch(
    hidden: Tensor, mask: np.ndarray, params: AttentionPoolParams
) -> tuple[Tensor, Tensor]:
    """(alpha [S, n], pooled [S, d]) for hidden states flattened to [S*n, d]."""
    S, n = mask.shape
    d = hidden.shape[1]
    feat = tanh(add_bias(matmul(hidden, transpose(params.wa)), params.ba))
    scores = reshape(matmul(feat, reshape(params.v, (params.v.shape[0], 1))), (S, n))
    alpha = softmax_rows(scores, mask)
    pooled = reshape(bmm(reshape(alpha, (S, 1, n)), reshape(hidden, (S, n, d))), (S, d))
    return alpha, pooled


def attention_pool(hidden: Tensor, mask: np.ndarray, params: AttentionPoolParams) -> PooledOutput:
    """Pool one sequence [n, d] into a sentence vector (convex combination)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidInputError("attention_pool: every position is masked")
    alpha, pooled = attention_pool_batch(hidden, mask.reshape(1, -1), params)
    n, d = hidden.shape
    return PooledOutput(reshape(alpha, (n,)), reshape(pooled, (d,)))


def classify_batch(pooled: Tensor, params: ClassifierParams) -> Tensor:
    """Class probabilities [S, num_classes]."""
    return softmax_rows(add_bias(matmul(pooled, transpose(params.w)), params.b))


def classify(pooled: Tensor, params: ClassifierParams) -> Tensor:
    """Class probabilities [num_classes] for a single sentence vector [d]."""
    probs = classify_batch(reshape(pooled, (1, pooled.shape[0])), params)
    return reshape(probs, (params.b.shape[0],))


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean -log p(label) with the probability floored at 1e-12."""
    if probs.ndim == 1:
        probs = reshape(probs, (1, probs.shape[0]))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (probs.shape[0],):
        raise DimensionError(f"labels {labels.shape} do not match probs {probs.shape}")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise RangeError(
            f"label outside [0, {probs.shape[1]}): min {labels.min()}, max {labels.max()}"
        )
    picked = take_per_row(probs, labels)
    return neg(mean_all(log(clamp_min(picked, PROB_FLOOR))))


def project_batch(x: Tensor, params: ProjectionParams) -> Tensor:
    """Contrastive projection [S, d] -> [S, p]; no normalization inside."""
    h = relu(add_bias(matmul(x, transpose(params.w1)), params.b1))
    return add_bias(matmul(h, transpose(params.w2)), params.b2)


def project(x: Tensor, params: ProjectionParams) -> Tensor:
    """Projection of a single sentence vector [d] -> [p]."""
    out = project_batch(reshape(x, (1, x.shape[0])), params)
    return reshape(out, (params.b2.shape[0],))


def normalize_rows(z: Tensor) -> Tensor:
    """Rows scaled to unit L2 norm; zero rows are rejected."""
    if (z.data * z.data).sum(axis=1).min() <= 1e-30:
        raise InvalidInputError("zero-norm projection: cosine similarity undefined")
    return mul(z, tile_cols(rsqrt(sum_rows(mul(z, z))), z.shape[1]))


def nt_xent(z: Tensor, tau: float) -> Tensor:
    """Normalized temperature-scaled cross entropy over N positive pairs.

    Rows are laid out as [view-A of pair 0..N-1, view-B of pair 0..N-1]:
    row i pairs with row (i + N) % 2N. Every anchor's denominator ranges
    over all other rows, and the result is the mean over all 2N anchors.

    Computed as logsumexp(sim/tau over k != i) - sim(i, pos)/tau, which
    stays precise even when a positive pair's softmax weight underflows
    the probability floor used by the plain log losses.
    """
    if tau <= 0.0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] < 4:
        raise InvalidInputError(
            f"nt_xent needs 2N rows with N >= 2 pairs, got shape {z.shape}"
        )
    two_n = z.shape[0]
    half = two_n // 2
    zhat = normalize_rows(z)
    sim = matmul(zhat, transpose(zhat))
    logits = scale(sim, 1.0 / tau)
    offdiag = ~np.eye(two_n, dtype=bool)
    # Constant max shift over the off-diagonal: exact for any constant.
    shift = Tensor(np.where(offdiag, logits.data, -np.inf).max(axis=1, keepdims=True))
    kept = mul(exp(sub(logits, tile_cols(shift, two_n))), Tensor(offdiag.astype(np.float64)))
    lse = add(log(sum_rows(kept)), shift)
    pos_idx = (np.arange(two_n) + half) % two_n
    pos_logit = take_per_row(logits, pos_idx)
    return mean_all(sub(lse, pos_logit))


def translation_mse(z_src: Tensor, z_tgt: Tensor) -> Tensor:
    """Squared L2 distance between aligned representations.

    Vectors give the plain sum of squared differences; [B, p] batches give
    the mean over rows of the per-row sum.
    """
    if z_src.shape != z_tgt.shape:
        raise DimensionError(f"translation_mse shapes differ: {z_src.shape} vs {z_tgt.shape}")
    diff = sub(z_src, z_tgt)
    total = sum_all(mul(diff, diff))
    if diff.ndim == 2:
        return scale(total, 1.0 / diff.shape[0])
    return total


def cosine_rows(a: Tensor, b: Tensor) -> np.ndarray:
    """Row-wise cosine similarity of two [B, p] tensors, as plain data."""
    an = a.data / np.linalg.norm(a.data, axis=1, keepdims=True)
    bn = b.data / np.linalg.norm(b.data, axis=1, keepdims=True)
    return (an * bn).sum(axis=1)
