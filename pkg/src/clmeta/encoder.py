"""Micro transformer encoder: token+position embeddings, masked multi-head
self-attention blocks with post-layer-norm, and a feed-forward sublayer.

Forward functions are purely functional: parameters arrive as a name ->
Tensor mapping so the same code serves the live model, MAML-adapted
copies, and gradient checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import EncodedExample
from .errors import RangeError, ValidationError
from .tensor import (
    Tensor,
    add,
    add_bias,
    bmm,
    dropout,
    gather_rows,
    layer_norm_rows,
    matmul,
    permute,
    relu,
    reshape,
    scale,
    softmax_rows,
)

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    max_len: int = 32
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ff_dim: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ValidationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class EncoderOutput:
    hidden: Tensor  # [n, d]
    cls: Tensor  # [d], row 0 of hidden


def embed(params, config: EncoderConfig, token_ids: np.ndarray, positions: np.ndarray) -> Tensor:
    """Token embedding + position embedding, rowwise."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.int64)
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= config.vocab_size):
        raise RangeError(f"token id outside [0, {config.vocab_size})")
    if positions.size and (positions.min() < 0 or positions.max() >= config.max_len):
        raise RangeError(f"position outside [0, {config.max_len})")
    return add(
        gather_rows(params["embed.token"], token_ids),
        gather_rows(params["embed.pos"], positions),
    )


def encode_batch(
    params,
    config: EncoderConfig,
    ids: np.ndarray,
    mask: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    collect_attention: list | None = None,
) -> Tensor:
    """Hidden states for a batch of sequences, flattened to [S * n, d].

    Padded key positions never receive attention weight, so unmasked
    outputs depend on unmasked inputs only. Dropout runs only in train
    mode and draws from the supplied generator.
    """
    S, n = ids.shape
    d, H = config.embed_dim, config.num_heads
    dh = d // H
    rate = config.dropout if train else 0.0
    if rate > 0.0 and rng is None:
        raise ValidationError("train-mode dropout needs a random generator")

    x = embed(params, config, ids.reshape(-1), np.tile(np.arange(n), S))
    x = dropout(x, rate, rng)

    # Each attention row attends over that sequence's unmasked keys.
    key_mask = np.broadcast_to(mask[:, None, None, :], (S, H, n, n)).reshape(-1, n)

    def split_heads(proj: Tensor) -> Tensor:
        return reshape(permute(reshape(proj, (S, n, H, dh)), (0, 2, 1, 3)), (S * H, n, dh))

    for i in range(config.num_layers):
        pre = f"layer{i}"
        q = split_heads(add_bias(matmul(x, params[f"{pre}.attn.wq"]), params[f"{pre}.attn.bq"]))
        k = split_heads(add_bias(matmul(x, params[f"{pre}.attn.wk"]), params[f"{pre}.attn.bk"]))
        v = split_heads(add_bias(matmul(x, params[f"{pre}.attn.wv"]), params[f"{pre}.attn.bv"]))
        scores = scale(bmm(q, permute(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        att = softmax_rows(reshape(scores, (S * H * n, n)), key_mask)
        if collect_attention is not None:
            collect_attention.append(att.data.reshape(S, H, n, n))
        ctx = bmm(reshape(att, (S * H, n, n)), v)
        ctx = reshape(permute(reshape(ctx, (S, H, n, dh)), (0, 2, 1, 3)), (S * n, d))
        out = add_bias(matmul(ctx, params[f"{pre}.attn.wo"]), params[f"{pre}.attn.bo"])
        out = dropout(out, rate, rng)
        x = layer_norm_rows(
            add(x, out), params[f"{pre}.ln1.gamma"], params[f"{pre}.ln1.beta"], LAYER_NORM_EPS
        )

        h = relu(add_bias(matmul(x, params[f"{pre}.ffn.w1"]), params[f"{pre}.ffn.b1"]))
        h = add_bias(matmul(h, params[f"{pre}.ffn.w2"]), params[f"{pre}.ffn.b2"])
        h = dropout(h, rate, rng)
        x = layer_norm_rows(
            add(x, h), params[f"{pre}.ln2.gamma"], params[f"{pre}.ln2.beta"], LAYER_NORM_EPS
        )

    return x


def encode_sequence(
    example: EncodedExample,
    params,
    config: EncoderConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """Contextual embeddings for one encoded example."""
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    ids = example.token_ids.reshape(1, -1)
    mask = example.attention_mask.reshape(1, -1)
    hidden = encode_batch(params, config, ids, mask, train=(mode == "train"), rng=rng)
    cls = reshape(gather_rows(hidden, np.array([0])), (config.embed_dim,))
    return EncoderOutput(hidden=hidden, cls=cls)
