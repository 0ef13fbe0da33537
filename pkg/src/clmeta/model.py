"""The full model: configuration, the flat ordered parameter collection,
and the composed forward pass (encode -> pool -> classify / project).

``ModelParams`` is the single source of truth for parameter names and
order; checkpoints, the optimizer, flatten/unflatten for gradient checks,
and MAML's adapted copies all go through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, encode_batch
from .errors import ValidationError
from .heads import (
    AttentionPoolParams,
    ClassifierParams,
    ProjectionParams,
    attention_pool_batch,
    classify_batch,
    project_batch,
)
from .rng import sub_rng
from .tensor import Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    num_classes: int = 24
    pool_hidden: int = 64
    proj_hidden: int = 64
    proj_dim: int = 32

    def to_json(self) -> dict:
        enc = self.encoder
        return {
            "encoder": {
                "vocab_size": enc.vocab_size,
                "max_len": enc.max_len,
                "embed_dim": enc.embed_dim,
                "num_layers": enc.num_layers,
                "num_heads": enc.num_heads,
                "ff_dim": enc.ff_dim,
                "dropout": enc.dropout,
            },
            "num_classes": self.num_classes,
            "pool_hidden": self.pool_hidden,
            "proj_hidden": self.proj_hidden,
            "proj_dim": self.proj_dim,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(
            encoder=EncoderConfig(**obj["encoder"]),
            num_classes=obj["num_classes"],
            pool_hidden=obj["pool_hidden"],
            proj_hidden=obj["proj_hidden"],
            proj_dim=obj["proj_dim"],
        )


def _param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    enc = config.encoder
    d, ff = enc.embed_dim, enc.ff_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embed.token": (enc.vocab_size, d),
        "embed.pos": (enc.max_len, d),
    }
    for i in range(enc.num_layers):
        pre = f"layer{i}"
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{pre}.attn.{name}"] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[f"{pre}.attn.{name}"] = (d,)
        shapes[f"{pre}.ln1.gamma"] = (d,)
        shapes[f"{pre}.ln1.beta"] = (d,)
        shapes[f"{pre}.ffn.w1"] = (d, ff)
        shapes[f"{pre}.ffn.b1"] = (ff,)
        shapes[f"{pre}.ffn.w2"] = (ff, d)
        shapes[f"{pre}.ffn.b2"] = (d,)
        shapes[f"{pre}.ln2.gamma"] = (d,)
        shapes[f"{pre}.ln2.beta"] = (d,)
    shapes["pool.wa"] = (config.pool_hidden, d)
    shapes["pool.ba"] = (config.pool_hidden,)
    shapes["pool.v"] = (config.pool_hidden,)
    shapes["cls.w"] = (config.num_classes, d)
    shapes["cls.b"] = (config.num_classes,)
    shapes["proj.w1"] = (config.proj_hidden, d)
    shapes["proj.b1"] = (config.proj_hidden,)
    shapes["proj.w2"] = (config.proj_dim, config.proj_hidden)
    shapes["proj.b2"] = (config.proj_dim,)
    return shapes


def _init_value(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".beta", ".b1", ".b2", ".bq", ".bk", ".bv", ".bo", ".ba", "cls.b")):
        return np.zeros(shape)
    return rng.normal(0.0, INIT_STD, size=shape)


class ModelParams:
    """Every learnable tensor, addressable by name in a stable order."""

    def __init__(self, config: ModelConfig, named: dict[str, Tensor]):
        expected = _param_shapes(config)
        if list(named) != list(expected):
            raise ValidationError("parameter names/order do not match the config")
        for name, t in named.items():
            if t.shape != expected[name]:
                raise ValidationError(
                    f"parameter '{name}' has shape {t.shape}, expected {expected[name]}"
                )
        self.config = config
        self._named = dict(named)

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        rng = sub_rng(seed, "init")
        named = {
            name: Tensor(_init_value(name, shape, rng), requires_grad=True, name=name)
            for name, shape in _param_shapes(config).items()
        }
        return cls(config, named)

    def __getitem__(self, name: str) -> Tensor:
        return self._named[name]

    def __contains__(self, name: str) -> bool:
        return name in self._named

    def names(self) -> list[str]:
        return list(self._named)

    def items(self):
        return self._named.items()

    def named_tensors(self) -> dict[str, Tensor]:
        return dict(self._named)

    def subset(self, exclude_prefixes: tuple[str, ...] = ()) -> dict[str, Tensor]:
        return {
            name: t
            for name, t in self._named.items()
            if not name.startswith(exclude_prefixes)
        }

    def num_params(self) -> int:
        return sum(t.size for t in self._named.values())

    def zero_grads(self) -> None:
        for t in self._named.values():
            t.grad = None

    def clone(self) -> "ModelParams":
        named = {
            name: Tensor(t.data.copy(), requires_grad=True, name=name)
            for name, t in self._named.items()
        }
        return ModelParams(self.config, named)

    def replace(self, updates: dict[str, Tensor]) -> "ModelParams":
        """Copy of the collection with some tensors swapped (others shared)."""
        unknown = set(updates) - set(self._named)
        if unknown:
            raise ValidationError(f"unknown parameter name(s): {sorted(unknown)}")
        named = {name: updates.get(name, t) for name, t in self._named.items()}
        return ModelParams(self.config, named)

    def load_state(self, other: "ModelParams") -> None:
        for name, t in self._named.items():
            t.data[...] = other[name].data

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self._named.values()])

    def load_flat(self, vec: np.ndarray) -> None:
        if vec.size != self.num_params():
            raise ValidationError(f"expected {self.num_params()} values, got {vec.size}")
        offset = 0
        for t in self._named.values():
            t.data[...] = vec[offset : offset + t.size].reshape(t.shape)
            offset += t.size

    @classmethod
    def unflatten(cls, config: ModelConfig, vec: np.ndarray) -> "ModelParams":
        params = cls.init(config, seed=0)
        params.load_flat(np.asarray(vec, dtype=np.float64))
        return params

    def state_bytes(self) -> bytes:
        return b"".join(t.data.tobytes() for t in self._named.values())

    # Typed views consumed by the head functions.
    def attention_pool(self) -> AttentionPoolParams:
        return AttentionPoolParams(self["pool.wa"], self["pool.ba"], self["pool.v"])

    def classifier(self) -> ClassifierParams:
        return ClassifierParams(self["cls.w"], self["cls.b"])

    def projection(self) -> ProjectionParams:
        return ProjectionParams(
            self["proj.w1"], self["proj.b1"], self["proj.w2"], self["proj.b2"]
        )


@dataclass
class ForwardOutput:
    alpha: Tensor  # [S, n]
    pooled: Tensor  # [S, d]
    probs: Tensor | None = None  # [S, num_classes]
    proj: Tensor | None = None  # [S, proj_dim]


def forward_batch(
    params: ModelParams,
    ids: np.ndarray,
    mask: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    want_probs: bool = True,
    want_proj: bool = True,
) -> ForwardOutput:
    """Encode, pool, and run the requested heads over a batch of sequences."""
    cfg = params.config
    hidden = encode_batch(params, cfg.encoder, ids, mask, train=train, rng=rng)
    alpha, pooled = attention_pool_batch(hidden, mask, params.attention_pool())
    out = ForwardOutput(alpha=alpha, pooled=pooled)
    if want_probs:
        out.probs = classify_batch(pooled, params.classifier())
    if want_proj:
        out.proj = project_batch(pooled, params.projection())
    return out
