"""Cross-lingual multi-task text classification at desk scale.

A micro transformer encoder with attention pooling is trained jointly on
classification, translation-consistency, and contrastive objectives, then
meta-trained (MAML) and evaluated for zero-shot transfer to held-out
surrogate languages. Everything runs on a from-scratch float64 reverse-mode
autodiff core with optionally compiled kernels.
"""

from .config import ModelSettings, RunConfig
from .corpus import EncodedCorpus, SplitSpec, build_vocab, generate_corpus, split_corpus
from .meta import MetaConfig
from .model import ModelConfig, ModelParams
from .optim import AdamW, SGD, WarmupLinearSchedule
from .tensor import Tensor, backward, grad, no_grad
from .trainer import TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "EncodedCorpus",
    "MetaConfig",
    "ModelConfig",
    "ModelParams",
    "ModelSettings",
    "RunConfig",
    "SGD",
    "SplitSpec",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "WarmupLinearSchedule",
    "__version__",
    "backward",
    "build_vocab",
    "generate_corpus",
    "grad",
    "no_grad",
    "split_corpus",
]
