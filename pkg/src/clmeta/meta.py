"""MAML meta-training over language tasks.

The inner loop takes plain gradient-descent steps on the support
classification loss; because parameter updates are recorded tensor ops,
the outer (query) gradient differentiates through them exactly. A
first-order switch detaches the inner gradients instead. Episodes run
without dropout so inner losses are deterministic functions of the
parameters.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from .corpus import EncodedCorpus
from .errors import EpisodeAbortError, SamplingError, ValidationError
from .evaluation import predict_view
from .heads import cross_entropy
from .model import ModelParams, forward_batch
from .optim import SGD, AdamW, clip_grad_norm, global_grad_norm
from .rng import sub_rng
from .tensor import Tensor, add, backward, grad, scale, sub

HEAD_PREFIXES = ("pool.", "cls.", "proj.")


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 0.01
    outer_lr: float = 0.001
    inner_steps: int = 5
    meta_batch_size: int = 4
    first_order: bool = False
    adapt_params: str = "all"  # or "heads"
    n_way: int = 5
    shots_per_class: int = 2
    query_per_class: int = 2
    outer_steps_per_epoch: int = 25
    outer_optimizer: str = "sgd"  # or "adamw"
    episode_languages: tuple[str, ...] = ("L2",)

    def __post_init__(self):
        if self.inner_lr < 0 or self.outer_lr <= 0:
            raise ValidationError("learning rates must be positive (inner may be 0 in tests)")
        if self.inner_steps < 0:
            raise ValidationError("inner_steps must be >= 0")
        if self.adapt_params not in ("all", "heads"):
            raise ValidationError("adapt_params must be 'all' or 'heads'")
        if self.outer_optimizer not in ("sgd", "adamw"):
            raise ValidationError("outer_optimizer must be 'sgd' or 'adamw'")

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["episode_languages"] = list(self.episode_languages)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "MetaConfig":
        obj = dict(obj)
        obj["episode_languages"] = tuple(obj.get("episode_languages", ("L2",)))
        return cls(**obj)


@dataclass(frozen=True)
class Episode:
    """Support/query sets drawn from a single language, always disjoint."""

    support_ids: np.ndarray
    support_mask: np.ndarray
    support_labels: np.ndarray
    query_ids: np.ndarray
    query_mask: np.ndarray
    query_labels: np.ndarray
    language: str


def episode_loss(params: ModelParams, ids, mask, labels) -> Tensor:
    """Classification cross-entropy without dropout (episodes are deterministic)."""
    out = forward_batch(params, ids, mask, train=False, want_probs=True, want_proj=False)
    return cross_entropy(out.probs, labels)


def adapted_names(params: ModelParams, mode: str) -> list[str]:
    if mode == "heads":
        return [n for n in params.names() if n.startswith(HEAD_PREFIXES)]
    return params.names()


def inner_adapt(
    params: ModelParams, episode: Episode, cfg: MetaConfig
) -> tuple[ModelParams, list[float]]:
    """Adapted parameter copy after inner_steps SGD steps on the support loss.

    The originals are untouched. With first_order=False the update chain
    stays differentiable w.r.t. the originals.
    """
    names = adapted_names(params, cfg.adapt_params)
    adapted = params
    support_losses: list[float] = []
    for _ in range(cfg.inner_steps):
        loss = episode_loss(
            adapted, episode.support_ids, episode.support_mask, episode.support_labels
        )
        if not np.isfinite(loss.data):
            raise EpisodeAbortError(f"non-finite inner loss: {float(loss.data)}")
        support_losses.append(loss.item())
        wrt = [adapted[n] for n in names]
        grads = grad(loss, wrt, create_graph=not cfg.first_order)
        updates = {
            name: sub(p, scale(g, cfg.inner_lr))
            for name, p, g in zip(names, wrt, grads)
        }
        adapted = adapted.replace(updates)
    return adapted, support_losses


def meta_gradients(
    params: ModelParams, episodes: list[Episode], cfg: MetaConfig
) -> dict:
    """Accumulate the meta-gradient of the mean query loss into params.grad.

    Episodes that diverge are skipped with a warning as long as at least
    one survives. Returns per-episode stats.
    """
    if not episodes:
        raise ValidationError("meta step needs at least one episode")
    params.zero_grads()
    total_query: Tensor | None = None
    stats: dict = {"languages": [], "support_losses": [], "query_losses": []}
    for episode in episodes:
        try:
            adapted, support_losses = inner_adapt(params, episode, cfg)
            query_loss = episode_loss(
                adapted, episode.query_ids, episode.query_mask, episode.query_labels
            )
            if not np.isfinite(query_loss.data):
                raise EpisodeAbortError(
                    f"non-finite query loss: {float(query_loss.data)}"
                )
        except EpisodeAbortError as exc:
            warnings.warn(f"skipping episode ({episode.language}): {exc}", stacklevel=2)
            continue
        stats["languages"].append(episode.language)
        stats["support_losses"].append(support_losses)
        stats["query_losses"].append(query_loss.item())
        total_query = query_loss if total_query is None else add(total_query, query_loss)
    if total_query is None:
        raise EpisodeAbortError("every episode in the meta-batch failed")
    mean_query = scale(total_query, 1.0 / len(stats["query_losses"]))
    backward(mean_query)
    stats["mean_query_loss"] = mean_query.item()
    stats["meta_grad_norm"] = global_grad_norm(params.named_tensors())
    return stats


def meta_step(
    params: ModelParams,
    episodes: list[Episode],
    cfg: MetaConfig,
    outer_optimizer: SGD | AdamW,
    max_grad_norm: float | None = None,
) -> dict:
    """One outer update: meta-gradient of the mean query loss, then the
    configured outer optimizer (with the shared max-norm clip, if any)."""
    stats = meta_gradients(params, episodes, cfg)
    if max_grad_norm is not None:
        clip_grad_norm(params.named_tensors(), max_grad_norm)
    outer_optimizer.step()
    return stats


def sample_episodes(
    enc: EncodedCorpus,
    indices: np.ndarray,
    num_tasks: int,
    shots_per_class: int,
    query_per_class: int,
    rng: np.random.Generator | int,
    languages: tuple[str, ...] = ("L2",),
    n_way: int = 5,
) -> list[Episode]:
    """Episodes drawing one language and a class subset each, deterministic
    under the seed; support and query never overlap."""
    if isinstance(rng, (int, np.integer)):
        rng = sub_rng(int(rng), "episodes")
    labels = enc.labels[indices]
    members = {c: indices[labels == c] for c in np.unique(labels)}
    need = shots_per_class + query_per_class
    eligible = sorted(c for c, m in members.items() if len(m) >= need)
    if len(eligible) < n_way:
        short = min(members, key=lambda c: len(members[c]))
        raise SamplingError(
            f"need {n_way} classes with >= {need} examples; class {short} has "
            f"only {len(members[short])}"
        )
    episodes = []
    for _ in range(num_tasks):
        lang = languages[int(rng.integers(len(languages)))]
        classes = rng.choice(np.asarray(eligible), size=n_way, replace=False)
        support_idx, query_idx = [], []
        for c in classes:
            pool = members[int(c)]
            picked = pool[rng.permutation(len(pool))[:need]]
            support_idx.extend(picked[:shots_per_class])
            query_idx.extend(picked[shots_per_class:])
        s_ids, s_mask, s_labels = enc.view(np.asarray(support_idx, dtype=np.int64), lang)
        q_ids, q_mask, q_labels = enc.view(np.asarray(query_idx, dtype=np.int64), lang)
        episodes.append(Episode(s_ids, s_mask, s_labels, q_ids, q_mask, q_labels, lang))
    return episodes


def evaluate_adaptation(
    params: ModelParams,
    enc: EncodedCorpus,
    indices: np.ndarray,
    language: str,
    shots: int,
    cfg: MetaConfig,
    seed: int,
    query_per_class: int = 2,
) -> dict:
    """Query accuracy before and after few-shot adaptation on a held-out
    language; the global parameters are untouched (verified bitwise by tests).
    """
    state_before = params.state_bytes()
    rng = sub_rng(seed, f"adapt-{language}")
    labels = enc.labels[indices]
    classes = sorted(int(c) for c in np.unique(labels))
    support_idx, query_idx = [], []
    for c in classes:
        pool = indices[labels == c]
        need = shots + query_per_class
        if len(pool) < need:
            raise SamplingError(f"class {c} has {len(pool)} examples, need {need}")
        picked = pool[rng.permutation(len(pool))[:need]]
        support_idx.extend(picked[:shots])
        query_idx.extend(picked[shots:])
    q_ids, q_mask, q_labels = enc.view(np.asarray(query_idx, dtype=np.int64), language)

    def accuracy(p: ModelParams) -> float:
        return float((predict_view(p, q_ids, q_mask) == q_labels).mean())

    pre = accuracy(params)
    if shots == 0 or cfg.inner_steps == 0:
        post = pre
    else:
        s_ids, s_mask, s_labels = enc.view(np.asarray(support_idx, dtype=np.int64), language)
        episode = Episode(s_ids, s_mask, s_labels, q_ids, q_mask, q_labels, language)
        # First-order adaptation yields identical values; no outer gradient is taken.
        adapted, _ = inner_adapt(params, episode, replace(cfg, first_order=True))
        post = accuracy(adapted)
    assert params.state_bytes() == state_before
    return {"pre_adapt_accuracy": pre, "post_adapt_accuracy": post}


def run_meta_phase(trainer) -> "PhaseReport":
    """Phase 4: episodic meta-training on the configured episode languages."""
    from .trainer import PhaseReport, verify_alignment

    cfg = trainer.cfg
    mcfg = trainer.meta_cfg if trainer.meta_cfg is not None else MetaConfig()
    epochs = cfg.epochs_phase4
    if epochs == 0:
        return PhaseReport(phase=4)
    start = time.perf_counter()
    report = PhaseReport(phase=4)
    report.align_before = verify_alignment(trainer.params, trainer.enc, trainer.splits.val)
    trainer.label_languages_used.update(mcfg.episode_languages)
    trainer.text_languages_used.update(mcfg.episode_languages)

    if mcfg.outer_optimizer == "adamw":
        outer = AdamW(
            trainer.params.named_tensors(),
            lr=mcfg.outer_lr,
            betas=cfg.betas,
            eps=cfg.adam_eps,
            weight_decay=cfg.weight_decay,
        )
    else:
        outer = SGD(trainer.params.named_tensors(), lr=mcfg.outer_lr)

    rng = sub_rng(cfg.seed, "phase4")
    for epoch in range(epochs):
        query_losses = []
        for _ in range(mcfg.outer_steps_per_epoch):
            episodes = sample_episodes(
                trainer.enc,
                trainer.splits.train,
                num_tasks=mcfg.meta_batch_size,
                shots_per_class=mcfg.shots_per_class,
                query_per_class=mcfg.query_per_class,
                rng=rng,
                languages=mcfg.episode_languages,
                n_way=mcfg.n_way,
            )
            stats = meta_step(
                trainer.params, episodes, mcfg, outer, max_grad_norm=cfg.max_grad_norm
            )
            query_losses.append(stats["mean_query_loss"])
            if trainer.logger is not None:
                trainer.logger.log(
                    {
                        "phase": 4,
                        "epoch": epoch,
                        "languages": stats["languages"],
                        "support_losses": stats["support_losses"],
                        "query_losses": stats["query_losses"],
                        "meta_grad_norm": stats["meta_grad_norm"],
                    }
                )
        report.epoch_logs.append(
            {
                "phase": 4,
                "epoch": epoch,
                "losses": {"query": float(np.mean(query_losses))},
                "align": verify_alignment(trainer.params, trainer.enc, trainer.splits.val),
            }
        )
    report.align_after = verify_alignment(trainer.params, trainer.enc, trainer.splits.val)
    report.wall_s = time.perf_counter() - start
    return report
