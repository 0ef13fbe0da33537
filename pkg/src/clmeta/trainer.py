"""Training phases 1-3: contrastive pretraining, supervised classification,
and joint multi-task training under the weighted objective, plus the
alignment diagnostic.

One step function serves every phase; a phase is just a (loss weights,
optimizer parameter set) pair, which is what makes the gating guarantees
exact: with beta = gamma = 0 a phase-3 step runs the identical op
sequence as a phase-2 step.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import EncodedCorpus, Splits
from .errors import InvalidInputError, NumericError, ValidationError
from .evaluation import alignment_cosines, combined_macro_f1
from .heads import classify_batch, cross_entropy, nt_xent, translation_mse
from .model import ModelParams, forward_batch
from .optim import AdamW, WarmupLinearSchedule, clip_grad_norm
from .rng import sub_rng
from .tensor import Tensor, add, backward, gather_rows, scale

VARIANT_PHASES: dict[str, tuple[int, ...]] = {
    "V1": (2,),
    "V2": (1, 2),
    "V3": (1, 2, 3),
    "V4": (1, 2, 3, 4),
}


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.8
    tau: float = 0.07
    epochs_phase1: int = 5
    epochs_phase2: int = 5
    epochs_phase3: int = 7
    epochs_phase4: int = 3
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    warmup_steps: int = 50
    seed: int = 7
    variant: str = "V4"
    max_grad_norm: float | None = 1.0
    early_stopping: bool = True
    patience: int = 3
    classification_languages: tuple[str, ...] = ("L1",)
    include_l2l3_pairs: bool = False
    translation_space: str = "projection"  # or "pooled"
    encoder_frozen: bool = False

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ValidationError("temperature must be positive")
        if self.variant not in VARIANT_PHASES:
            raise ValidationError(f"variant must be one of {sorted(VARIANT_PHASES)}")
        if self.translation_space not in ("projection", "pooled"):
            raise ValidationError("translation_space must be 'projection' or 'pooled'")

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["betas"] = list(self.betas)
        obj["classification_languages"] = list(self.classification_languages)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        obj["betas"] = tuple(obj.get("betas", (0.9, 0.999)))
        obj["classification_languages"] = tuple(
            obj.get("classification_languages", ("L1",))
        )
        return cls(**obj)

    def epochs_for(self, phase: int) -> int:
        return (
            self.epochs_phase1,
            self.epochs_phase2,
            self.epochs_phase3,
            self.epochs_phase4,
        )[phase - 1]


@dataclass
class PhaseReport:
    phase: int
    epoch_logs: list[dict] = field(default_factory=list)
    align_before: float | None = None
    align_after: float | None = None
    wall_s: float = 0.0

    def to_json(self) -> dict:
        return {
            "phase": self.phase,
            "epochs": self.epoch_logs,
            "align_before": self.align_before,
            "align_after": self.align_after,
        }


def triplet_batches(
    indices: np.ndarray, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffled whole-triplet batches; a trailing singleton is dropped so
    contrastive batches always contain negatives."""
    perm = indices[rng.permutation(len(indices))]
    batches = [perm[i : i + batch_size] for i in range(0, len(perm), batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def multitask_loss(
    params: ModelParams,
    enc: EncodedCorpus,
    batch_idx: np.ndarray,
    weights: tuple[float, float, float],
    cfg: TrainConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, dict]:
    """Weighted loss over one triplet batch.

    Only the language views demanded by active (nonzero-weight) losses are
    encoded, so gating a loss off removes its compute and its RNG draws,
    not just its contribution.
    """
    alpha_w, beta_w, gamma_w = weights
    B = len(batch_idx)
    need_aligned = beta_w != 0.0 or gamma_w != 0.0
    if B < 2 and gamma_w != 0.0:
        raise InvalidInputError("contrastive loss needs a batch of at least 2 triplets")

    langs: list[str] = []
    if alpha_w != 0.0:
        langs.extend(cfg.classification_languages)
    if need_aligned:
        langs.extend(("L1", "L2", "L3"))
    langs = list(dict.fromkeys(langs))
    if not langs:
        raise InvalidInputError("all loss weights are zero")

    views = [enc.view(batch_idx, lang) for lang in langs]
    ids = np.concatenate([v[0] for v in views])
    mask = np.concatenate([v[1] for v in views])
    labels = views[0][2]
    block = {lang: np.arange(i * B, (i + 1) * B) for i, lang in enumerate(langs)}

    need_proj = gamma_w != 0.0 or (beta_w != 0.0 and cfg.translation_space == "projection")
    out = forward_batch(
        params, ids, mask, train=train, rng=rng, want_probs=False, want_proj=need_proj
    )

    components = {"cls": 0.0, "trans": 0.0, "contrast": 0.0}
    total: Tensor | None = None

    def accumulate(term: Tensor, weight: float) -> None:
        nonlocal total
        weighted = scale(term, weight)
        total = weighted if total is None else add(total, weighted)

    if alpha_w != 0.0:
        cls_rows = np.concatenate([block[lang] for lang in cfg.classification_languages])
        probs = classify_batch(gather_rows(out.pooled, cls_rows), params.classifier())
        cls_term = cross_entropy(probs, np.tile(labels, len(cfg.classification_languages)))
        components["cls"] = cls_term.item()
        accumulate(cls_term, alpha_w)

    if beta_w != 0.0:
        space = out.proj if cfg.translation_space == "projection" else out.pooled
        pair_terms = [
            translation_mse(gather_rows(space, block["L1"]), gather_rows(space, block[lang]))
            for lang in ("L2", "L3")
        ]
        trans_term = scale(add(pair_terms[0], pair_terms[1]), 0.5)
        components["trans"] = trans_term.item()
        accumulate(trans_term, beta_w)

    if gamma_w != 0.0:
        pairs = [("L1", "L2"), ("L1", "L3")]
        if cfg.include_l2l3_pairs:
            pairs.append(("L2", "L3"))
        pair_terms = [
            nt_xent(
                gather_rows(out.proj, np.concatenate([block[a], block[b]])), cfg.tau
            )
            for a, b in pairs
        ]
        contrast_term = pair_terms[0]
        for term in pair_terms[1:]:
            contrast_term = add(contrast_term, term)
        contrast_term = scale(contrast_term, 1.0 / len(pair_terms))
        components["contrast"] = contrast_term.item()
        accumulate(contrast_term, gamma_w)

    components["total"] = total.item()
    return total, components


def train_step(
    params: ModelParams,
    optimizer: AdamW,
    schedule: WarmupLinearSchedule,
    enc: EncodedCorpus,
    batch_idx: np.ndarray,
    weights: tuple[float, float, float],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> dict:
    """One optimizer step on one batch; returns unweighted loss components."""
    params.zero_grads()
    total, components = multitask_loss(
        params, enc, batch_idx, weights, cfg, train=True, rng=rng
    )
    if not np.isfinite(total.data):
        raise NumericError(f"non-finite training loss: {float(total.data)}")
    backward(total)
    if cfg.max_grad_norm is not None:
        clip_grad_norm(optimizer.named_params(), cfg.max_grad_norm)
    lr = schedule.lr_at(optimizer.step_count)
    optimizer.step(lr)
    components["lr"] = lr
    return components


def verify_alignment(
    params: ModelParams,
    enc: EncodedCorpus,
    indices: np.ndarray,
    pairs: tuple[tuple[str, str], ...] = (("L1", "L2"), ("L1", "L3")),
) -> float:
    """Mean aligned-pair cosine of projected sentence vectors, eval mode."""
    return alignment_cosines(params, enc, indices, pairs)["mean"]


class Trainer:
    """Drives the phases selected by the configured variant."""

    def __init__(
        self,
        params: ModelParams,
        cfg: TrainConfig,
        enc: EncodedCorpus,
        splits: Splits,
        meta_cfg=None,
        logger=None,
        checkpoint_fn=None,
    ):
        self.params = params
        self.cfg = cfg
        self.enc = enc
        self.splits = splits
        self.meta_cfg = meta_cfg
        self.logger = logger
        self.checkpoint_fn = checkpoint_fn  # called as (tag, params) after each phase
        self.reports: list[PhaseReport] = []
        self.best_val_f1: float = -1.0
        # Data-provenance: which languages' labels ever drove an update.
        self.label_languages_used: set[str] = set()
        self.text_languages_used: set[str] = set()

    # -- phase plumbing -----------------------------------------------------

    def phase_weights(self, phase: int) -> tuple[float, float, float]:
        if phase == 1:
            return (0.0, 0.0, 1.0)
        if phase == 2:
            return (self.cfg.alpha, 0.0, 0.0)
        if phase == 3:
            return (self.cfg.alpha, self.cfg.beta, self.cfg.gamma)
        raise ValidationError(f"no weights for phase {phase}")

    def phase_param_set(self, phase: int) -> dict:
        exclude: list[str] = []
        if phase == 1:
            exclude.append("cls.")
        if self.cfg.encoder_frozen:
            exclude.extend(("embed.", "layer"))
        return self.params.subset(tuple(exclude))

    def _record_provenance(self, phase: int, weights) -> None:
        alpha_w, beta_w, gamma_w = weights
        if alpha_w != 0.0:
            self.label_languages_used.update(self.cfg.classification_languages)
            self.text_languages_used.update(self.cfg.classification_languages)
        if beta_w != 0.0 or gamma_w != 0.0:
            self.text_languages_used.update(("L1", "L2", "L3"))

    # -- execution ------------------------------------------------------------

    def run_variant(self) -> list[PhaseReport]:
        for phase in VARIANT_PHASES[self.cfg.variant]:
            report = self.run_phase(phase)
            self.reports.append(report)
            if self.checkpoint_fn is not None:
                self.checkpoint_fn(f"phase{phase}", self.params)
        return self.reports

    def run_phase(self, phase: int) -> PhaseReport:
        if phase == 4:
            from .meta import run_meta_phase

            return run_meta_phase(self)
        cfg = self.cfg
        epochs = cfg.epochs_for(phase)
        if epochs == 0:
            return PhaseReport(phase=phase)
        start = time.perf_counter()
        weights = self.phase_weights(phase)
        self._record_provenance(phase, weights)
        report = PhaseReport(phase=phase)
        report.align_before = verify_alignment(self.params, self.enc, self.splits.val)

        rng = sub_rng(cfg.seed, f"phase{phase}")
        # Batch count depends only on the split size and the drop-singleton rule.
        n_train = len(self.splits.train)
        n_batches = (n_train + cfg.batch_size - 1) // cfg.batch_size
        if n_batches and n_train % cfg.batch_size == 1 and n_train > 1:
            n_batches -= 1
        total_steps = max(epochs * n_batches, 1)
        schedule = WarmupLinearSchedule(
            cfg.lr, min(cfg.warmup_steps, total_steps - 1), total_steps
        )
        optimizer = AdamW(
            self.phase_param_set(phase),
            lr=cfg.lr,
            betas=cfg.betas,
            eps=cfg.adam_eps,
            weight_decay=cfg.weight_decay,
        )

        bad_epochs = 0
        for epoch in range(epochs):
            sums = {"cls": 0.0, "trans": 0.0, "contrast": 0.0, "total": 0.0}
            last_lr = 0.0
            batches = triplet_batches(self.splits.train, cfg.batch_size, rng)
            for batch_idx in batches:
                comps = train_step(
                    self.params, optimizer, schedule, self.enc, batch_idx, weights, cfg, rng
                )
                last_lr = comps["lr"]
                for key in sums:
                    sums[key] += comps[key]
            record = {
                "phase": phase,
                "epoch": epoch,
                "losses": {k: v / max(len(batches), 1) for k, v in sums.items()},
                "lr": last_lr,
                "align": verify_alignment(self.params, self.enc, self.splits.val),
            }
            if phase in (2, 3):
                val_f1 = combined_macro_f1(self.params, self.enc, self.splits.val)
                record["val_macro_f1"] = val_f1
                if val_f1 > self.best_val_f1 + 1e-12:
                    self.best_val_f1 = val_f1
                    bad_epochs = 0
                    if self.checkpoint_fn is not None:
                        self.checkpoint_fn("best", self.params)
                else:
                    bad_epochs += 1
            report.epoch_logs.append(record)
            if self.logger is not None:
                self.logger.log(record)
            if (
                phase in (2, 3)
                and cfg.early_stopping
                and bad_epochs >= cfg.patience
            ):
                break
        report.align_after = verify_alignment(self.params, self.enc, self.splits.val)
        report.wall_s = time.perf_counter() - start
        return report
