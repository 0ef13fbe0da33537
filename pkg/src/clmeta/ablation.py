"""Ablation protocol: train variants V1-V4 from identical seeds and report
zero-shot metrics on the held-out language, with the F1 delta against the
previous variant."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

from .corpus import EncodedCorpus, Splits
from .errors import ClmetaError
from .evaluation import EvalReport, evaluate_view
from .meta import MetaConfig
from .model import ModelConfig, ModelParams
from .trainer import TrainConfig, Trainer

VARIANTS = ("V1", "V2", "V3", "V4")
CSV_HEADER = "variant,accuracy,precision,recall,f1,delta_f1"


@dataclass(frozen=True)
class VariantResult:
    variant: str
    report: EvalReport
    delta_f1: float | None
    split_sha256: str
    label_languages_used: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "report": self.report.to_json(),
            "delta_f1": self.delta_f1,
            "split_sha256": self.split_sha256,
            "label_languages_used": list(self.label_languages_used),
        }


def ablation_suite(
    enc: EncodedCorpus,
    splits: Splits,
    model_config: ModelConfig,
    train_config: TrainConfig,
    meta_config: MetaConfig | None = None,
    target_language: str = "L3",
    logger=None,
) -> list[VariantResult]:
    """Run every variant from the same seed on the same splits.

    A variant that fails to train is skipped with a warning; the others
    continue. The delta column compares against the previous successful
    variant (absent for the first row).
    """
    results: list[VariantResult] = []
    split_hash = splits.sha256()
    prev_f1: float | None = None
    for variant in VARIANTS:
        cfg = replace(train_config, variant=variant)
        params = ModelParams.init(model_config, seed=cfg.seed)
        trainer = Trainer(params, cfg, enc, splits, meta_cfg=meta_config, logger=logger)
        try:
            trainer.run_variant()
        except ClmetaError as exc:
            warnings.warn(f"variant {variant} failed: {exc}", stacklevel=2)
            continue
        report = evaluate_view(params, enc, splits.test, target_language, zero_shot=True)
        delta = None if prev_f1 is None else report.macro_f1 - prev_f1
        prev_f1 = report.macro_f1
        results.append(
            VariantResult(
                variant=variant,
                report=report,
                delta_f1=delta,
                split_sha256=split_hash,
                label_languages_used=tuple(sorted(trainer.label_languages_used)),
            )
        )
    return results


def ablation_csv(results: list[VariantResult]) -> str:
    """Table with one row per variant; the first row's delta field is empty."""
    lines = [CSV_HEADER]
    for r in results:
        delta = "" if r.delta_f1 is None else f"{r.delta_f1:.6f}"
        lines.append(
            f"{r.variant},{r.report.accuracy:.6f},{r.report.macro_precision:.6f},"
            f"{r.report.macro_recall:.6f},{r.report.macro_f1:.6f},{delta}"
        )
    return "\n".join(lines) + "\n"
