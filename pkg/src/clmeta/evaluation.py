"""Evaluation: confusion matrices, macro metrics, and per-language reports.

Metrics are computed from the confusion matrix alone, so every report can
be recomputed exactly from its own matrix. Zero-division convention: a
class with no predicted positives has precision 0 (and F1 0 if recall is
also 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import LANGS, EncodedCorpus
from .errors import InvalidInputError, LabelError
from .heads import cosine_rows
from .model import ModelParams, forward_batch
from .tensor import Tensor, no_grad

EVAL_CHUNK = 256


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[true, predicted]."""

    counts: np.ndarray

    @classmethod
    def from_pairs(cls, y_true, y_pred, num_classes: int) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.size and (y_true.min() < 0 or y_true.max() >= num_classes):
            raise LabelError(f"true label outside [0, {num_classes})")
        if y_pred.size and (y_pred.min() < 0 or y_pred.max() >= num_classes):
            raise LabelError(f"predicted label outside [0, {num_classes})")
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def class_support(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def metrics_from_confusion(counts: np.ndarray) -> dict:
    counts = np.asarray(counts, dtype=np.int64)
    total = counts.sum()
    if total <= 0:
        raise InvalidInputError("empty confusion matrix")
    diag = np.diag(counts).astype(np.float64)
    support = counts.sum(axis=1).astype(np.float64)
    predicted = counts.sum(axis=0).astype(np.float64)
    precision = _safe_div(diag, predicted)
    recall = _safe_div(diag, support)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    return {
        "accuracy": float(diag.sum() / total),
        "macro_precision": float(precision.mean()),
        "macro_recall": float(recall.mean()),
        "macro_f1": float(f1.mean()),
        "per_class": [
            {
                "precision": float(precision[c]),
                "recall": float(recall[c]),
                "f1": float(f1[c]),
                "support": int(support[c]),
            }
            for c in range(len(counts))
        ],
    }


def macro_f1(confusion: ConfusionMatrix | np.ndarray) -> float:
    counts = confusion.counts if isinstance(confusion, ConfusionMatrix) else confusion
    return metrics_from_confusion(counts)["macro_f1"]


@dataclass(frozen=True)
class EvalReport:
    language: str
    n: int
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list[dict]
    confusion: list[list[int]]
    zero_shot: bool = False

    @classmethod
    def from_confusion(
        cls, language: str, cm: ConfusionMatrix, zero_shot: bool = False
    ) -> "EvalReport":
        m = metrics_from_confusion(cm.counts)
        return cls(
            language=language,
            n=cm.total,
            accuracy=m["accuracy"],
            macro_precision=m["macro_precision"],
            macro_recall=m["macro_recall"],
            macro_f1=m["macro_f1"],
            per_class=m["per_class"],
            confusion=cm.counts.tolist(),
            zero_shot=zero_shot,
        )

    def to_json(self) -> dict:
        return {
            "language": self.language,
            "n": self.n,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "zero_shot": self.zero_shot,
        }


def predict_view(
    params: ModelParams, ids: np.ndarray, mask: np.ndarray, chunk: int = EVAL_CHUNK
) -> np.ndarray:
    """Argmax class predictions in eval mode, chunked over the batch."""
    preds = np.empty(len(ids), dtype=np.int64)
    with no_grad():
        for start in range(0, len(ids), chunk):
            out = forward_batch(
                params,
                ids[start : start + chunk],
                mask[start : start + chunk],
                want_probs=True,
                want_proj=False,
            )
            preds[start : start + chunk] = out.probs.data.argmax(axis=1)
    return preds


def evaluate_view(
    params: ModelParams,
    enc: EncodedCorpus,
    indices: np.ndarray,
    lang: str,
    zero_shot: bool = False,
) -> EvalReport:
    """Full report for one (language, split) view."""
    if len(indices) == 0:
        raise InvalidInputError("cannot evaluate an empty dataset view")
    ids, mask, labels = enc.view(indices, lang)
    if labels.max() >= enc.num_classes:
        raise LabelError(f"label {labels.max()} outside mapping of {enc.num_classes}")
    preds = predict_view(params, ids, mask)
    cm = ConfusionMatrix.from_pairs(labels, preds, enc.num_classes)
    return EvalReport.from_confusion(lang, cm, zero_shot=zero_shot)


def combined_macro_f1(
    params: ModelParams,
    enc: EncodedCorpus,
    indices: np.ndarray,
    langs: tuple[str, ...] = LANGS,
) -> float:
    """Macro-F1 over the union of several language views (validation metric)."""
    counts = np.zeros((enc.num_classes, enc.num_classes), dtype=np.int64)
    for lang in langs:
        ids, mask, labels = enc.view(indices, lang)
        preds = predict_view(params, ids, mask)
        counts += ConfusionMatrix.from_pairs(labels, preds, enc.num_classes).counts
    return macro_f1(counts)


def projection_rows(
    params: ModelParams,
    enc: EncodedCorpus,
    indices: np.ndarray,
    lang: str,
    space: str = "projection",
    chunk: int = EVAL_CHUNK,
) -> np.ndarray:
    """Aligned-space vectors (projection or pooled) for one language view."""
    ids, mask, _ = enc.view(indices, lang)
    rows = []
    with no_grad():
        for start in range(0, len(ids), chunk):
            out = forward_batch(
                params,
                ids[start : start + chunk],
                mask[start : start + chunk],
                want_probs=False,
                want_proj=(space == "projection"),
            )
            rows.append(out.proj.data if space == "projection" else out.pooled.data)
    return np.concatenate(rows)


def alignment_cosines(
    params: ModelParams,
    enc: EncodedCorpus,
    indices: np.ndarray,
    pairs: tuple[tuple[str, str], ...] = (("L1", "L2"), ("L1", "L3"), ("L2", "L3")),
) -> dict[str, float]:
    """Mean aligned-pair cosine per language pair, plus the overall mean."""
    if len(indices) == 0:
        raise InvalidInputError("alignment needs at least one pair")
    vecs = {
        lang: projection_rows(params, enc, indices, lang)
        for lang in sorted({l for pair in pairs for l in pair})
    }
    out: dict[str, float] = {}
    for a, b in pairs:
        cos = cosine_rows(Tensor(vecs[a]), Tensor(vecs[b]))
        out[f"{a}-{b}"] = float(cos.mean())
    out["mean"] = float(np.mean([out[f"{a}-{b}"] for a, b in pairs]))
    return out


def zero_shot_suite(
    params: ModelParams, enc: EncodedCorpus, test_indices: np.ndarray
) -> dict:
    """Supervised L1 report plus zero-shot L2/L3 reports on the same triplets."""
    reports = {
        "L1": evaluate_view(params, enc, test_indices, "L1", zero_shot=False),
        "L2": evaluate_view(params, enc, test_indices, "L2", zero_shot=True),
        "L3": evaluate_view(params, enc, test_indices, "L3", zero_shot=True),
    }
    return {
        "reports": reports,
        "alignment": alignment_cosines(params, enc, test_indices),
    }


def render_confusion(counts: np.ndarray | list[list[int]]) -> str:
    """Aligned text grid; rows are true classes, columns predictions."""
    counts = np.asarray(counts)
    width = max(len(str(counts.max())), len(str(len(counts) - 1))) + 1
    header = " " * (width + 2) + "".join(f"{c:>{width}}" for c in range(len(counts)))
    lines = [header]
    for r, row in enumerate(counts):
        lines.append(f"{r:>{width}} |" + "".join(f"{v:>{width}}" for v in row))
    return "\n".join(lines)
