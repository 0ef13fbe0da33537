"""Aligned trilingual classification data.

A synthetic corpus generator produces exact-translation triplets in three
surrogate languages built from disjoint lexicons, so the zero-shot
condition (test-language surface forms never seen with labels) holds by
construction while ground-truth alignment stays exact. Loaders for the
CSV/JSONL wire formats, a whitespace tokenizer with a deterministic
vocabulary, and stratified triplet-level splits round out the module.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LabelError, RowError, SchemaError, ValidationError
from .rng import sub_rng

LANGS = ("L1", "L2", "L3")
LANG_INDEX = {lang: i for i, lang in enumerate(LANGS)}
CSV_COLUMNS = ("text", "hindi", "bengali", "label")

PAD, CLS, SEP, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")


@dataclass(frozen=True)
class ExampleTriplet:
    """One meaning rendered in three languages, with a shared class label."""

    text_a: str
    text_b: str
    text_c: str
    label: int

    def text(self, lang: str) -> str:
        return (self.text_a, self.text_b, self.text_c)[LANG_INDEX[lang]]


@dataclass(frozen=True)
class EncodedExample:
    token_ids: np.ndarray
    attention_mask: np.ndarray
    label: int
    language: str


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

_SYLLABLES = {
    "L1": ("ba", "de", "ki", "lo", "mu", "na", "re", "si", "ta", "vu"),
    "L2": ("cha", "dri", "fen", "gul", "hor", "jas", "kle", "mon", "pra", "stu"),
    "L3": ("alb", "bex", "cor", "dun", "erz", "fik", "gam", "hul", "ix", "jor"),
}


def _pseudo_words(lang: str, count: int, rng: np.random.Generator) -> list[str]:
    syllables = _SYLLABLES[lang]
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        k = int(rng.integers(2, 4))
        w = "".join(syllables[int(i)] for i in rng.integers(0, len(syllables), size=k))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class SyntheticCorpus:
    triplets: list[ExampleTriplet]
    label_names: list[str]
    lexicon_l2: dict[str, str]
    lexicon_l3: dict[str, str]


def generate_corpus(
    num_classes: int,
    samples_per_class: int,
    seed: int,
    class_tokens_per_class: int = 6,
    filler_tokens: int = 40,
) -> SyntheticCorpus:
    """Balanced aligned triplets over surrogate languages.

    Each class owns a small set of content words; a sample mixes a few of
    them with shared fillers. The L2/L3 texts are produced by injective
    word-for-word lexicons whose surface forms are disjoint across
    languages, so every triplet is an exact translation.
    """
    if num_classes < 2:
        raise ValidationError(f"need at least 2 classes, got {num_classes}")
    if samples_per_class < 2:
        raise ValidationError(f"need at least 2 samples per class, got {samples_per_class}")

    rng = sub_rng(seed, "corpus")
    total_words = num_classes * class_tokens_per_class + filler_tokens
    words = {lang: _pseudo_words(lang, total_words, rng) for lang in LANGS}
    all_surfaces = [w for lang in LANGS for w in words[lang]]
    if len(set(all_surfaces)) != len(all_surfaces):
        raise ValidationError("surrogate lexicons collided; change the seed")

    lex_l2 = dict(zip(words["L1"], words["L2"]))
    lex_l3 = dict(zip(words["L1"], words["L3"]))
    fillers = words["L1"][num_classes * class_tokens_per_class :]

    triplets = []
    for cls_idx in range(num_classes):
        offset = cls_idx * class_tokens_per_class
        class_words = words["L1"][offset : offset + class_tokens_per_class]
        for _ in range(samples_per_class):
            n_class = int(rng.integers(2, 5))
            n_fill = int(rng.integers(3, 9))
            sample = [
                class_words[int(i)]
                for i in rng.integers(0, len(class_words), size=n_class)
            ] + [fillers[int(i)] for i in rng.integers(0, len(fillers), size=n_fill)]
            order = rng.permutation(len(sample))
            tokens = [sample[int(i)] for i in order]
            text_a = " ".join(tokens)
            text_b = " ".join(lex_l2[t] for t in tokens)
            text_c = " ".join(lex_l3[t] for t in tokens)
            triplets.append(ExampleTriplet(text_a, text_b, text_c, cls_idx))

    label_names = [f"class{c:02d}" for c in range(num_classes)]
    return SyntheticCorpus(triplets, label_names, lex_l2, lex_l3)


# ---------------------------------------------------------------------------
# Wire formats
# ---------------------------------------------------------------------------


def _row_to_triplet(
    row: dict[str, str],
    row_num: int,
    label_to_idx: dict[str, int],
    fixed_mapping: bool,
) -> ExampleTriplet:
    texts = []
    for col in CSV_COLUMNS[:3]:
        cell = (row.get(col) or "").strip()
        if not cell:
            raise RowError(f"row {row_num}: empty '{col}' cell")
        texts.append(cell)
    label = (row.get("label") or "").strip()
    if not label:
        raise RowError(f"row {row_num}: empty 'label' cell")
    if label not in label_to_idx:
        if fixed_mapping:
            raise LabelError(f"row {row_num}: label '{label}' not in the fixed mapping")
        label_to_idx[label] = len(label_to_idx)
    return ExampleTriplet(texts[0], texts[1], texts[2], label_to_idx[label])


def load_csv(
    path: str | Path, label_map: dict[str, int] | None = None
) -> tuple[list[ExampleTriplet], dict[str, int]]:
    """Read `text,hindi,bengali,label` rows; labels map by first appearance
    unless a fixed label_map is supplied."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header {header}")
        mapping = dict(label_map) if label_map is not None else {}
        fixed = label_map is not None
        triplets = [
            _row_to_triplet(row, i, mapping, fixed) for i, row in enumerate(reader, start=2)
        ]
    return triplets, mapping


def write_csv(path: str | Path, triplets: list[ExampleTriplet], label_names: list[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for t in triplets:
            writer.writerow([t.text_a, t.text_b, t.text_c, label_names[t.label]])


def write_jsonl(path: str | Path, triplets: list[ExampleTriplet], label_names: list[str]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(
                json.dumps(
                    {
                        "text": t.text_a,
                        "hindi": t.text_b,
                        "bengali": t.text_c,
                        "label": label_names[t.label],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_jsonl(
    path: str | Path, label_map: dict[str, int] | None = None
) -> tuple[list[ExampleTriplet], dict[str, int]]:
    mapping = dict(label_map) if label_map is not None else {}
    fixed = label_map is not None
    triplets = []
    with Path(path).open(encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            triplets.append(_row_to_triplet(row, i, mapping, fixed))
    return triplets, mapping


# ---------------------------------------------------------------------------
# Vocabulary and encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    token_to_id: dict[str, int]
    id_to_token: dict[int, str] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "id_to_token", {i: t for t, i in self.token_to_id.items()}
        )

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def sha256(self) -> str:
        canon = json.dumps(self.token_to_id, sort_keys=True).encode("utf-8")
        return hashlib.sha256(canon).hexdigest()

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.token_to_id, fh, sort_keys=True, indent=0)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        with Path(path).open(encoding="utf-8") as fh:
            return cls({str(k): int(v) for k, v in json.load(fh).items()})


def build_vocab(triplets: list[ExampleTriplet], min_count: int = 1) -> Vocab:
    """Whitespace tokens with count >= min_count, ids in (count desc, token asc)
    order after the reserved ids; everything else goes through [UNK]."""
    if not triplets:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for t in triplets:
        for text in (t.text_a, t.text_b, t.text_c):
            counts.update(text.split())
    table = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    for tok in kept:
        table[tok] = len(table)
    return Vocab(table)


def encode(
    text: str, vocab: Vocab, max_len: int, label: int = -1, language: str = "L1"
) -> EncodedExample:
    """[CLS] + token ids (truncated to max_len - 2) + [SEP], padded with [PAD]."""
    if max_len < 3:
        raise ValidationError(f"max_len must be >= 3, got {max_len}")
    body = [vocab.id_of(tok) for tok in text.split()][: max_len - 2]
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[0] = CLS
    ids[1 : 1 + len(body)] = body
    ids[1 + len(body)] = SEP
    mask = ids != PAD
    return EncodedExample(ids, mask, label, language)


def decode(ids: np.ndarray, vocab: Vocab) -> str:
    words = [
        vocab.id_to_token[int(i)] for i in ids if int(i) not in (PAD, CLS, SEP)
    ]
    return " ".join(words)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 7
    stratified: bool = True

    def __post_init__(self):
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"split fractions sum to {total}, expected 1")
        if min(self.train_fraction, self.val_fraction, self.test_fraction) < 0:
            raise ValidationError("split fractions must be non-negative")


@dataclass(frozen=True)
class Splits:
    """Disjoint triplet-level index sets; a triplet never straddles splits."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def sha256(self) -> str:
        canon = json.dumps(
            {k: sorted(int(i) for i in getattr(self, k)) for k in ("train", "val", "test")},
            sort_keys=True,
        ).encode("utf-8")
        return hashlib.sha256(canon).hexdigest()

    def to_json(self) -> dict:
        return {
            "train": [int(i) for i in self.train],
            "val": [int(i) for i in self.val],
            "test": [int(i) for i in self.test],
            "sha256": self.sha256(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Splits":
        return cls(
            np.asarray(obj["train"], dtype=np.int64),
            np.asarray(obj["val"], dtype=np.int64),
            np.asarray(obj["test"], dtype=np.int64),
        )


def _allocate(
    n: int,
    fractions: tuple[float, float, float],
    assigned: list[int] | None = None,
    processed: int = 0,
) -> list[int]:
    """Largest-remainder allocation of n items across the three splits.

    When running totals are supplied, remainders go to the split furthest
    below its global quota, so per-class ties do not systematically favour
    one split and the overall sizes track the fractions exactly.
    """
    base = [int(np.floor(f * n)) for f in fractions]
    remainder = n - sum(base)
    prior = assigned or [0, 0, 0]
    deficit = [
        fractions[i] * (processed + n) - (prior[i] + base[i]) for i in range(3)
    ]
    order = sorted(range(3), key=lambda i: (-deficit[i], i))
    for i in order[:remainder]:
        base[i] += 1
    return base


def split_corpus(triplets: list[ExampleTriplet], spec: SplitSpec) -> Splits:
    fractions = (spec.train_fraction, spec.val_fraction, spec.test_fraction)
    rng = sub_rng(spec.seed, "split")
    n = len(triplets)
    if spec.stratified:
        by_class: dict[int, list[int]] = {}
        for idx, t in enumerate(triplets):
            by_class.setdefault(t.label, []).append(idx)
        parts: list[list[int]] = [[], [], []]
        assigned = [0, 0, 0]
        processed = 0
        for label in sorted(by_class):
            members = np.asarray(by_class[label], dtype=np.int64)
            if len(members) < 3:
                warnings.warn(
                    f"class {label} has only {len(members)} samples; "
                    "best-effort stratification",
                    stacklevel=2,
                )
            members = members[rng.permutation(len(members))]
            counts = _allocate(len(members), fractions, assigned, processed)
            processed += len(members)
            start = 0
            for i, (part, count) in enumerate(zip(parts, counts)):
                part.extend(int(j) for j in members[start : start + count])
                assigned[i] += count
                start += count
        train, val, test = (np.asarray(p, dtype=np.int64) for p in parts)
    else:
        perm = rng.permutation(n)
        counts = _allocate(n, fractions)
        train = perm[: counts[0]].astype(np.int64)
        val = perm[counts[0] : counts[0] + counts[1]].astype(np.int64)
        test = perm[counts[0] + counts[1] :].astype(np.int64)
    return Splits(train, val, test)


# ---------------------------------------------------------------------------
# Pre-encoded corpus used by training and evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodedCorpus:
    """All triplets encoded once per language into dense id/mask arrays."""

    ids: np.ndarray  # [N, 3, max_len] int64
    mask: np.ndarray  # [N, 3, max_len] bool
    labels: np.ndarray  # [N] int64
    num_classes: int
    max_len: int
    vocab_sha256: str

    @classmethod
    def from_triplets(
        cls, triplets: list[ExampleTriplet], vocab: Vocab, max_len: int, num_classes: int
    ) -> "EncodedCorpus":
        n = len(triplets)
        ids = np.zeros((n, 3, max_len), dtype=np.int64)
        mask = np.zeros((n, 3, max_len), dtype=bool)
        labels = np.zeros(n, dtype=np.int64)
        for i, t in enumerate(triplets):
            labels[i] = t.label
            for j, lang in enumerate(LANGS):
                enc = encode(t.text(lang), vocab, max_len, label=t.label, language=lang)
                ids[i, j] = enc.token_ids
                mask[i, j] = enc.attention_mask
        return cls(ids, mask, labels, num_classes, max_len, vocab.sha256())

    def view(self, indices: np.ndarray, lang: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ids, mask, labels) of one language over the given triplet indices."""
        j = LANG_INDEX[lang]
        return self.ids[indices, j], self.mask[indices, j], self.labels[indices]
