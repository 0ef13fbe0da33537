"""Command-line entry point.

Commands operate on a run directory: `gen-corpus` writes corpus.jsonl,
vocab.json, splits.json and config.json into it; `train` reads those and
adds ckpt/ and logs/; `eval`, `verify-alignment` and `ablation` write
reports/. All randomness derives from one root seed (flag --seed, else the
config file, else $CLM_SEED, else 7).

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 IO,
5 checkpoint/corpus compatibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .ablation import ablation_csv, ablation_suite
from .checkpoint import JsonlLogger, load_checkpoint, save_checkpoint
from .config import RunConfig, merge_overrides
from .corpus import (
    EncodedCorpus,
    Splits,
    Vocab,
    build_vocab,
    generate_corpus,
    load_csv,
    read_jsonl,
    split_corpus,
    write_jsonl,
)
from .errors import (
    ClmetaError,
    CompatibilityError,
    NumericError,
    ValidationError,
)
from .evaluation import (
    alignment_cosines,
    evaluate_view,
    render_confusion,
    zero_shot_suite,
)
from .model import ModelParams
from .trainer import VARIANT_PHASES, Trainer

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
EXIT_COMPAT = 5


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        with Path(args.config).open(encoding="utf-8") as fh:
            file_obj = json.load(fh)
        config = RunConfig.from_json(file_obj)
        seed_from_file = file_obj.get("seed")
    else:
        config = RunConfig()
        seed_from_file = None

    if getattr(args, "seed", None) is not None:
        seed = int(args.seed)
    elif seed_from_file is not None:
        seed = int(seed_from_file)
    elif os.environ.get("CLM_SEED"):
        seed = int(os.environ["CLM_SEED"])
    else:
        seed = config.seed

    overrides: dict = {"seed": seed}
    if getattr(args, "variant", None):
        overrides["train.variant"] = args.variant
    if getattr(args, "classes", None) is not None:
        overrides["corpus.num_classes"] = int(args.classes)
    if getattr(args, "per_class", None) is not None:
        overrides["corpus.samples_per_class"] = int(args.per_class)
    if getattr(args, "min_count", None) is not None:
        overrides["corpus.min_count"] = int(args.min_count)
    return merge_overrides(config, overrides).resolved()


def _load_corpus_dir(out: Path, config: RunConfig):
    corpus_path = out / "corpus.jsonl"
    vocab_path = out / "vocab.json"
    splits_path = out / "splits.json"
    for p in (corpus_path, vocab_path, splits_path):
        if not p.exists():
            raise FileNotFoundError(f"missing {p}; run gen-corpus first")
    triplets, label_map = read_jsonl(corpus_path)
    vocab = Vocab.load(vocab_path)
    with splits_path.open(encoding="utf-8") as fh:
        splits = Splits.from_json(json.load(fh))
    num_classes = len(label_map)
    enc = EncodedCorpus.from_triplets(triplets, vocab, config.model.max_len, num_classes)
    return triplets, vocab, splits, enc, num_classes


def cmd_gen_corpus(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.corpus
    if spec.kind == "synthetic":
        syn = generate_corpus(spec.num_classes, spec.samples_per_class, config.seed)
        triplets, label_names = syn.triplets, syn.label_names
    elif spec.kind == "csv":
        triplets, mapping = load_csv(spec.path)
        label_names = [name for name, _ in sorted(mapping.items(), key=lambda kv: kv[1])]
    else:
        triplets, mapping = read_jsonl(spec.path)
        label_names = [name for name, _ in sorted(mapping.items(), key=lambda kv: kv[1])]

    write_jsonl(out / "corpus.jsonl", triplets, label_names)
    vocab = build_vocab(triplets, min_count=spec.min_count)
    vocab.save(out / "vocab.json")
    splits = split_corpus(triplets, config.split)
    with (out / "splits.json").open("w", encoding="utf-8") as fh:
        json.dump(splits.to_json(), fh, sort_keys=True)
        fh.write("\n")
    config.save(out / "config.json")

    counts = np.bincount([t.label for t in triplets], minlength=len(label_names))
    print(f"wrote {len(triplets)} triplets, vocab size {len(vocab)}, to {out}")
    for name, count in zip(label_names, counts):
        print(f"  {name}: {int(count)}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = Path(args.out)
    if args.resume:
        params, manifest = load_checkpoint(args.resume)
        explicit = args.config or args.variant or args.seed is not None
        config = _resolve_config(args) if explicit else RunConfig.from_json(manifest["run_config"])
        done_phase = int(manifest["phase"].removeprefix("phase"))
    else:
        config = _resolve_config(args)
        params = None
        done_phase = 0

    _, vocab, splits, enc, num_classes = _load_corpus_dir(out, config)
    vocab_sha = vocab.sha256()
    if params is None:
        model_config = config.model.to_model_config(len(vocab), num_classes)
        params = ModelParams.init(model_config, seed=config.seed)
    config.save(out / "config.json")
    logger = JsonlLogger(out / "logs" / "train.jsonl")

    def write_ckpt(tag: str, p: ModelParams) -> None:
        save_checkpoint(
            out / "ckpt" / tag, p, vocab_sha, config.seed, tag,
            extra_config=config.to_json(),
        )

    trainer = Trainer(
        params, config.train, enc, splits,
        meta_cfg=config.meta, logger=logger, checkpoint_fn=write_ckpt,
    )
    phases = [p for p in VARIANT_PHASES[config.train.variant] if p > done_phase]
    for phase in phases:
        report = trainer.run_phase(phase)
        trainer.reports.append(report)
        write_ckpt(f"phase{phase}", params)
        logger.log({"event": "phase_done", **report.to_json()}, wall_s=report.wall_s)
    write_ckpt("final", params)
    print(
        f"trained variant {config.train.variant} (phases {list(phases)}), "
        f"{params.num_params()} parameters, checkpoints in {out / 'ckpt'}"
    )
    return EXIT_OK


def _reports_dir(out: Path) -> Path:
    path = out / "reports"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_for_eval(args):
    out = Path(args.out)
    config = RunConfig.load(out / "config.json")
    _, vocab, splits, enc, _ = _load_corpus_dir(out, config)
    params, manifest = load_checkpoint(args.ckpt, expect_vocab_sha256=vocab.sha256())
    indices = getattr(splits, args.split)
    return out, config, enc, splits, indices, params


def cmd_eval(args) -> int:
    out, _, enc, _, indices, params = _load_for_eval(args)
    reports_dir = _reports_dir(out)
    if args.language:
        zero_shot = bool(args.zero_shot) or args.language in ("L2", "L3")
        report = evaluate_view(params, enc, indices, args.language, zero_shot=zero_shot)
        path = reports_dir / f"eval_{args.split}_{args.language}.json"
        with path.open("w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        grid = render_confusion(report.confusion)
        (reports_dir / f"confusion_{args.split}_{args.language}.txt").write_text(
            grid + "\n", encoding="utf-8"
        )
        print(
            f"{args.language} {args.split}: accuracy {report.accuracy:.4f}, "
            f"macro-F1 {report.macro_f1:.4f}"
            + (" (zero-shot)" if report.zero_shot else "")
        )
        return EXIT_OK
    suite = zero_shot_suite(params, enc, indices)
    payload = {
        "reports": {lang: r.to_json() for lang, r in suite["reports"].items()},
        "alignment": suite["alignment"],
    }
    path = reports_dir / f"zero_shot_{args.split}.json"
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for lang, report in suite["reports"].items():
        grid = render_confusion(report.confusion)
        (reports_dir / f"confusion_{args.split}_{lang}.txt").write_text(
            grid + "\n", encoding="utf-8"
        )
        print(
            f"{lang} {args.split}: accuracy {report.accuracy:.4f}, "
            f"macro-F1 {report.macro_f1:.4f}"
            + (" (zero-shot)" if report.zero_shot else "")
        )
    return EXIT_OK


def cmd_verify_alignment(args) -> int:
    out, _, enc, _, indices, params = _load_for_eval(args)
    if len(indices) == 0:
        raise ValidationError(f"split {args.split!r} is empty")
    cosines = alignment_cosines(params, enc, indices)
    path = _reports_dir(out) / f"alignment_{args.split}.json"
    with path.open("w", encoding="utf-8") as fh:
        json.dump(cosines, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"mean alignment cosine over {args.split}: {cosines['mean']:.6f}")
    for key in ("L1-L2", "L1-L3", "L2-L3"):
        print(f"  {key}: {cosines[key]:.6f}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    out = Path(args.out)
    config = _resolve_config(args)
    if (out / "config.json").exists() and not getattr(args, "config", None):
        config = RunConfig.load(out / "config.json")
        if getattr(args, "seed", None) is not None:
            config = merge_overrides(config, {"seed": int(args.seed)}).resolved()
    _, vocab, splits, enc, num_classes = _load_corpus_dir(out, config)
    model_config = config.model.to_model_config(len(vocab), num_classes)
    results = ablation_suite(
        enc, splits, model_config, config.train, config.meta
    )
    reports_dir = _reports_dir(out)
    (reports_dir / "ablation.csv").write_text(ablation_csv(results), encoding="utf-8")
    with (reports_dir / "ablation.json").open("w", encoding="utf-8") as fh:
        json.dump([r.to_json() for r in results], fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(ablation_csv(results), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clmeta",
        description="Cross-lingual multi-task training with meta-learning, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_ckpt: bool = False) -> None:
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON config file")
        if needs_ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint manifest (.json)")
            p.add_argument(
                "--split", default="test", choices=("train", "val", "test")
            )

    p = sub.add_parser("gen-corpus", help="write corpus.jsonl, vocab.json, splits.json")
    common(p)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--per-class", type=int, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("train", help="run the configured variant's phases")
    common(p)
    p.add_argument("--variant", choices=sorted(VARIANT_PHASES), default=None)
    p.add_argument("--resume", default=None, help="checkpoint manifest to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="per-language evaluation reports")
    common(p, needs_ckpt=True)
    p.add_argument("--language", choices=("L1", "L2", "L3"), default=None)
    p.add_argument("--zero-shot", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify-alignment", help="mean aligned-pair cosine per language pair")
    common(p, needs_ckpt=True)
    p.set_defaults(fn=cmd_verify_alignment)

    p = sub.add_parser("ablation", help="train and compare variants V1-V4")
    common(p)
    p.set_defaults(fn=cmd_ablation)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CompatibilityError as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ClmetaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
