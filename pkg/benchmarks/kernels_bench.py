"""Benchmark the compiled kernel backend against the numpy reference.

Usage: python benchmarks/kernels_bench.py [--repeats 200]

Two sections: per-kernel microbenchmarks on training-representative
shapes, and an end-to-end joint-objective training-step comparison run in
subprocesses (backend selection happens at import time).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from clmeta.kernels import _ref, compiled_backend

ROWS, COLS = 1536, 64  # one joint batch: 16 triplets x 3 views x 32 tokens


def timed(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(5):
        fn()  # warm up
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def kernel_cases(rng):
    x = rng.normal(size=(ROWS, COLS))
    mask = rng.random((ROWS, COLS)) < 0.8
    mask[:, 0] = True
    y = _ref.softmax_rows(x, mask)
    g = rng.normal(size=(ROWS, COLS))
    gamma = rng.normal(size=COLS) + 1.0
    beta = rng.normal(size=COLS)
    _, xhat, rstd = _ref.layernorm(x, gamma, beta, 1e-5)
    tanh_y = np.tanh(x)
    ids = rng.integers(0, 500, size=ROWS).astype(np.int64)

    def adamw_case(impl):
        p = x.copy()
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        return lambda: impl.adamw_update(p, g, m, v, 3, 1e-3, 0.9, 0.999, 1e-8, 0.01)

    def scatter_case(impl):
        out = np.zeros((500, COLS))
        return lambda: impl.scatter_add_rows(out, ids, g)

    return [
        ("softmax_rows (masked)", lambda impl: lambda: impl.softmax_rows(x, mask)),
        ("softmax_rows_bwd", lambda impl: lambda: impl.softmax_rows_bwd(y, g, mask)),
        ("layernorm", lambda impl: lambda: impl.layernorm(x, gamma, beta, 1e-5)),
        (
            "layernorm_bwd",
            lambda impl: lambda: impl.layernorm_bwd(xhat, rstd, gamma, g),
        ),
        ("tanh_bwd", lambda impl: lambda: impl.tanh_bwd(tanh_y, g)),
        ("relu_bwd", lambda impl: lambda: impl.relu_bwd(x, g)),
        ("adamw_update", adamw_case),
        ("scatter_add_rows", scatter_case),
    ]


def bench_kernels(repeats: int) -> None:
    fused = compiled_backend()
    if fused is None:
        print("compiled backend not built; run `pip install -e .` first")
        return
    rng = np.random.default_rng(0)
    print(f"\nPer-kernel timings on [{ROWS} x {COLS}] float64 (best of {repeats}):\n")
    print(f"{'kernel':<24} {'numpy':>10} {'compiled':>10} {'speedup':>8} {'max|diff|':>11}")
    for name, make in kernel_cases(rng):
        t_ref = timed(make(_ref), repeats)
        t_fused = timed(make(fused), repeats)
        ref_fn, fused_fn = make(_ref), make(fused)
        diff = 0.0
        if name not in ("adamw_update", "scatter_add_rows"):
            diff = max_diff(ref_fn(), fused_fn())
        print(
            f"{name:<24} {t_ref * 1e6:>8.1f}us {t_fused * 1e6:>8.1f}us "
            f"{t_ref / t_fused:>7.2f}x {diff:>11.2e}"
        )


TRAIN_SNIPPET = """
import time
from clmeta.corpus import generate_corpus, build_vocab, split_corpus, SplitSpec, EncodedCorpus
from clmeta.config import ModelSettings
from clmeta.model import ModelParams
from clmeta.trainer import TrainConfig, Trainer
import clmeta.kernels as K

syn = generate_corpus(24, 50, seed=7)
vocab = build_vocab(syn.triplets)
splits = split_corpus(syn.triplets, SplitSpec(seed=7))
settings = ModelSettings()
enc = EncodedCorpus.from_triplets(syn.triplets, vocab, settings.max_len, 24)
params = ModelParams.init(settings.to_model_config(len(vocab), 24), seed=7)
cfg = TrainConfig(epochs_phase1=0, epochs_phase2=0, epochs_phase3=1, epochs_phase4=0,
                  seed=7, variant="V3", early_stopping=False)
trainer = Trainer(params, cfg, enc, splits)
t0 = time.perf_counter()
report = trainer.run_phase(3)
steps = 53
print(f"{K.BACKEND}: one multi-task epoch {time.perf_counter() - t0:.2f}s")
"""


def bench_end_to_end() -> None:
    print("\nEnd-to-end: one phase-3 epoch on the default micro config:\n")
    for backend in ("numpy", "compiled"):
        env = dict(os.environ, CLMETA_KERNELS=backend)
        proc = subprocess.run(
            [sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True
        )
        print(proc.stdout.strip() or proc.stderr.strip())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args()
    bench_kernels(args.repeats)
    if not args.skip_end_to_end:
        bench_end_to_end()


if __name__ == "__main__":
    main()
