from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

import clmeta.kernels as kernels
from clmeta.kernels import _ref

fused = kernels.compiled_backend()

pytestmark = pytest.mark.skipif(
    fused is None, reason="compiled kernel extension not built"
)


def rand(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


@pytest.mark.parametrize("use_mask", [False, True])
def test_softmax_rows_backends_agree(use_mask):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(17, 9)) * 5
    mask = None
    if use_mask:
        mask = rng.random((17, 9)) < 0.7
        mask[:, 0] = True
    a = _ref.softmax_rows(x, mask)
    b = fused.softmax_rows(x, mask)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    if use_mask:
        assert (b[~mask] == 0.0).all()


def test_softmax_rows_bwd_backends_agree():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(11, 6))
    mask = rng.random((11, 6)) < 0.8
    mask[:, 2] = True
    y = _ref.softmax_rows(x, mask)
    g = rng.normal(size=(11, 6))
    np.testing.assert_allclose(
        _ref.softmax_rows_bwd(y, g, mask),
        fused.softmax_rows_bwd(y, g, mask),
        rtol=1e-12,
        atol=1e-15,
    )


def test_layernorm_backends_agree():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(13, 8)) * 3
    gamma = rng.normal(size=8) + 1.0
    beta = rng.normal(size=8)
    ya, xha, ra = _ref.layernorm(x, gamma, beta, 1e-5)
    yb, xhb, rb = fused.layernorm(x, gamma, beta, 1e-5)
    np.testing.assert_allclose(ya, yb, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(xha, xhb, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(ra, rb, rtol=1e-12)
    g = rng.normal(size=(13, 8))
    for a, b in zip(_ref.layernorm_bwd(xha, ra, gamma, g), fused.layernorm_bwd(xhb, rb, gamma, g)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)


def test_elementwise_backward_kernels_bitwise():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(9, 14))
    g = rng.normal(size=(9, 14))
    y = np.tanh(x)
    assert _ref.tanh_bwd(y, g).tobytes() == fused.tanh_bwd(y, g).tobytes()
    assert _ref.relu_bwd(x, g).tobytes() == fused.relu_bwd(x, g).tobytes()


def test_adamw_update_bitwise():
    rng = np.random.default_rng(4)
    shape = (7, 5)
    pa = rng.normal(size=shape)
    pb = pa.copy()
    g = rng.normal(size=shape)
    ma, va = np.zeros(shape), np.zeros(shape)
    mb, vb = np.zeros(shape), np.zeros(shape)
    for t in range(1, 6):
        _ref.adamw_update(pa, g, ma, va, t, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        fused.adamw_update(pb, g, mb, vb, t, 1e-3, 0.9, 0.999, 1e-8, 0.01)
    assert pa.tobytes() == pb.tobytes()
    assert ma.tobytes() == mb.tobytes()
    assert va.tobytes() == vb.tobytes()


def test_scatter_add_rows_bitwise_with_duplicates():
    rng = np.random.default_rng(5)
    ids = np.array([0, 2, 2, 5, 0, 2], dtype=np.int64)
    g = rng.normal(size=(6, 4))
    outa = np.zeros((6, 4))
    outb = np.zeros((6, 4))
    _ref.scatter_add_rows(outa, ids, g)
    fused.scatter_add_rows(outb, ids, g)
    assert outa.tobytes() == outb.tobytes()


def test_backend_env_var_forces_selection():
    code = "import clmeta.kernels as K; print(K.BACKEND)"
    for forced, expected in (("numpy", "numpy"), ("compiled", "compiled")):
        env = dict(os.environ, CLMETA_KERNELS=forced)
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        assert out.stdout.strip() == expected, out.stderr


def test_training_agrees_across_backends_numerically():
    # Same tiny training run under each backend; trajectories may differ in
    # the last ulp (exp/pairwise sums) but must agree to 1e-9.
    code = """
import numpy as np
from clmeta.corpus import generate_corpus, build_vocab, split_corpus, SplitSpec, EncodedCorpus
from clmeta.encoder import EncoderConfig
from clmeta.model import ModelConfig, ModelParams
from clmeta.trainer import TrainConfig, Trainer

syn = generate_corpus(3, 6, seed=1)
vocab = build_vocab(syn.triplets)
splits = split_corpus(syn.triplets, SplitSpec(0.7, 0.15, 0.15, seed=1))
enc = EncodedCorpus.from_triplets(syn.triplets, vocab, 16, 3)
cfg = ModelConfig(EncoderConfig(vocab_size=len(vocab), max_len=16, embed_dim=16,
                                num_layers=1, num_heads=2, ff_dim=32, dropout=0.1),
                  num_classes=3, pool_hidden=16, proj_hidden=16, proj_dim=8)
params = ModelParams.init(cfg, seed=1)
tr = Trainer(params, TrainConfig(epochs_phase1=1, epochs_phase2=1, epochs_phase3=1,
                                 epochs_phase4=0, batch_size=4, lr=1e-3, warmup_steps=2,
                                 seed=1, variant="V3", early_stopping=False),
             enc, splits)
reports = tr.run_variant()
losses = [rec["losses"]["total"] for r in reports for rec in r.epoch_logs]
print(repr(losses))
"""
    outputs = {}
    for backend in ("numpy", "compiled"):
        env = dict(os.environ, CLMETA_KERNELS=backend)
        proc = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        assert proc.returncode == 0, proc.stderr
        outputs[backend] = eval(proc.stdout.strip())
    np.testing.assert_allclose(outputs["numpy"], outputs["compiled"], rtol=1e-9)
