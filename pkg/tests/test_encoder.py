from __future__ import annotations

import numpy as np
import pytest

from clmeta.corpus import EncodedExample
from clmeta.encoder import EncoderConfig, embed, encode_batch, encode_sequence
from clmeta.errors import RangeError, ValidationError
from clmeta.model import ModelConfig, ModelParams
from clmeta.tensor import Tensor, backward, sum_all

from .gradcheck import assert_grads_match


def micro_config(num_layers=1, vocab=20, max_len=6, d=8, heads=2, ff=16, dropout=0.0):
    return ModelConfig(
        encoder=EncoderConfig(
            vocab_size=vocab,
            max_len=max_len,
            embed_dim=d,
            num_layers=num_layers,
            num_heads=heads,
            ff_dim=ff,
            dropout=dropout,
        ),
        num_classes=3,
        pool_hidden=8,
        proj_hidden=8,
        proj_dim=4,
    )


def _example(ids, n=None):
    ids = np.asarray(ids, dtype=np.int64)
    mask = ids != 0
    return EncodedExample(ids, mask, label=0, language="L1")


def test_encoder_config_validation():
    with pytest.raises(ValidationError):
        EncoderConfig(vocab_size=10, embed_dim=10, num_heads=3)
    with pytest.raises(ValidationError):
        EncoderConfig(vocab_size=10, dropout=1.0)


def test_embed_with_zero_position_table_is_token_lookup():
    cfg = micro_config()
    params = ModelParams.init(cfg, seed=1)
    params["embed.pos"].data[...] = 0.0
    ids = np.array([3, 7, 3])
    out = embed(params, cfg.encoder, ids, np.array([0, 1, 2]))
    np.testing.assert_array_equal(out.data, params["embed.token"].data[ids])


def test_embed_identical_tokens_differ_by_position_rows():
    cfg = micro_config()
    params = ModelParams.init(cfg, seed=2)
    out = embed(params, cfg.encoder, np.array([5, 5]), np.array([1, 3]))
    pos = params["embed.pos"].data
    np.testing.assert_allclose(out.data[0] - out.data[1], pos[1] - pos[3], atol=1e-12)


def test_embed_gradient_counts_occurrences():
    cfg = micro_config()
    params = ModelParams.init(cfg, seed=3)
    tok = params["embed.token"]
    ids = np.array([4, 4, 9])

    def f():
        return sum_all(embed(params, cfg.encoder, ids, np.array([0, 1, 2])))

    tok.grad = None
    backward(f())
    counts = np.bincount(ids, minlength=cfg.encoder.vocab_size)
    np.testing.assert_allclose(tok.grad.sum(axis=1), counts * cfg.encoder.embed_dim)
    assert_grads_match(f, {"token": tok})


def test_embed_range_errors():
    cfg = micro_config()
    params = ModelParams.init(cfg, seed=4)
    with pytest.raises(RangeError):
        embed(params, cfg.encoder, np.array([99]), np.array([0]))
    with pytest.raises(RangeError):
        embed(params, cfg.encoder, np.array([1]), np.array([99]))


def test_zero_layer_encoder_is_embedding_passthrough():
    cfg = micro_config(num_layers=0)
    params = ModelParams.init(cfg, seed=5)
    ex = _example([1, 4, 5, 2, 0, 0])
    out = encode_sequence(ex, params, cfg.encoder)
    expected = embed(params, cfg.encoder, ex.token_ids, np.arange(6))
    np.testing.assert_array_equal(out.hidden.data, expected.data)


def test_cls_is_row_zero_exactly():
    cfg = micro_config()
    params = ModelParams.init(cfg, seed=6)
    ex = _example([1, 4, 5, 2, 0, 0])
    out = encode_sequence(ex, params, cfg.encoder)
    np.testing.assert_array_equal(out.cls.data, out.hidden.data[0])


def test_padding_content_cannot_leak_into_unmasked_rows():
    cfg = micro_config(num_layers=2)
    params = ModelParams.init(cfg, seed=7)
    ids = np.array([1, 4, 5, 2, 0, 0])
    mask = ids != 0
    base = encode_batch(params, cfg.encoder, ids.reshape(1, -1), mask.reshape(1, -1)).data
    junk = ids.copy()
    junk[4:] = [9, 13]  # arbitrary ids in masked slots
    out = encode_batch(params, cfg.encoder, junk.reshape(1, -1), mask.reshape(1, -1)).data
    np.testing.assert_array_equal(out[:4], base[:4])


def test_eval_mode_is_deterministic_despite_dropout_config():
    cfg = micro_config(dropout=0.3)
    params = ModelParams.init(cfg, seed=8)
    ex = _example([1, 4, 5, 2, 0, 0])
    out1 = encode_sequence(ex, params, cfg.encoder, mode="eval")
    out2 = encode_sequence(ex, params, cfg.encoder, mode="eval")
    assert out1.hidden.data.tobytes() == out2.hidden.data.tobytes()


def test_train_mode_dropout_is_seeded_and_requires_rng():
    cfg = micro_config(dropout=0.3)
    params = ModelParams.init(cfg, seed=9)
    ex = _example([1, 4, 5, 2, 0, 0])
    a = encode_sequence(ex, params, cfg.encoder, "train", np.random.default_rng(5))
    b = encode_sequence(ex, params, cfg.encoder, "train", np.random.default_rng(5))
    assert a.hidden.data.tobytes() == b.hidden.data.tobytes()
    with pytest.raises(ValidationError):
        encode_sequence(ex, params, cfg.encoder, mode="train")
    with pytest.raises(ValidationError):
        encode_sequence(ex, params, cfg.encoder, mode="predict")


def test_attention_rows_sum_to_one_over_unmasked_keys():
    cfg = micro_config(num_layers=2, heads=2)
    params = ModelParams.init(cfg, seed=10)
    rng = np.random.default_rng(0)
    ids = rng.integers(4, 20, size=(3, 6))
    ids[:, 0] = 1
    mask = np.ones((3, 6), dtype=bool)
    mask[1, 4:] = False
    attn: list[np.ndarray] = []
    encode_batch(params, cfg.encoder, ids, mask, collect_attention=attn)
    assert len(attn) == 2
    for layer in attn:  # [S, H, n, n]
        sums = layer.sum(axis=3)
        np.testing.assert_allclose(sums, np.ones_like(sums), atol=1e-9)
        masked_cols = layer[1, :, :, 4:]
        assert (masked_cols == 0.0).all()


def test_full_encoder_gradcheck_micro():
    cfg = micro_config(num_layers=1)
    params = ModelParams.init(cfg, seed=11)
    ids = np.array([[1, 4, 5, 2, 0, 0], [1, 7, 9, 11, 2, 0]])
    mask = ids != 0
    encoder_params = {
        name: t for name, t in params.items() if name.startswith(("embed.", "layer"))
    }

    def f():
        h = encode_batch(params, cfg.encoder, ids, mask)
        return sum_all(h * h)

    assert_grads_match(f, encoder_params, rtol=1e-4)


def test_batch_and_single_sequence_agree():
    cfg = micro_config(num_layers=2)
    params = ModelParams.init(cfg, seed=12)
    ids = np.array([[1, 4, 5, 2, 0, 0], [1, 7, 9, 11, 2, 0]])
    mask = ids != 0
    batch = encode_batch(params, cfg.encoder, ids, mask).data.reshape(2, 6, -1)
    for i in range(2):
        single = encode_sequence(
            EncodedExample(ids[i], mask[i], 0, "L1"), params, cfg.encoder
        )
        np.testing.assert_allclose(single.hidden.data, batch[i], atol=1e-12)
