from __future__ import annotations

import numpy as np
import pytest

from clmeta.errors import NumericError, RangeError, ValidationError
from clmeta.optim import AdamW, SGD, WarmupLinearSchedule, clip_grad_norm
from clmeta.tensor import Tensor


def _param(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def test_zero_grad_zero_decay_leaves_params_unchanged():
    p = _param([1.0, -2.0, 3.0])
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.zeros(3)
    before = p.data.copy()
    opt.step()
    np.testing.assert_array_equal(p.data, before)
    assert opt.step_count == 1


def test_single_adam_step_hand_value():
    # p=1, g=1, lr=0.1, wd=0: m_hat=1, v_hat=1 -> p ~ 0.9
    p = _param([1.0])
    opt = AdamW({"p": p}, lr=0.1, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
    p.grad = np.array([1.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9], atol=1e-7)


def test_decoupled_decay_is_exact_with_zero_gradient():
    p = _param([2.0, -4.0])
    lr, wd = 0.05, 0.01
    opt = AdamW({"p": p}, lr=lr, weight_decay=wd)
    p.grad = np.zeros(2)
    before = p.data.copy()
    opt.step()
    np.testing.assert_array_equal(p.data, before - lr * wd * before)


def test_nonfinite_gradient_aborts_and_names_parameter():
    p = _param([1.0])
    opt = AdamW({"pool.v": p}, lr=0.1)
    p.grad = np.array([np.nan])
    with pytest.raises(NumericError, match="pool.v"):
        opt.step()


def test_moments_match_parameter_shapes_and_step_advances():
    a, b = _param(np.zeros((3, 2))), _param(np.zeros(5))
    opt = AdamW({"a": a, "b": b}, lr=0.1)
    assert opt._m["a"].shape == (3, 2) and opt._v["b"].shape == (5,)
    for expected in (1, 2, 3):
        opt.step()
        assert opt.step_count == expected


def test_missing_grad_is_treated_as_zero_but_decay_applies():
    p = _param([1.0])
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
    opt.step()
    np.testing.assert_allclose(p.data, [1.0 - 0.1 * 0.5])


def test_sgd_step_and_skip_without_grad():
    p, q = _param([1.0]), _param([2.0])
    opt = SGD({"p": p, "q": q}, lr=0.5)
    p.grad = np.array([2.0])
    opt.step()
    np.testing.assert_array_equal(p.data, [0.0])
    np.testing.assert_array_equal(q.data, [2.0])


def test_clip_grad_norm_scales_to_max():
    p = _param([3.0, 4.0])
    p.grad = np.array([3.0, 4.0])
    norm = clip_grad_norm({"p": p}, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(np.linalg.norm(p.grad), 1.0)


def test_schedule_paper_scale_values():
    sched = WarmupLinearSchedule(base_lr=2e-5, warmup_steps=500, total_steps=2000)
    assert sched.lr_at(250) == pytest.approx(1e-5)
    assert sched.lr_at(500) == pytest.approx(2e-5)
    assert sched.lr_at(2000) == 0.0
    assert sched.lr_at(0) == 0.0


def test_schedule_is_piecewise_linear_and_continuous():
    sched = WarmupLinearSchedule(base_lr=1.0, warmup_steps=10, total_steps=50)
    xs = np.arange(51)
    ys = np.array([sched.lr_at(int(s)) for s in xs])
    np.testing.assert_allclose(ys[:11], xs[:11] / 10.0)
    np.testing.assert_allclose(ys[10:], (50 - xs[10:]) / 40.0)


def test_schedule_range_and_construction_errors():
    sched = WarmupLinearSchedule(base_lr=1.0, warmup_steps=5, total_steps=10)
    with pytest.raises(RangeError):
        sched.lr_at(11)
    with pytest.raises(RangeError):
        sched.lr_at(-1)
    with pytest.raises(ValidationError):
        WarmupLinearSchedule(base_lr=1.0, warmup_steps=10, total_steps=10)


def test_schedule_without_warmup_starts_at_base():
    sched = WarmupLinearSchedule(base_lr=4.0, warmup_steps=0, total_steps=8)
    assert sched.lr_at(0) == pytest.approx(4.0)
    assert sched.lr_at(8) == 0.0
