"""Pure-numpy kernel implementations.

This is the reference backend: the compiled extension in ``_fused.pyx``
computes the same quantities with the same per-element operation order.
All arrays are C-contiguous float64; masks are bool with True = keep.
"""

from __future__ import annotations

import numpy as np


def softmax_rows(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Row-wise stable softmax; masked entries are exactly 0 in the output.

    The max is taken over unmasked entries only, and exp() never sees a
    masked value, so arbitrarily large junk in masked slots cannot overflow.
    Callers guarantee at least one unmasked entry per row.
    """
    if mask is None:
        m = x.max(axis=1, keepdims=True)
        e = np.exp(x - m)
        return e / e.sum(axis=1, keepdims=True)
    kept = np.where(mask, x, -np.inf)
    m = kept.max(axis=1, keepdims=True)
    e = np.exp(np.where(mask, x - m, 0.0)) * mask
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(y: np.ndarray, g: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """dx = y * (g - sum_j g_j y_j); zero at masked entries since y is zero there."""
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


def layernorm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise layer norm. Returns (y, xhat, rstd) with rstd of shape [R, 1]."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd


def layernorm_bwd(
    xhat: np.ndarray, rstd: np.ndarray, gamma: np.ndarray, g: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of layernorm given saved xhat/rstd. Returns (dx, dgamma, dbeta)."""
    dxhat = g * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd * (dxhat - m1 - xhat * m2)
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    return dx, dgamma, dbeta


def tanh_bwd(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (1.0 - y * y)


def relu_bwd(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (x > 0.0)


def adamw_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
) -> None:
    """One decoupled-weight-decay Adam step, in place on p, m, v.

    The decay term uses the pre-update parameter value, so with g == 0 the
    parameter shrinks by exactly lr * weight_decay * p.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p)


def scatter_add_rows(out: np.ndarray, ids: np.ndarray, g: np.ndarray) -> None:
    """out[ids[r]] += g[r] for every r, accumulating over duplicate ids."""
    np.add.at(out, ids, g)
