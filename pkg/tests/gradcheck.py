"""Central finite-difference oracle used across the gradient tests.

The oracle only ever calls the forward path: it perturbs raw parameter
buffers and rebuilds the loss, so it stays independent of the backward
implementation it is checking.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from clmeta.tensor import Tensor, backward


def finite_diff_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f / d t by central differences, elementwise over t.data."""
    out = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.1) -> float:
    """Elementwise |a - n| / max(|a|, |n|, floor).

    Entries below the floor are effectively held to an absolute tolerance
    of floor * rtol (1e-5 at the defaults), which is what the O(h^2)
    truncation of a central difference at h = 1e-5 supports in float64.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def assert_grads_match(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor] | dict[str, Tensor],
    rtol: float = 1e-4,
    h: float = 1e-5,
    floor: float = 0.1,
) -> None:
    """Analytic gradients of f() match central finite differences."""
    named = (
        list(tensors.items())
        if isinstance(tensors, dict)
        else [(f"arg{i}", t) for i, t in enumerate(tensors)]
    )
    for _, t in named:
        t.grad = None
    backward(f())
    for name, t in named:
        assert t.grad is not None, f"no gradient reached {name}"
        numeric = finite_diff_grad(f, t, h=h)
        err = max_rel_error(t.grad, numeric, floor=floor)
        assert err <= rtol, f"gradient mismatch for {name}: rel error {err:.3e} > {rtol}"
