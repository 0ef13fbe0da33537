"""AdamW over a named parameter collection, plus the warm-up/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericError, RangeError, ValidationError
from .tensor import Tensor


class AdamW:
    """Decoupled-weight-decay Adam updating an explicit named parameter set.

    Parameters outside the set are never touched, which is how training
    phases gate what they may modify. Moments live per parameter name.
    """

    def __init__(
        self,
        named_params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self._params = list(named_params.items())
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self._params}
        self._v = {name: np.zeros_like(p.data) for name, p in self._params}

    def named_params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def zero_grad(self) -> None:
        for _, p in self._params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        """Apply one update in place; lr overrides the stored rate for this step."""
        rate = self.lr if lr is None else float(lr)
        self.step_count += 1
        for name, p in self._params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient entry in parameter '{name}'")
            kernels.adamw_update(
                p.data,
                g,
                self._m[name],
                self._v[name],
                self.step_count,
                rate,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )


class SGD:
    """Plain gradient descent over a named parameter set (used by the meta outer loop)."""

    def __init__(self, named_params: dict[str, Tensor], lr: float):
        self._params = list(named_params.items())
        self.lr = float(lr)
        self.step_count = 0

    def zero_grad(self) -> None:
        for _, p in self._params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        rate = self.lr if lr is None else float(lr)
        self.step_count += 1
        for name, p in self._params:
            if p.grad is None:
                continue
            if not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient entry in parameter '{name}'")
            p.data -= rate * p.grad


@dataclass(frozen=True)
class WarmupLinearSchedule:
    """Linear ramp 0 -> base_lr over warmup_steps, then linear decay to 0 at total_steps."""

    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.warmup_steps < 0 or self.total_steps <= self.warmup_steps:
            raise ValidationError(
                f"schedule needs 0 <= warmup ({self.warmup_steps}) "
                f"< total ({self.total_steps})"
            )

    def lr_at(self, step: int) -> float:
        if step < 0 or step > self.total_steps:
            raise RangeError(f"step {step} outside [0, {self.total_steps}]")
        if self.warmup_steps > 0 and step <= self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        span = self.total_steps - self.warmup_steps
        return self.base_lr * (self.total_steps - step) / span


def global_grad_norm(named_params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in named_params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def clip_grad_norm(named_params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    norm = global_grad_norm(named_params)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for p in named_params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm
