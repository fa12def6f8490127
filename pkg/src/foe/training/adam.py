"""Adam with bias correction and a NaN fail-fast."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError
from ..tensor import Tensor


@dataclass
class AdamSlot:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(p: np.ndarray, g: np.ndarray, slot: AdamSlot | None, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[np.ndarray, AdamSlot]:
    """One update; returns the new parameter array and moment state."""
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient")
    if slot is None:
        slot = AdamSlot(np.zeros_like(p), np.zeros_like(p))
    t = slot.t + 1
    m = beta1 * slot.m + (1 - beta1) * g
    v = beta2 * slot.v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(new)):
        raise NumericalError("non-finite parameter after update")
    return new, AdamSlot(m, v, t)


@dataclass
class Adam:
    """Adam over a named parameter set; parameters without a gradient are skipped."""

    params: dict[str, Tensor]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    slots: dict[str, AdamSlot] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid Adam hyperparameters")

    def step(self) -> None:
        # validate every gradient before touching any parameter
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient for {name}")
        for name, p in self.params.items():
            if p.grad is None:
                continue
            p.data, self.slots[name] = adam_step(p.data, p.grad, self.slots.get(name), self.lr,
                                                 self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
