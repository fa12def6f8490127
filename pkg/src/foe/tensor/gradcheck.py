"""Central finite-difference checks against the reverse-mode tape."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Tape, Tensor, backward


@dataclass
class GradReport:
    name: str
    rel_error: float
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return bool(np.isfinite(self.rel_error) and self.rel_error < tol)


def analytic_grads(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(np.array(a, copy=True), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn(*leaves)
    backward(loss, tape)
    return [np.zeros_like(l.data) if l.grad is None else l.grad for l in leaves]


def _evaluate(fn, arrays) -> float:
    return float(fn(*[Tensor(a) for a in arrays]).data)


def check(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-6,
          max_coords: int | None = None, rng: np.random.Generator | None = None,
          name: str = "") -> list[GradReport]:
    """Compare tape gradients of scalar ``fn`` with central differences.

    Every coordinate is probed unless ``max_coords`` caps it, in which case a
    seeded random subset is used.  Complex inputs are probed along the real
    and imaginary axes separately.  The error per input is
    ``||g_ad - g_fd|| / max(||g_ad||, ||g_fd||)`` over the probed coordinates.
    """
    arrays = [np.array(a, dtype=np.result_type(a, np.float64), copy=True) for a in arrays]
    rng = rng or np.random.default_rng(0)
    grads = analytic_grads(fn, arrays)
    reports = []
    for k, (arr, g_ad) in enumerate(zip(arrays, grads)):
        coords = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            coords = np.sort(rng.choice(arr.size, max_coords, replace=False))
        parts = [1.0, 1j] if np.iscomplexobj(arr) else [1.0]
        ad, fd = [], []
        flat_g = g_ad.reshape(-1)
        for c in coords:
            for unit in parts:
                work = [a.copy() for a in arrays]
                flat = work[k].reshape(-1)
                flat[c] = arr.reshape(-1)[c] + h * unit
                up = _evaluate(fn, work)
                flat[c] = arr.reshape(-1)[c] - h * unit
                down = _evaluate(fn, work)
                fd.append((up - down) / (2 * h))
                ad.append(flat_g[c].real if unit == 1.0 else flat_g[c].imag)
        ad_v, fd_v = np.array(ad), np.array(fd)
        denom = max(np.linalg.norm(ad_v), np.linalg.norm(fd_v))
        err = 0.0 if denom == 0 else float(np.linalg.norm(ad_v - fd_v) / denom)
        reports.append(GradReport(f"{name}[{k}]" if name else f"input{k}", err, len(ad)))
    return reports
