"""High-pass-weighted normalised MSE."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .. import tensor as ft
from ..tensor import Tensor

HighPass = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.1
    highpass_sigma_px: float = 2.0
    eps_norm: float = 1e-12

    def __post_init__(self):
        if self.beta < 0 or self.highpass_sigma_px <= 0 or self.eps_norm <= 0:
            raise ValueError(f"invalid loss config {self}")

    def to_dict(self) -> dict:
        return asdict(self)


def high_pass(v: Tensor, sigma: float = 2.0) -> Tensor:
    """v minus its Gaussian blur (per plane, truncated at 4 sigma)."""
    v = ft.as_tensor(v)
    return ft.sub(v, ft.gaussian_blur2d(v, sigma, truncate=4.0))


def _hp(cfg: LossConfig, hp: HighPass | None) -> HighPass:
    return hp if hp is not None else (lambda t: high_pass(t, cfg.highpass_sigma_px))


def normalizers(v, cfg: LossConfig = LossConfig(), hp: HighPass | None = None) -> tuple[float, float]:
    """(E[H(v)^2], E[v^2]) for a target volume, floored at eps_norm."""
    v = ft.as_tensor(v)
    with ft.no_grad():
        hv = _hp(cfg, hp)(Tensor(v.data)).data
    return max(float(np.mean(hv ** 2)), cfg.eps_norm), max(float(np.mean(v.data ** 2)), cfg.eps_norm)


def loss_terms(v, v_hat: Tensor, cfg: LossConfig = LossConfig(), hp: HighPass | None = None,
               norms: tuple[float, float] | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """(total, l_hnmse, l_nmse); total = l_hnmse + beta * l_nmse.

    ``norms`` lets a chunk of planes share normalisers computed over a
    larger reconstructed set; by default they come from ``v`` itself.
    """
    v = ft.as_tensor(v)
    v_hat = ft.as_tensor(v_hat)
    if v.shape != v_hat.shape:
        raise ValueError(f"target {v.shape} and reconstruction {v_hat.shape} differ in shape")
    mu_h, mu_v = norms if norms is not None else normalizers(v, cfg, hp)
    h = _hp(cfg, hp)
    diff = ft.sub(v, v_hat)
    l_h = ft.scale(ft.mean(ft.square(h(diff))), 1.0 / mu_h)  # H is linear
    l_n = ft.scale(ft.mean(ft.square(diff)), 1.0 / mu_v)
    return ft.add(l_h, ft.scale(l_n, cfg.beta)), l_h, l_n


def loss(v, v_hat: Tensor, cfg: LossConfig = LossConfig(), hp: HighPass | None = None) -> Tensor:
    return loss_terms(v, v_hat, cfg, hp)[0]
