"""Finite-difference verification suite shared by the CLI and the tests."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import networks as nw
from . import optics as op
from . import tensor as ft
from .tensor import Tensor
from .tensor.gradcheck import GradReport, check
from .training.loss import loss

Case = tuple[Callable[..., Tensor], list[np.ndarray]]


def primitive_cases(seed: int = 7) -> dict[str, Case]:
    """One small scalar-valued function per differentiable primitive, with inputs.

    Fixed weights are drawn once here so each function is deterministic.
    """
    r = np.random.default_rng(seed)
    w66, w66c, w912, w1212, w266 = (r.random((6, 6)), r.random((6, 6)) + 1j, r.random((9, 8)),
                                    r.random((12, 12)), r.random((2, 6, 6)))
    w66i = r.random((6, 6)) * 1j
    T = Tensor

    def x(*shape):
        return r.random(shape)

    return {
        "fft2": (lambda a: ft.tsum(ft.abs2(ft.fft2(a)) * T(w66)), [x(6, 6)]),
        "ifft2_complex": (lambda z: ft.tsum(ft.real(ft.ifft2(z)) * T(w66)), [x(6, 6) + 1j * x(6, 6)]),
        "spectral_crop": (lambda a: ft.tsum(ft.abs2(ft.spectral_crop(ft.fft2(a), 4, 3))), [x(6, 6)]),
        "pad": (lambda a: ft.tsum(ft.square(ft.pad_crop_spatial(a, 9, 8)) * T(w912)), [x(6, 6)]),
        "sum_pool": (lambda a: ft.tsum(ft.square(ft.sum_pool(a, 3))), [x(6, 6)]),
        "upsample": (lambda a: ft.tsum(ft.square(ft.nearest_upsample(a, 2)) * T(w1212)), [x(6, 6)]),
        "max_pool": (lambda a: ft.tsum(ft.square(ft.max_pool(a, 2))), [x(6, 6)]),
        "conv2d": (lambda a, w, b: ft.tsum(ft.square(ft.conv_direct(a, w, b))),
                   [x(2, 6, 6), x(3, 2, 3, 3), x(3)]),
        "conv3d": (lambda a, w: ft.tsum(ft.square(ft.conv_direct(a, w, dims=3))),
                   [x(1, 3, 6, 6), x(2, 1, 3, 3, 3)]),
        "instance_norm": (lambda a, g, b: ft.tsum(ft.instance_norm(a, g, b) * T(w266)),
                          [x(2, 6, 6), x(2), x(2)]),
        "leaky_relu": (lambda a: ft.tsum(ft.square(ft.leaky_relu(a, -0.01))), [x(6, 6) - 0.5]),
        "relu": (lambda a: ft.tsum(ft.square(ft.relu(a))), [x(6, 6) - 0.5]),
        "sqrt": (lambda a: ft.tsum(ft.sqrt(ft.add(ft.square(a), 1.0))), [x(6, 6)]),
        "div": (lambda a, b: ft.tsum(ft.div(a, ft.add(ft.square(b), 1.0))), [x(6, 6), x(6, 6)]),
        "exp_i": (lambda p: ft.tsum(ft.real(ft.mul(ft.exp_i(p), T(w66c)))), [x(6, 6)]),
        "complex_view": (lambda w: ft.tsum(ft.abs2(ft.mul(ft.complex_view(w), T(w66i)))), [x(6, 6, 2)]),
        "spectral_mix": (lambda w, a: ft.tsum(ft.abs2(ft.spectral_mix(ft.complex_view(w), ft.fft2(a)))),
                         [x(2, 3, 6, 6, 2), x(3, 6, 6)]),
        "median": (lambda a: ft.square(ft.lower_median(a)), [x(6, 6)]),
        "blur": (lambda a: ft.tsum(ft.square(ft.gaussian_blur2d(a, 1.2))), [x(2, 6, 6)]),
        "concat_stack": (lambda a, b: ft.tsum(ft.square(ft.concat([ft.stack([a, b]), ft.stack([b, a])]))),
                         [x(6, 6), x(6, 6)]),
        "roll": (lambda a: ft.tsum(ft.roll(a, (2, -1), (-2, -1)) * T(w66)), [x(6, 6)]),
        "channel_bias": (lambda a, b: ft.tsum(ft.square(ft.channel_bias(a, b))), [x(2, 6, 6), x(2)]),
        "shot_noise": (lambda m: ft.tsum(ft.square(op.apply_shot_noise(m, eps=w66 - 0.5))),
                       [x(6, 6) + 1.0]),
        "fourier_conv2d": (_fourier_case(r)),
    }


def _fourier_case(r: np.random.Generator) -> Case:
    from .fourier import FourierWeight, fourier_conv2d
    wt = r.random((2, 4, 4))

    def fn(a, s, b):
        return ft.tsum(ft.mul(fourier_conv2d(a, FourierWeight(s), b), Tensor(wt)))

    return fn, [r.standard_normal((2, 4, 4)), r.standard_normal((2, 2, 8, 8, 2)), r.standard_normal(2)]


def pipeline_case(seed: int = 7) -> tuple[Callable[..., Tensor], list[np.ndarray], list[str]]:
    """phi -> PSF -> image -> shot noise (fixed eps) -> per-plane FourierNet -> loss.

    Uses the 16 px mask / 8x8 camera / two-plane configuration.  Inputs are
    the mask and every network parameter of both plane replicas.
    """
    cfg = op.gradcheck_config()
    r = np.random.default_rng(seed)
    spec = nw.fouriernet2d(size=8, channels=2, kernel=3)
    nets = [nw.build_network(spec, [seed, k]) for k in range(cfg.num_planes)]
    v = r.random((cfg.num_planes, 8, 8))
    eps = r.standard_normal((8, 8))
    phi0 = op.init_phase_mask("pencils_hex", cfg).data + 0.1 * r.standard_normal((16, 16))
    names = ["phi"] + [f"r{k}/{n}" for k, net in enumerate(nets) for n, _ in net.parameters()]
    sizes = [len(list(net.parameters())) for net in nets]

    def fn(phi, *flat):
        mu = ft.scale(op.image_volume(op.compute_psf_stack(phi, cfg), Tensor(v)), cfg.photon_budget)
        c = op.apply_shot_noise(mu, eps=eps)
        planes, k0 = [], 0
        for net, n in zip(nets, sizes):
            params = dict(zip((name for name, _ in net.parameters()), flat[k0:k0 + n]))
            planes.append(nw.Network(spec, params).output_planes(c))
            k0 += n
        return loss(v, ft.concat(planes, axis=0))

    arrays = [phi0] + [t.data.copy() for net in nets for _, t in net.parameters()]
    return fn, arrays, names


def run_suite(seed: int = 7, tol: float = 1e-4, h: float = 1e-6,
              pipeline_coords: int | None = 64) -> list[tuple[str, GradReport]]:
    """All primitive checks plus the composite pipeline; reports in a fixed order."""
    out = []
    for name, (fn, arrays) in sorted(primitive_cases(seed).items()):
        out.extend((name, rep) for rep in check(fn, arrays, h=h, name=name))
    fn, arrays, names = pipeline_case(seed)
    reps = check(fn, arrays, h=h, max_coords=pipeline_coords, rng=np.random.default_rng(seed), name="pipeline")
    out.extend((f"pipeline:{n}", rep) for n, rep in zip(names, reps))
    return out
