"""Fourier-domain global convolution layers and input scaling."""

from __future__ import annotations

import time
from typing import Callable, Sequence

import numpy as np

from . import tensor as ft
from .tensor import Tensor


class FourierWeight:
    """Complex global-kernel spectrum stored as a real [C_out, C_in, 2H, 2W, 2] tensor.

    Storing re/im as two real channels keeps gradients real; the layer reads
    the complex view each forward pass.
    """

    def __init__(self, storage: Tensor):
        if storage.ndim != 5 or storage.shape[-1] != 2:
            raise ValueError(f"FourierWeight storage must be [Co, Ci, 2H, 2W, 2], got {storage.shape}")
        self.storage = storage

    @classmethod
    def init(cls, c_out: int, c_in: int, h: int, w: int, rng: np.random.Generator,
             requires_grad: bool = True) -> "FourierWeight":
        """Spectrum of a spatial kernel drawn from N(0, 2 / (c_in * h * w)) on the 2H x 2W grid."""
        k = rng.normal(0.0, np.sqrt(2.0 / (c_in * h * w)), (c_out, c_in, 2 * h, 2 * w))
        spec = np.fft.fft2(k)  # unnormalised, so the equivalent kernel is k itself
        return cls.from_complex(spec, requires_grad)

    @classmethod
    def from_complex(cls, spec: np.ndarray, requires_grad: bool = True) -> "FourierWeight":
        store = np.stack([spec.real, spec.imag], axis=-1).astype(np.float64)
        return cls(Tensor(store, requires_grad=requires_grad))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.storage.shape[:4]

    def spectrum(self) -> Tensor:
        return ft.complex_view(self.storage)

    def numpy(self) -> np.ndarray:
        return self.storage.data[..., 0] + 1j * self.storage.data[..., 1]

    def equivalent_kernel(self) -> np.ndarray:
        """Complex spatial kernel on the 2H x 2W grid whose circular convolution the layer applies."""
        spec = self.numpy()
        return np.fft.ifft2(spec)


def _as_spectrum(w) -> Tensor:
    return w.spectrum() if isinstance(w, FourierWeight) else ft.as_tensor(w)


def fourier_conv2d(x: Tensor, w, bias: Tensor | None = None) -> Tensor:
    """Global convolution Re{F^-1{W . F{pad(x)}}}, cropped back to H x W.

    x: [C_in, H, W]; w: FourierWeight or complex tensor [C_out, C_in, 2H, 2W].
    """
    x = ft.as_tensor(x)
    spec_w = _as_spectrum(w)
    if x.ndim != 3:
        raise ValueError(f"fourier_conv2d expects [C, H, W], got {x.shape}")
    c, h, wd = x.shape
    if spec_w.shape[1:] != (c, 2 * h, 2 * wd):
        raise ValueError(f"weight extent {spec_w.shape} does not match padded input ({c}, {2 * h}, {2 * wd})")
    spectrum = ft.fft2(ft.pad_crop_spatial(x, 2 * h, 2 * wd, "zero_pad"))
    y = ft.real(ft.ifft2(ft.spectral_mix(spec_w, spectrum)))
    y = ft.pad_crop_spatial(y, h, wd, "center_crop")
    return y if bias is None else ft.channel_bias(y, bias)


def check_crop_factors(factors: Sequence[int], h: int, w: int) -> None:
    if not factors or any(int(f) != f or f < 1 for f in factors):
        raise ValueError(f"crop factors must be positive integers, got {factors}")
    if any(b <= a for a, b in zip(factors, factors[1:])):
        raise ValueError(f"crop factors must be strictly increasing, got {factors}")
    for f in factors:
        if (2 * h) % f or (2 * w) % f or h % f or w % f:
            raise ValueError(f"crop factor {f} does not divide padded extent {2 * h}x{2 * w}")


def multiscale_fourier_conv(x: Tensor, weights: Sequence, crop_factors: Sequence[int],
                            biases: Sequence[Tensor | None] | None = None) -> list[Tensor]:
    """Band-limited feature maps from one shared spectrum F{pad(x)}.

    Level i crops the spectrum to (2H/f_i, 2W/f_i), multiplies by W_i and
    returns the centre (H/f_i, W/f_i) of the real inverse transform.
    """
    x = ft.as_tensor(x)
    c, h, w = x.shape
    check_crop_factors(crop_factors, h, w)
    if len(weights) != len(crop_factors):
        raise ValueError("one weight per crop factor required")
    biases = biases or [None] * len(weights)
    spectrum = ft.fft2(ft.pad_crop_spatial(x, 2 * h, 2 * w, "zero_pad"))
    outs = []
    for wi, f, bi in zip(weights, crop_factors, biases):
        ph, pw = 2 * h // f, 2 * w // f
        spec_w = _as_spectrum(wi)
        if spec_w.shape[1:] != (c, ph, pw):
            raise ValueError(f"level weight {spec_w.shape} does not match cropped extent ({c}, {ph}, {pw})")
        band = ft.spectral_crop(spectrum, ph, pw)
        y = ft.real(ft.ifft2(ft.spectral_mix(spec_w, band)))
        y = ft.pad_crop_spatial(y, h // f, w // f, "center_crop")
        outs.append(y if bi is None else ft.channel_bias(y, bi))
    return outs


def median_scale(c: Tensor, scale_factor: float) -> Tensor:
    """m = lower_median(c) / scale_factor, falling back to the mean, then to 1."""
    c = ft.as_tensor(c)
    med = ft.lower_median(c)
    if med.item() > 0:
        return ft.scale(med, 1.0 / scale_factor)
    avg = ft.mean(c)
    if avg.item() > 0:
        return ft.scale(avg, 1.0 / scale_factor)
    return Tensor(np.float64(1.0))


def input_scaled_forward(net: Callable[[Tensor], Tensor], c: Tensor, scale_factor: float = 0.01) -> Tensor:
    """m * net(c / m): the wrapped network becomes positively homogeneous in c."""
    c = ft.as_tensor(c)
    m = median_scale(c, scale_factor)
    return ft.mul(net(ft.div(c, m)), m)


def reshape_2d3d(t: Tensor, depth: int) -> Tensor:
    """[C*D, H, W] -> [C, D, H, W] without reordering data."""
    t = ft.as_tensor(t)
    if t.ndim != 3:
        raise ValueError(f"reshape_2d3d expects [C*D, H, W], got {t.shape}")
    cd, h, w = t.shape
    if depth < 1 or cd % depth:
        raise ValueError(f"{cd} channels not divisible by depth {depth}")
    return ft.reshape(t, (cd // depth, depth, h, w))


def reshape_3d2d(t: Tensor) -> Tensor:
    c, d, h, w = t.shape
    return ft.reshape(t, (c * d, h, w))


def benchmark(size: int = 256, repeats: int = 5, direct_repeats: int = 1, seed: int = 0) -> dict:
    """Time one global convolution at ``size`` x ``size`` both ways.

    The direct path needs an odd kernel, so it uses the largest odd extent
    not exceeding ``size`` (255 at 256).  Each path reports its best time.
    """
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, size, size)))
    weight = FourierWeight.init(1, 1, size, size, rng, requires_grad=False)
    k = size if size % 2 else size - 1
    kernel = Tensor(rng.standard_normal((1, 1, k, k)))

    def timed(fn, n, warm=True):
        if warm:
            fn()
        best = np.inf
        for _ in range(n):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    with ft.no_grad():
        t_fourier = timed(lambda: fourier_conv2d(x, weight), repeats)
        # the direct path is seconds long and has nothing to warm beyond numpy itself
        t_direct = timed(lambda: ft.conv_direct(x, kernel), direct_repeats, warm=False)
    return {"size": size, "direct_kernel": k, "fourier_ms": 1e3 * t_fourier,
            "direct_ms": 1e3 * t_direct, "ratio": t_direct / t_fourier}
