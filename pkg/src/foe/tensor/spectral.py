"""FFT-family primitives on the last two axes (orthonormal scaling)."""

from __future__ import annotations

import numpy as np

from .core import Tensor, as_tensor, record
from . import ops

_AXES = (-2, -1)


def _check_2d(t: Tensor, name: str) -> None:
    if t.ndim < 2:
        raise ValueError(f"{name} needs at least two axes, got shape {t.shape}")


def fft2(t: Tensor, inverse: bool = False) -> Tensor:
    """Unitary 2-D DFT over the last two axes; ``inverse`` selects the inverse."""
    t = as_tensor(t)
    _check_2d(t, "fft2")
    fwd, adj = (np.fft.ifft2, np.fft.fft2) if inverse else (np.fft.fft2, np.fft.ifft2)
    out = fwd(t.data, axes=_AXES, norm="ortho")
    return record("ifft2" if inverse else "fft2", out, (t,),
                  lambda g: (adj(g, axes=_AXES, norm="ortho"),))


def ifft2(t: Tensor) -> Tensor:
    return fft2(t, inverse=True)


def fftshift2(t: Tensor) -> Tensor:
    h, w = t.shape[-2:]
    return ops.roll(t, (h // 2, w // 2), _AXES)


def ifftshift2(t: Tensor) -> Tensor:
    h, w = t.shape[-2:]
    return ops.roll(t, (-(h // 2), -(w // 2)), _AXES)


def _center_start(big: int, small: int) -> int:
    return big // 2 - small // 2


def spectral_crop(spectrum: Tensor, out_h: int, out_w: int) -> Tensor:
    """Keep the ``out_h x out_w`` band around DC of an unshifted spectrum.

    The result is rescaled by sqrt(out/in) so that the inverse transform is
    the mean-preserving band-limited resampling of the original signal.
    """
    spectrum = as_tensor(spectrum)
    _check_2d(spectrum, "spectral_crop")
    h, w = spectrum.shape[-2:]
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise ValueError(f"cannot crop spectrum {h}x{w} to {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return spectrum
    centered = fftshift2(spectrum)
    band = ops.crop(centered, (_center_start(h, out_h), _center_start(w, out_w)), (out_h, out_w))
    return ops.scale(ifftshift2(band), float(np.sqrt(out_h * out_w / (h * w))))


def pad_crop_spatial(t: Tensor, target_h: int, target_w: int, mode: str = "zero_pad") -> Tensor:
    """Centered zero padding or centered cropping of the last two axes.

    Both directions use the same anchor (``big // 2 - small // 2``) so a pad
    followed by the matching crop is the identity.
    """
    t = as_tensor(t)
    h, w = t.shape[-2:]
    if mode == "zero_pad":
        if target_h < h or target_w < w:
            raise ValueError(f"zero_pad target {target_h}x{target_w} smaller than {h}x{w}")
        top, left = _center_start(target_h, h), _center_start(target_w, w)
        return ops.pad(t, [(top, target_h - h - top), (left, target_w - w - left)])
    if mode == "center_crop":
        if target_h > h or target_w > w:
            raise ValueError(f"crop {target_h}x{target_w} larger than input {h}x{w}")
        return ops.crop(t, (_center_start(h, target_h), _center_start(w, target_w)),
                        (target_h, target_w))
    raise ValueError(f"unknown mode {mode!r}")


def spectral_mix(weight: Tensor, spectrum: Tensor) -> Tensor:
    """Per output channel sum over input channels of ``weight[o, c] * spectrum[c]``.

    weight: [C_out, C_in, H, W]; spectrum: [C_in, H, W] -> [C_out, H, W].
    """
    if weight.ndim != 4 or spectrum.ndim != 3 or weight.shape[1:] != spectrum.shape:
        raise ValueError(f"spectral_mix shape mismatch: {weight.shape} vs {spectrum.shape}")
    wd, xd = weight.data, spectrum.data
    out = np.einsum("ochw,chw->ohw", wd, xd)

    def back(g):
        gw = g[:, None] * np.conj(xd)[None]
        gx = np.einsum("ochw,ohw->chw", np.conj(wd), g)
        return gw, gx

    return record("spectral_mix", out, (weight, spectrum), back)
