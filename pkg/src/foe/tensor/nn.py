"""Neural-network primitives: direct convolution, pooling, normalization, blur."""

from __future__ import annotations

import itertools

import numpy as np
from scipy import ndimage

from .core import Tensor, as_tensor, record


def conv_direct(x: Tensor, w: Tensor, bias: Tensor | None = None, dims: int = 2) -> Tensor:
    """Cross-correlation with zero "same" padding.

    x: [C_in, *S] with len(S) == dims; w: [C_out, C_in, *K] with odd K;
    bias: [C_out] or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    if x.ndim != dims + 1 or w.ndim != dims + 2:
        raise ValueError(f"conv_direct{dims}d: bad ranks x{x.shape} w{w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"kernel expects {w.shape[1]} input channels, got {x.shape[0]}")
    ks = w.shape[2:]
    if any(k % 2 == 0 for k in ks):
        raise ValueError(f"kernel extents must be odd, got {ks}")
    spatial = x.shape[1:]
    half = [k // 2 for k in ks]
    xp = np.pad(x.data, [(0, 0)] + [(h, h) for h in half])
    c_out, c_in = w.shape[:2]
    n = int(np.prod(spatial))
    wd = w.data
    out = np.zeros((c_out, n), dtype=np.result_type(xp, wd))
    windows = []
    for off in itertools.product(*(range(k) for k in ks)):
        sl = (slice(None),) + tuple(slice(o, o + s) for o, s in zip(off, spatial))
        windows.append((off, sl))
        out += wd[(slice(None), slice(None)) + off] @ xp[sl].reshape(c_in, n)
    out = out.reshape((c_out,) + spatial)
    inputs = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape((-1,) + (1,) * dims)
        inputs.append(bias)

    def back(g):
        gflat = g.reshape(c_out, n)
        gxp = np.zeros_like(xp, dtype=np.result_type(xp, g))
        gw = np.zeros_like(wd, dtype=np.result_type(wd, g))
        for off, sl in windows:
            wk = wd[(slice(None), slice(None)) + off]
            gxp[sl] += (wk.T @ gflat).reshape((c_in,) + spatial)
            gw[(slice(None), slice(None)) + off] = gflat @ xp[sl].reshape(c_in, n).T
        inner = (slice(None),) + tuple(slice(h, h + s) for h, s in zip(half, spatial))
        grads = [gxp[inner], gw]
        if bias is not None:
            grads.append(gflat.sum(axis=1))
        return grads

    return record(f"conv{dims}d", out, inputs, back)


def _check_factor(t: Tensor, factor: int) -> None:
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")


def sum_pool(t: Tensor, factor: int) -> Tensor:
    """Sum each factor x factor block of the last two axes (total preserved)."""
    t = as_tensor(t)
    _check_factor(t, factor)
    h, w = t.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"extent {h}x{w} not divisible by {factor}")
    lead = t.shape[:-2]
    blocks = t.data.reshape(lead + (h // factor, factor, w // factor, factor))
    out = blocks.sum(axis=(-3, -1))

    def back(g):
        return (np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1),)

    return record("sum_pool", out, (t,), back)


def nearest_upsample(t: Tensor, factor: int) -> Tensor:
    """Replicate each value ``factor`` times along each of the last two axes."""
    t = as_tensor(t)
    _check_factor(t, factor)
    out = np.repeat(np.repeat(t.data, factor, axis=-2), factor, axis=-1)
    lead = t.shape[:-2]
    h, w = t.shape[-2:]

    def back(g):
        return (g.reshape(lead + (h, factor, w, factor)).sum(axis=(-3, -1)),)

    return record("nearest_upsample", out, (t,), back)


def pool_resample(t: Tensor, factor: int, mode: str = "sum_pool") -> Tensor:
    if mode == "sum_pool":
        return sum_pool(t, factor)
    if mode == "nearest_upsample":
        return nearest_upsample(t, factor)
    raise ValueError(f"unknown mode {mode!r}")


def max_pool(t: Tensor, factor: int = 2) -> Tensor:
    """Block maximum over the last two axes; ties resolved to the first element."""
    t = as_tensor(t)
    _check_factor(t, factor)
    h, w = t.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"extent {h}x{w} not divisible by {factor}")
    lead = t.shape[:-2]
    hb, wb = h // factor, w // factor
    blocks = t.data.reshape(lead + (hb, factor, wb, factor))
    blocks = np.moveaxis(blocks, -3, -2).reshape(lead + (hb, wb, factor * factor))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(lead + (hb, wb, factor, factor))
        return (np.moveaxis(gb, -2, -3).reshape(t.shape),)

    return record("max_pool", out, (t,), back)


def instance_norm(t: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
                  eps: float = 1e-5) -> Tensor:
    """Per-channel standardization over all non-leading axes, then affine."""
    t = as_tensor(t)
    c = t.shape[0]
    extra = (1,) * (t.ndim - 1)
    axes = tuple(range(1, t.ndim))
    x = t.data
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = np.ones(c) if gamma is None else gamma.data
    bd = np.zeros(c) if beta is None else beta.data
    out = gd.reshape((-1,) + extra) * xhat + bd.reshape((-1,) + extra)
    inputs = [t] + [p for p in (gamma, beta) if p is not None]

    def back(g):
        gxhat = g * gd.reshape((-1,) + extra)
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=axes))
        if beta is not None:
            grads.append(g.sum(axis=axes))
        return grads

    return record("instance_norm", out, inputs, back)


def gaussian_blur2d(t: Tensor, sigma: float, truncate: float = 4.0) -> Tensor:
    """Gaussian blur over the last two axes with zero boundary.

    The kernel is symmetric and the boundary is zero, so the operator is
    self-adjoint and the backward pass is the same blur.
    """
    t = as_tensor(t)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    sig = (0.0,) * (t.ndim - 2) + (sigma, sigma)

    def blur(a):
        if np.iscomplexobj(a):
            return blur(a.real) + 1j * blur(a.imag)
        return ndimage.gaussian_filter(a, sig, mode="constant", cval=0.0, truncate=truncate)

    return record("gaussian_blur2d", blur(t.data), (t,), lambda g: (blur(g),))
