"""Elementwise, reduction and shape primitives."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Tensor, as_tensor, record


def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0


def _unscalar(g: np.ndarray, t: Tensor) -> np.ndarray:
    return g if not _is_scalar(t) or g.ndim == 0 else np.asarray(g.sum())


def _check_binary(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ValueError(f"{name}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting)")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unscalar(g, a), _unscalar(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unscalar(g, a), _unscalar(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return _unscalar(g * np.conj(bd), a), _unscalar(g * np.conj(ad), b)

    return record("mul", ad * bd, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        ga = g / np.conj(bd)
        gb = -g * np.conj(out / bd)
        return _unscalar(ga, a), _unscalar(gb, b)

    return record("div", out, (a, b), back)


def scale(t: Tensor, factor: float) -> Tensor:
    return record("scale", t.data * factor, (t,), lambda g: (g * np.conj(factor),))


def square(t: Tensor) -> Tensor:
    d = t.data
    return record("square", d * d, (t,), lambda g: (2.0 * g * np.conj(d),))


def sqrt(t: Tensor) -> Tensor:
    d = t.data
    if not t.is_complex and np.any(d < 0):
        raise ValueError("sqrt of negative value")
    out = np.sqrt(d)

    def back(g):
        with np.errstate(divide="ignore"):
            return (g / (2.0 * out),)

    return record("sqrt", out, (t,), back)


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)
    return record("exp", out, (t,), lambda g: (g * np.conj(out),))


def relu(t: Tensor) -> Tensor:
    """max(x, 0); derivative taken as 1 at x == 0.  NaN propagates."""
    d = t.data
    mask = d >= 0
    return record("relu", np.where(d < 0, 0.0, d), (t,), lambda g: (g * mask,))


rectify_max0 = relu


def leaky_relu(t: Tensor, slope: float = 0.01) -> Tensor:
    """x for x >= 0, else ``|slope| * x``."""
    k = abs(slope)
    d = t.data
    mask = d >= 0
    return record("leaky_relu", np.where(d < 0, k * d, d), (t,),
                  lambda g: (np.where(mask, g, k * g),))


def elementwise(t, kind: str, other=None, slope: float = 0.01, factor: float = 1.0) -> Tensor:
    """Dispatch by name; mirrors the table-driven layer descriptions."""
    if kind == "relu":
        return relu(t)
    if kind == "leaky_relu":
        return leaky_relu(t, slope)
    if kind == "rectify_max0":
        return rectify_max0(t)
    if kind == "sqrt":
        return sqrt(t)
    if kind == "add":
        return add(t, other)
    if kind == "mul":
        return mul(t, other)
    if kind == "scale":
        return scale(t, factor)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# complex helpers

def real(t: Tensor) -> Tensor:
    return record("real", t.data.real.copy(), (t,), lambda g: (g.astype(np.complex128),))


def abs2(t: Tensor) -> Tensor:
    """|z|^2 for complex or real input."""
    d = t.data
    out = (d.real ** 2 + d.imag ** 2) if t.is_complex else d * d
    return record("abs2", out, (t,), lambda g: (2.0 * g * d,))


def exp_i(t: Tensor) -> Tensor:
    """Unit phasor exp(i * phi) of a real tensor."""
    if t.is_complex:
        raise TypeError("exp_i expects a real phase")
    out = np.exp(1j * t.data)
    return record("exp_i", out, (t,), lambda g: (np.imag(np.conj(out) * g),))


def complex_view(t: Tensor) -> Tensor:
    """Interpret a real tensor with trailing extent 2 as (re, im) pairs."""
    if t.is_complex or t.shape[-1] != 2:
        raise ValueError("complex_view expects a real tensor with trailing extent 2")
    out = t.data[..., 0] + 1j * t.data[..., 1]

    def back(g):
        g = np.asarray(g, dtype=np.complex128)
        return (np.stack([g.real, g.imag], axis=-1),)

    return record("complex_view", out, (t,), back)


# reductions

def sum(t: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = t.shape
    out = t.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record("sum", out, (t,), back)


def mean(t: Tensor, axis=None) -> Tensor:
    n = t.size if axis is None else int(np.prod([t.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(t, axis), 1.0 / n)


def select_flat(t: Tensor, index: int) -> Tensor:
    """Scalar at flat position ``index``; gradient routed to that element."""
    shape = t.shape

    def back(g):
        out = np.zeros(int(np.prod(shape)), dtype=np.result_type(g, t.dtype))
        out[index] = g
        return (out.reshape(shape),)

    return record("select", np.asarray(t.data.reshape(-1)[index]), (t,), back)


def lower_median(t: Tensor) -> Tensor:
    """Lower median (element at rank (n-1)//2), differentiable a.e."""
    flat = t.data.reshape(-1)
    k = (flat.size - 1) // 2
    idx = int(np.argpartition(flat, k)[k])
    return select_flat(t, idx)


def max_value(t: Tensor) -> Tensor:
    return select_flat(t, int(np.argmax(t.data)))


# shape ops

def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    old = t.shape
    out = t.data.reshape(tuple(shape))
    if out.size != t.size:
        raise ValueError("reshape changes element count")
    return record("reshape", out, (t,), lambda g: (g.reshape(old),))


def getitem(t: Tensor, index) -> Tensor:
    shape = t.shape
    out = np.array(t.data[index])

    def back(g):
        full = np.zeros(shape, dtype=np.result_type(g, t.dtype))
        np.add.at(full, index, g)
        return (full,)

    return record("getitem", out, (t,), back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(x) for x in tensors]
    out = np.stack([x.data for x in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return record("stack", out, tensors, back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(x) for x in tensors]
    out = np.concatenate([x.data for x in tensors], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", out, tensors, back)


def pad(t: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` covers the trailing ``len(widths)`` axes."""
    lead = t.ndim - len(widths)
    full = [(0, 0)] * lead + [tuple(w) for w in widths]
    out = np.pad(t.data, full)
    sl = tuple(slice(b, b + n) for (b, _), n in zip(full, t.shape))
    return record("pad", out, (t,), lambda g: (g[sl],))


def crop(t: Tensor, starts: Sequence[int], sizes: Sequence[int]) -> Tensor:
    """Window of the trailing axes; gradient scattered back into the window."""
    lead = t.ndim - len(starts)
    for s, n, ext in zip(starts, sizes, t.shape[lead:]):
        if s < 0 or n < 1 or s + n > ext:
            raise ValueError(f"crop window [{s}, {s + n}) outside extent {ext}")
    sl = (slice(None),) * lead + tuple(slice(s, s + n) for s, n in zip(starts, sizes))
    shape = t.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[sl] = g
        return (full,)

    return record("crop", t.data[sl].copy(), (t,), back)


def roll(t: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    out = np.roll(t.data, shifts, axes)
    neg = [-s for s in shifts]
    return record("roll", out, (t,), lambda g: (np.roll(g, neg, axes),))


def channel_bias(t: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias (leading axis) to ``t``."""
    if bias.shape != (t.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match channels {t.shape[0]}")
    extra = (1,) * (t.ndim - 1)
    red = tuple(range(1, t.ndim))
    return record("channel_bias", t.data + bias.data.reshape((-1,) + extra), (t, bias),
                  lambda g: (g, g.sum(axis=red)))
