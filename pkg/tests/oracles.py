"""Brute-force reference implementations used only by the tests.

Nothing here calls into ``foe``; each routine is written from its defining
formula with explicit loops or dense matrices.
"""

import numpy as np


def dft_matrix(n: int) -> np.ndarray:
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)


def dft2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return dft_matrix(h) @ x @ dft_matrix(w).T


def signed_freqs(n: int, keep: int) -> np.ndarray:
    """Integer frequencies retained by a centered crop of ``keep`` bins."""
    return np.arange(-(keep // 2), keep - keep // 2)


def lowpass_decimate(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Evaluate the band-limited interpolant of ``x`` on a coarser grid.

    Sum of x[m] e^{-2 pi i k m / N} e^{+2 pi i k (n N / out) / N} / N over the
    retained signed frequencies, written as an explicit double sum.
    """
    h, w = x.shape
    ky, kx = signed_freqs(h, out_h), signed_freqs(w, out_w)
    my, mx = np.arange(h), np.arange(w)
    coeff = np.zeros((len(ky), len(kx)), dtype=complex)
    for a, fy in enumerate(ky):
        for b, fx in enumerate(kx):
            coeff[a, b] = np.sum(x * np.exp(-2j * np.pi * (fy * my[:, None] / h + fx * mx[None, :] / w)))
    out = np.zeros((out_h, out_w), dtype=complex)
    for ny in range(out_h):
        for nx in range(out_w):
            ph = np.exp(2j * np.pi * (ky[:, None] * ny / out_h + kx[None, :] * nx / out_w))
            out[ny, nx] = np.sum(coeff * ph) / (h * w)
    return out


def correlate_same(x: np.ndarray, w: np.ndarray, bias=None) -> np.ndarray:
    """Multi-channel 2-D cross-correlation, zero 'same' padding, by loops."""
    c_in, H, W = x.shape
    c_out, _, kh, kw = w.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros((c_out, H, W))
    for o in range(c_out):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for c in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            ii, jj = i + a - ch, j + b - cw
                            if 0 <= ii < H and 0 <= jj < W:
                                acc += w[o, c, a, b] * x[c, ii, jj]
                out[o, i, j] = acc + (0.0 if bias is None else bias[o])
    return out


def correlate_same_3d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    c_in, D, H, W = x.shape
    c_out, _, kd, kh, kw = w.shape
    out = np.zeros((c_out, D, H, W))
    for o in range(c_out):
        for d in range(D):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for c in range(c_in):
                        for p in range(kd):
                            for a in range(kh):
                                for b in range(kw):
                                    dd, ii, jj = d + p - kd // 2, i + a - kh // 2, j + b - kw // 2
                                    if 0 <= dd < D and 0 <= ii < H and 0 <= jj < W:
                                        acc += w[o, c, p, a, b] * x[c, dd, ii, jj]
                    out[o, d, i, j] = acc
    return out


def circular_conv(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y[p] = sum_q kernel[q] x[(p - q) mod N] for 2-D arrays, by loops."""
    H, W = x.shape
    y = np.zeros((H, W), dtype=np.result_type(kernel, x))
    for p in range(H):
        for r in range(W):
            acc = 0.0
            for q in range(H):
                for s in range(W):
                    acc += kernel[q, s] * x[(p - q) % H, (r - s) % W]
            y[p, r] = acc
    return y


def planewise_linear_conv(s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """mu[o] = sum_z sum_tau v[z, tau] s[z, o + Y//2 - tau] over valid indices."""
    Z, H, W = s.shape
    _, Y, X = v.shape
    out = np.zeros((H, W))
    for z in range(Z):
        for oy in range(H):
            for ox in range(W):
                acc = 0.0
                for ty in range(Y):
                    for tx in range(X):
                        sy, sx = oy + Y // 2 - ty, ox + X // 2 - tx
                        if 0 <= sy < H and 0 <= sx < W:
                            acc += v[z, ty, tx] * s[z, sy, sx]
                out[oy, ox] += acc
    return out


def adam_trace(grad_fn, x0: float, lr: float, steps: int, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out from the textbook recurrence."""
    x, m, v = x0, 0.0, 0.0
    xs = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        xs.append(x)
    return xs


def global_linear_conv(x: np.ndarray, spectrum: np.ndarray, bias=None) -> np.ndarray:
    """Zero-padded linear convolution with the spatial kernel ifft2(W), by loops.

    x: [C_in, H, W]; spectrum: [C_out, C_in, 2H, 2W].  The kernel value at
    signed lag d (|d| < H) is ifft2(W)[d mod 2H]; out[o] = sum_tau x[tau] k(o - tau).
    """
    c_in, H, W = x.shape
    c_out = spectrum.shape[0]
    kern = np.fft.ifft2(spectrum).real
    out = np.zeros((c_out, H, W))
    for o in range(c_out):
        for c in range(c_in):
            for oy in range(H):
                for ox in range(W):
                    acc = 0.0
                    for ty in range(H):
                        for tx in range(W):
                            acc += x[c, ty, tx] * kern[o, c, (oy - ty) % (2 * H), (ox - tx) % (2 * W)]
                    out[o, oy, ox] += acc
        if bias is not None:
            out[o] += bias[o]
    return out


def multiscale_level(x, spec, f):
    """Brute-force circular convolution on the spectrally downsampled padded grid."""
    c, h, w = x.shape
    ph, pw = 2 * h // f, 2 * w // f
    pad = np.zeros((c, 2 * h, 2 * w))
    pad[:, h - h // 2:h - h // 2 + h, w - w // 2:w - w // 2 + w] = x
    out = np.zeros((spec.shape[0], h // f, w // f))
    for o in range(spec.shape[0]):
        acc = np.zeros((ph, pw), complex)
        for ci in range(c):
            z = lowpass_decimate(pad[ci], ph, pw)
            kern = np.fft.ifft2(spec[o, ci])
            acc += circular_conv(kern, z)
        top, left = ph // 2 - (h // f) // 2, pw // 2 - (w // f) // 2
        out[o] = acc.real[top:top + h // f, left:left + w // f]
    return out
