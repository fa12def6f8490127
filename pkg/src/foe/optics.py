"""Differentiable 4f microscope: phase mask -> per-plane PSFs -> noisy camera image.

Grids are kept in the centered layout (DC at index N//2) so that masks,
PSFs and volumes read naturally as images.  A pupil field is moved to the
FFT layout with ``ifftshift``, transformed with the orthonormal FFT and moved
back, so the camera-plane pitch equals the mask pitch ``mask_pixel_um``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as ft
from .tensor import Tensor
from .tensor.core import record

NOISE_EPS = 1e-12


@dataclass
class OpticsConfig:
    wavelength_um: float = 0.532
    na: float = 0.8
    refractive_index: float = 1.33
    mask_pixels: int = 96
    mask_pixel_um: float = 0.325
    camera_pixels: tuple[int, int] = (32, 32)
    camera_pixel_um: float = 0.65
    z_planes_um: list[float] = field(default_factory=lambda: [-4.0, -2.0, 0.0, 2.0, 4.0])
    taper_width_px: float = 5.0
    oversim_factor: float = 1.5
    photon_budget: float = 100.0

    def __post_init__(self):
        self.camera_pixels = tuple(int(v) for v in self.camera_pixels)
        self.z_planes_um = [float(z) for z in self.z_planes_um]
        self.mask_pixels = int(self.mask_pixels)

    @property
    def pool_factor(self) -> int:
        return int(round(self.camera_pixel_um / self.mask_pixel_um))

    @property
    def crop_pixels(self) -> tuple[int, int]:
        f = self.pool_factor
        return self.camera_pixels[0] * f, self.camera_pixels[1] * f

    @property
    def num_planes(self) -> int:
        return len(self.z_planes_um)

    @property
    def fov_um(self) -> tuple[float, float]:
        h, w = self.camera_pixels
        return h * self.camera_pixel_um, w * self.camera_pixel_um

    def validate(self) -> "OpticsConfig":
        pos = ("wavelength_um", "na", "refractive_index", "mask_pixel_um", "camera_pixel_um",
               "taper_width_px", "photon_budget")
        for name in pos:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.na > self.refractive_index:
            raise ValueError("na exceeds refractive_index")
        nyq = self.wavelength_um / (2 * self.na)
        if self.mask_pixel_um > nyq * (1 + 1e-9):
            raise ValueError(f"mask_pixel_um {self.mask_pixel_um} above Nyquist limit {nyq:.4f}")
        if self.oversim_factor < 1:
            raise ValueError("oversim_factor must be >= 1")
        if len(self.camera_pixels) != 2 or min(self.camera_pixels) < 1:
            raise ValueError("camera_pixels must be two positive extents")
        ratio = self.camera_pixel_um / self.mask_pixel_um
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("camera_pixel_um must be an integer multiple of mask_pixel_um")
        need = math.ceil(self.oversim_factor * max(self.crop_pixels) - 1e-9)
        if self.mask_pixels < need:
            raise ValueError(f"mask_pixels {self.mask_pixels} < oversim_factor x crop = {need}")
        if not self.z_planes_um:
            raise ValueError("z_planes_um is empty")
        return self

    def to_json(self) -> str:
        d = asdict(self)
        d["camera_pixels"] = list(self.camera_pixels)
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "OpticsConfig":
        d = json.loads(text)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown OpticsConfig fields {sorted(unknown)}")
        return cls(**d).validate()

    def replace(self, **kw) -> "OpticsConfig":
        d = asdict(self)
        d.update(kw)
        return OpticsConfig(**d)


def toy_config(**kw) -> OpticsConfig:
    """Default desk-scale configuration (Nyquist-consistent)."""
    return OpticsConfig(**kw).validate()


def gradcheck_config(**kw) -> OpticsConfig:
    """Tiny configuration for finite-difference checks: 16 px mask, 8x8 camera, two planes."""
    base = dict(mask_pixels=16, mask_pixel_um=0.325, camera_pixels=(8, 8), camera_pixel_um=0.325,
                z_planes_um=[-1.0, 1.0], taper_width_px=2.0, oversim_factor=1.5, photon_budget=50.0)
    base.update(kw)
    return OpticsConfig(**base).validate()


def nyquist_params(na: float, wavelength_um: float, fov_um: float) -> tuple[float, int]:
    if na <= 0 or wavelength_um <= 0 or fov_um <= 0:
        raise ValueError("na, wavelength and fov must be positive")
    dx = wavelength_um / (2 * na)
    # guard against 823/0.3325 style ratios landing a hair above an integer
    return dx, int(math.ceil(fov_um / dx - 1e-9))


def frequency_grid(cfg: OpticsConfig) -> tuple[np.ndarray, np.ndarray]:
    """Centered spatial-frequency coordinates (cycles/um), each [N, N]."""
    n = cfg.mask_pixels
    k = (np.arange(n) - n // 2) / (n * cfg.mask_pixel_um)
    return np.meshgrid(k, k, indexing="ij")


def pupil_amplitude(cfg: OpticsConfig) -> np.ndarray:
    ky, kx = frequency_grid(cfg)
    cutoff = cfg.na / cfg.wavelength_um
    return (ky ** 2 + kx ** 2 <= cutoff ** 2 * (1 + 1e-12)).astype(np.float64)


def point_source_spectrum(cfg: OpticsConfig, z_um: float) -> Tensor:
    ky, kx = frequency_grid(cfg)
    rad = (cfg.refractive_index / cfg.wavelength_um) ** 2 - ky ** 2 - kx ** 2
    field_ = np.where(rad >= 0, np.exp(2j * np.pi * z_um * np.sqrt(np.maximum(rad, 0.0))), 0.0)
    return Tensor(field_)


def _check_phi(phi: Tensor, cfg: OpticsConfig) -> None:
    n = cfg.mask_pixels
    if phi.shape != (n, n):
        raise ValueError(f"phase mask shape {phi.shape} does not match grid ({n}, {n})")


def pupil_function(phi: Tensor, cfg: OpticsConfig) -> Tensor:
    _check_phi(phi, cfg)
    return ft.mul(ft.exp_i(phi), Tensor(pupil_amplitude(cfg).astype(complex)))


def compute_prf(phi: Tensor, z_um: float, cfg: OpticsConfig) -> Tensor:
    """Camera-plane intensity of a point source at depth ``z_um`` on the full N grid."""
    field_ = ft.mul(pupil_function(phi, cfg), point_source_spectrum(cfg, z_um))
    return ft.abs2(ft.fftshift2(ft.fft2(ft.ifftshift2(field_))))


def taper_mask(shape: Sequence[int], width_px: float) -> np.ndarray:
    if width_px <= 0:
        raise ValueError("taper width must be positive")
    h, w = shape
    i = np.arange(h)[:, None]
    j = np.arange(w)[None, :]
    d = np.minimum(np.minimum(i, h - 1 - i), np.minimum(j, w - 1 - j)).astype(np.float64)
    return 2.0 / (1.0 + np.exp(-d / width_px)) - 1.0


def compute_psf_stack(phi: Tensor, cfg: OpticsConfig, planes: Sequence[int] | None = None) -> Tensor:
    """PSF stack [Z', H, W] for the selected plane indices (all by default).

    Each plane is normalised by the pupil pixel count so the full-grid PRF
    sums to one photon per unit source intensity.
    """
    ch, cw = cfg.crop_pixels
    f = cfg.pool_factor
    if ch % f or cw % f or ch > cfg.mask_pixels or cw > cfg.mask_pixels:
        raise ValueError(f"crop {ch}x{cw} incompatible with pool factor {f} / grid {cfg.mask_pixels}")
    idx = range(cfg.num_planes) if planes is None else planes
    norm = 1.0 / pupil_amplitude(cfg).sum()
    taper = Tensor(taper_mask((ch, cw), cfg.taper_width_px))
    out = []
    for p in idx:
        prf = ft.scale(compute_prf(phi, cfg.z_planes_um[p], cfg), norm)
        cropped = ft.pad_crop_spatial(prf, ch, cw, "center_crop")
        out.append(ft.sum_pool(ft.mul(cropped, taper), f))
    return ft.stack(out)


def _plane_fft_shape(s: Tensor, v) -> tuple[int, int]:
    return s.shape[1] + v.shape[1] - 1, s.shape[2] + v.shape[2] - 1


def image_volume(s: Tensor, v) -> Tensor:
    """Expected camera image: sum over planes of the linear convolution v_z * s_z.

    The full linear convolution is cropped to the camera size with the
    anchor at (Y//2, X//2), so a unit voxel at the volume centre reproduces
    the PSF plane exactly.
    """
    v = ft.as_tensor(v)
    if s.ndim != 3 or v.ndim != 3:
        raise ValueError("expected s [Z, H, W] and v [Z, Y, X]")
    if s.shape[0] != v.shape[0]:
        raise ValueError(f"plane count mismatch: psf {s.shape[0]} vs volume {v.shape[0]}")
    z, h, w = s.shape
    _, y, x = v.shape
    ph, pw = _plane_fft_shape(s, v)
    sf = ft.fft2(ft.pad(s, [(0, ph - h), (0, pw - w)]))
    vf = ft.fft2(ft.pad(v, [(0, ph - y), (0, pw - x)]))
    full = ft.real(ft.ifft2(ft.mul(sf, vf)))
    full = ft.scale(ft.tsum(full, axis=0), math.sqrt(ph * pw))
    return ft.crop(full, (y // 2, x // 2), (h, w))


def image_adjoint(s, u, volume_shape: Sequence[int]) -> np.ndarray:
    """Adjoint of ``image_volume`` in v: returns w with <image(s, v), u> = <v, w>."""
    s = np.asarray(s.data if isinstance(s, Tensor) else s)
    u = np.asarray(u.data if isinstance(u, Tensor) else u)
    z, h, w = s.shape
    y, x = volume_shape[-2:]
    ph, pw = h + y - 1, w + x - 1
    big = np.zeros((ph, pw))
    big[y // 2:y // 2 + h, x // 2:x // 2 + w] = u
    sp = np.zeros((z, ph, pw))
    sp[:, :h, :w] = s
    corr = np.fft.ifft2(np.fft.fft2(big)[None] * np.conj(np.fft.fft2(sp))).real
    return corr[:, :y, :x]


def noise_sample(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def apply_shot_noise(mu: Tensor, seed: int | None = None, eps: np.ndarray | None = None) -> Tensor:
    """Rectified Gaussian shot noise ``max(mu + sqrt(mu) * eps, 0)``.

    ``eps`` may be supplied directly (fixed-noise gradient checks); otherwise
    it is drawn from ``default_rng(seed)``.  Values of ``mu`` below zero by
    FFT round-off are treated as zero; genuinely negative input is an error.
    """
    mu = ft.as_tensor(mu)
    m = mu.data
    if np.iscomplexobj(m):
        raise ValueError("expected image must be real")
    floor = -1e-9 * max(1.0, float(np.max(np.abs(m))))
    if np.min(m) < floor:
        raise ValueError(f"negative expected photon count {np.min(m):.3g}")
    if eps is None:
        if seed is None:
            raise ValueError("need a seed or an explicit noise sample")
        eps = noise_sample(m.shape, seed)
    elif eps.shape != m.shape:
        raise ValueError("noise sample shape mismatch")
    mc = np.maximum(m, 0.0)
    raw = mc + np.sqrt(mc) * eps
    keep = raw > 0

    def back(g):
        return (g * keep * (1.0 + eps / (2.0 * np.sqrt(mc + NOISE_EPS))),)

    return record("shot_noise", np.where(keep, raw, 0.0), (mu,), back)


def hex_offsets(radius_um: float) -> np.ndarray:
    ang = np.arange(6) * np.pi / 3
    return radius_um * np.stack([np.sin(ang), np.cos(ang)], axis=1)  # (y, x)


def _defocus_phase(cfg: OpticsConfig, z_um, paraxial: bool) -> np.ndarray:
    ky, kx = frequency_grid(cfg)
    k2 = ky ** 2 + kx ** 2
    nl = cfg.refractive_index / cfg.wavelength_um
    if paraxial:
        # second-order expansion of the propagation phase, constant term dropped
        return np.pi * cfg.wavelength_um * z_um * k2 / cfg.refractive_index
    return -2 * np.pi * z_um * np.sqrt(np.maximum(nl ** 2 - k2, 0.0))


def init_phase_mask(kind: str, cfg: OpticsConfig, params: dict | None = None) -> Tensor:
    """Initial phase mask.

    ``pencils_hex`` splits the pupil into six angular wedges; wedge m carries
    a tilt placing its beam at a hexagon vertex x_m and a defocus cancelling
    propagation to depth z_m, so it forms a pencil focused there.  ``helix``
    uses the same construction with offset and depth varying continuously in
    pupil angle.  ``params``: radius_um, z_range_um, paraxial.
    """
    params = dict(params or {})
    n = cfg.mask_pixels
    if kind == "zeros":
        return Tensor(np.zeros((n, n)))
    if kind not in ("pencils_hex", "helix"):
        raise ValueError(f"unknown phase mask initializer {kind!r}")
    radius = float(params.get("radius_um", min(cfg.fov_um) / 4))
    zlo, zhi = params.get("z_range_um", (min(cfg.z_planes_um), max(cfg.z_planes_um)))
    paraxial = bool(params.get("paraxial", False))
    ky, kx = frequency_grid(cfg)
    theta = np.arctan2(kx, ky)  # 0 along +y, matching hex_offsets
    if kind == "pencils_hex":
        wedge = np.floor((theta + np.pi / 6) / (np.pi / 3)).astype(int) % 6
        offsets = hex_offsets(radius)
        depths = np.linspace(zlo, zhi, 6)
        oy, ox = offsets[wedge, 0], offsets[wedge, 1]
        zm = depths[wedge]
    else:
        frac = (theta + np.pi) / (2 * np.pi)
        oy, ox = radius * np.cos(theta), radius * np.sin(theta)
        zm = zlo + frac * (zhi - zlo)
    tilt = 2 * np.pi * (ky * oy + kx * ox)
    phi = tilt + _defocus_phase(cfg, zm, paraxial)
    return Tensor(phi * pupil_amplitude(cfg))


def train_config(**kw) -> OpticsConfig:
    """Training smoke-test configuration: 16x16 camera, four planes, 48 px mask."""
    base = dict(mask_pixels=48, camera_pixels=(16, 16), z_planes_um=[-3.0, -1.0, 1.0, 3.0])
    base.update(kw)
    return OpticsConfig(**base).validate()
