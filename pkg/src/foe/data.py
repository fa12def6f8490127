"""Synthetic nuclei phantoms, dataset geometry, augmentation and image-quality metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy import ndimage

from .tensor import Tensor, no_grad
from .tensor.io import tensor_io  # noqa: F401  (re-exported for the data pipeline)
from .training.loss import LossConfig, loss_terms


# --- dataset geometry -----------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    name: str
    camera_px: tuple[int, int]
    z_planes: int
    span_um: tuple[float, float, float]  # (z, y, x)
    aperture_diameter_um: float | None = None

    def __post_init__(self):
        if self.aperture_diameter_um is not None and self.aperture_diameter_um > min(self.span_um[1:]):
            raise ValueError("aperture diameter exceeds the lateral span")

    @property
    def voxel_um(self) -> tuple[float, float, float]:
        return (self.span_um[0] / self.z_planes, self.span_um[1] / self.camera_px[0],
                self.span_um[2] / self.camera_px[1])

    def scaled(self, divisor: int) -> "DatasetSpec":
        """Desk-scale variant: every extent divided by ``divisor``, ratios preserved."""
        if divisor < 1 or self.camera_px[0] % divisor or self.camera_px[1] % divisor:
            raise ValueError(f"divisor {divisor} must divide camera extent {self.camera_px}")
        ap = None if self.aperture_diameter_um is None else self.aperture_diameter_um / divisor
        return DatasetSpec(f"{self.name}/{divisor}", (self.camera_px[0] // divisor, self.camera_px[1] // divisor),
                           max(1, round(self.z_planes / divisor)),
                           tuple(s / divisor for s in self.span_um), ap)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


DATASETS = {
    "A": DatasetSpec("A", (512, 512), 12, (25.0, 832.0, 832.0), 386.0),
    "B": DatasetSpec("B", (512, 512), 128, (250.0, 832.0, 832.0), 386.0),
    "C": DatasetSpec("C", (512, 512), 128, (250.0, 832.0, 832.0), None),
    "D": DatasetSpec("D", (256, 256), 96, (200.0, 416.0, 416.0), 193.0),
}


def dataset_spec(name: str, divisor: int = 1) -> DatasetSpec:
    try:
        spec = DATASETS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(DATASETS)}") from None
    return spec if divisor == 1 else spec.scaled(divisor)


# --- phantoms -------------------------------------------------------------------

class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomParams:
    dims: tuple[int, int, int]  # (Z, Y, X) voxels
    voxel_um: tuple[float, float, float] = (1.0, 1.0, 1.0)
    nucleus_count: int = 20
    radius_um: tuple[float, float] = (1.5, 3.0)
    intensity: tuple[float, float] = (0.5, 1.0)
    background: float = 0.0
    seed: int = 0
    max_tries: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_um", tuple(float(v) for v in self.voxel_um))
        object.__setattr__(self, "radius_um", tuple(float(v) for v in self.radius_um))
        object.__setattr__(self, "intensity", tuple(float(v) for v in self.intensity))

    def validate(self) -> "PhantomParams":
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError("dims must be three positive extents")
        if self.nucleus_count < 0 or self.background < 0:
            raise ValueError("nucleus_count and background must be non-negative")
        lo, hi = self.radius_um
        if lo > hi or lo < max(self.voxel_um):
            raise ValueError("radius range must be ordered and at least one voxel")
        if not 0 <= self.intensity[0] <= self.intensity[1]:
            raise ValueError("intensity range must be ordered and non-negative")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "PhantomParams":
        d = json.loads(text)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown phantom fields {sorted(unknown)}")
        return cls(**d).validate()


def _place(p: PhantomParams, rng: np.random.Generator) -> list[tuple[np.ndarray, float, float]]:
    """Rejection-sample non-overlapping nuclei (centre in um, radius, intensity), in draw order."""
    extent = np.array(p.dims) * np.array(p.voxel_um)
    placed: list[tuple[np.ndarray, float, float]] = []
    for k in range(p.nucleus_count):
        for _ in range(p.max_tries):
            r = rng.uniform(*p.radius_um)
            c = rng.uniform(0, 1, 3) * extent
            if all(np.linalg.norm(c - c2) >= r + r2 for c2, r2, _ in placed):
                placed.append((c, r, rng.uniform(*p.intensity)))
                break
        else:
            raise PhantomError(f"could not place nucleus {k + 1} of {p.nucleus_count} "
                               f"without overlap after {p.max_tries} tries")
    return placed


def generate_phantom(p: PhantomParams) -> np.ndarray:
    """Gaussian-profile nuclei (sigma = radius / 2) on a uniform background, shape dims."""
    p.validate()
    rng = np.random.default_rng(p.seed)
    vox = np.array(p.voxel_um)
    v = np.full(p.dims, p.background, dtype=np.float64)
    for c, r, amp in _place(p, rng):
        sigma = r / 2
        lo = np.maximum(np.floor((c - 3 * sigma) / vox - 0.5).astype(int), 0)
        hi = np.minimum(np.ceil((c + 3 * sigma) / vox + 0.5).astype(int), p.dims)
        if np.any(hi <= lo):
            continue
        axes = [(np.arange(a, b) + 0.5) * vox[i] - c[i] for i, (a, b) in enumerate(zip(lo, hi))]
        d2 = axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2 + axes[2][None, None, :] ** 2
        v[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] += amp * np.exp(-d2 / (2 * sigma ** 2))
    return v


# --- augmentation ---------------------------------------------------------------

@dataclass(frozen=True)
class AugmentOptions:
    flip_z: float = 0.0  # probability
    flip_y: float = 0.0
    rotate_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)  # max |angle| for pitch, yaw, roll
    shift_vox: tuple[int, int, int] = (0, 0, 0)  # max |shift| per axis, zero fill
    brightness: tuple[float, float] | None = None
    background: tuple[float, float] | None = None
    voxel_um: tuple[float, float, float] = (1.0, 1.0, 1.0)


def _rotation(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Rotation in (z, y, x) coordinates: pitch about x, yaw about y, roll about z."""
    cp, sp, cy, sy, cr, sr = (math.cos(pitch), math.sin(pitch), math.cos(yaw), math.sin(yaw),
                              math.cos(roll), math.sin(roll))
    rx = np.array([[cp, -sp, 0], [sp, cp, 0], [0, 0, 1]])  # mixes z and y
    ry = np.array([[cy, 0, -sy], [0, 1, 0], [sy, 0, cy]])  # mixes z and x
    rz = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])  # mixes y and x
    return rz @ ry @ rx


def rotate(v: np.ndarray, angles_rad: Sequence[float], voxel_um=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Rotate about the volume centre in physical space; trilinear, zero fill."""
    scale = np.diag(voxel_um)
    r = _rotation(*angles_rad)
    # output voxel o maps to input voxel S^-1 R^T S (o - c) + c
    m = np.linalg.inv(scale) @ r.T @ scale
    centre = (np.array(v.shape) - 1) / 2
    out = ndimage.affine_transform(v, m, offset=centre - m @ centre, order=1, mode="constant", cval=0.0)
    return np.maximum(out, 0.0)


def shift(v: np.ndarray, offsets: Sequence[int]) -> np.ndarray:
    out = np.zeros_like(v)
    src, dst = [], []
    for n, o in zip(v.shape, offsets):
        o = int(o)
        if abs(o) >= n:
            return out
        src.append(slice(max(0, -o), n - max(0, o)))
        dst.append(slice(max(0, o), n - max(0, -o)))
    out[tuple(dst)] = v[tuple(src)]
    return out


def augment(v: np.ndarray, rng: np.random.Generator, opts: AugmentOptions = AugmentOptions()) -> np.ndarray:
    """Random flips, rotation, shift, brightness scale and background offset.

    Draws happen in a fixed order whatever is enabled, so a given rng state
    always yields the same transform for the same options.
    """
    u_flip = rng.uniform(size=2)
    angles = np.deg2rad(np.asarray(opts.rotate_deg)) * rng.uniform(-1, 1, 3)
    offsets = [int(rng.integers(-s, s + 1)) if s else 0 for s in opts.shift_vox]
    alpha = rng.uniform(*opts.brightness) if opts.brightness else 1.0
    bg = rng.uniform(*opts.background) if opts.background else 0.0

    out = np.array(v, dtype=np.float64, copy=True)
    if u_flip[0] < opts.flip_z:
        out = out[::-1]
    if u_flip[1] < opts.flip_y:
        out = out[:, ::-1]
    if np.any(angles):
        out = rotate(out, angles, opts.voxel_um)
    if any(offsets):
        out = shift(out, offsets)
    if opts.brightness:
        out = out * alpha
    if opts.background:
        out = out + bg
    return np.ascontiguousarray(np.maximum(out, 0.0))


def aperture_cutout(v: np.ndarray, diameter_um: float | None, height_um: float | None,
                    voxel_um=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Zero everything outside a centred z-axis cylinder (``None`` skips that limit)."""
    v = np.asarray(v)
    vox = np.asarray(voxel_um, dtype=float)
    extent = np.array(v.shape) * vox
    tol = 1e-9 * extent
    if diameter_um is not None and diameter_um > min(extent[1:] + tol[1:]):
        raise ValueError(f"aperture diameter {diameter_um} exceeds lateral extent {extent[1:]}")
    if height_um is not None and height_um > extent[0] + tol[0]:
        raise ValueError(f"cylinder height {height_um} exceeds axial extent {extent[0]}")
    z, y, x = [(np.arange(n) - (n - 1) / 2) * vox[i] for i, n in enumerate(v.shape)]
    keep = np.ones(v.shape, bool)
    if diameter_um is not None:
        keep &= (y[None, :, None] ** 2 + x[None, None, :] ** 2) <= (diameter_um / 2) ** 2
    if height_um is not None:
        keep &= np.abs(z)[:, None, None] <= height_um / 2
    return np.where(keep, v, 0.0)


@dataclass
class PhantomDataset:
    """Fresh phantom per draw: generate, augment, cut out the aperture."""

    params: PhantomParams
    augment: AugmentOptions = field(default_factory=AugmentOptions)
    diameter_um: float | None = None
    height_um: float | None = None

    def __call__(self, it: int, rng: np.random.Generator) -> np.ndarray:
        seed = int(rng.integers(2 ** 63))
        v = generate_phantom(_replace(self.params, seed=seed))
        v = augment(v, rng, self.augment)
        if self.diameter_um is not None or self.height_um is not None:
            v = aperture_cutout(v, self.diameter_um, self.height_um, self.params.voxel_um)
        return v


def _replace(p: PhantomParams, **kw) -> PhantomParams:
    d = asdict(p)
    d.update(kw)
    return PhantomParams(**d)


def toy_dataset(planes: int = 4, size: int = 16, nuclei: int = 6) -> PhantomDataset:
    """Small-scale training data: a few nuclei per volume with brightness and background jitter."""
    params = PhantomParams((planes, size, size), (1.0, 1.0, 1.0), nuclei, (1.0, 2.0), (0.5, 1.0))
    opts = AugmentOptions(flip_z=0.5, flip_y=0.5, brightness=(0.5, 1.5), background=(0.0, 0.05))
    return PhantomDataset(params, opts)


# --- metrics ----------------------------------------------------------------------

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_SIGMA, _SSIM_TRUNCATE = 1.5, 3.5  # 11-tap Gaussian window
_WIN = 11


def psnr(v: np.ndarray, v_hat: np.ndarray) -> float:
    """10 log10(max(v)^2 / MSE); +inf for identical inputs."""
    v, v_hat = np.asarray(v, float), np.asarray(v_hat, float)
    mse = float(np.mean((v - v_hat) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.max(v)) ** 2 / mse)


def _ssim_terms(a: np.ndarray, b: np.ndarray, data_range: float) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure over the valid window positions."""
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2

    def filt(x):
        return ndimage.gaussian_filter(x, _SSIM_SIGMA, truncate=_SSIM_TRUNCATE, mode="constant")[
            _WIN // 2:-(_WIN // 2), _WIN // 2:-(_WIN // 2)]

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a ** 2
    sbb = filt(b * b) - mu_b ** 2
    sab = filt(a * b) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ms_ssim_levels(h: int, w: int) -> int:
    """Scales that fit: the coarsest image must still hold one 11-pixel window."""
    n = 1
    while n < len(MS_SSIM_WEIGHTS) and min(h, w) // 2 ** n >= _WIN:
        n += 1
    if min(h, w) < _WIN:
        raise ValueError(f"image {h}x{w} smaller than the {_WIN}-pixel SSIM window")
    return n


def ms_ssim2d(a: np.ndarray, b: np.ndarray, data_range: float, levels: int | None = None) -> float:
    """Multi-scale SSIM of two images.

    Uses the standard scale weights; images too small for five scales use
    the leading weights renormalised to sum to one.  Negative per-scale
    terms are clamped at zero before exponentiation.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    levels = levels or ms_ssim_levels(*a.shape)
    weights = np.array(MS_SSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()
    out = 1.0
    for j, wj in enumerate(weights):
        ssim, cs = _ssim_terms(a, b, data_range)
        term = ssim if j == levels - 1 else cs
        out *= max(term, 0.0) ** wj
        if j < levels - 1:
            h, w = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
            a = a[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
            b = b[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return out


def ms_ssim(v: np.ndarray, v_hat: np.ndarray) -> float:
    """Mean of per-plane 2-D MS-SSIM; the data range is that of the whole truth volume."""
    v, v_hat = np.asarray(v, float), np.asarray(v_hat, float)
    if v.ndim == 2:
        v, v_hat = v[None], v_hat[None]
    rng = float(np.max(v) - np.min(v)) or 1.0
    return float(np.mean([ms_ssim2d(a, b, rng) for a, b in zip(v, v_hat)]))


def metrics_eval(v: np.ndarray, v_hat: np.ndarray) -> dict:
    v, v_hat = np.asarray(v, float), np.asarray(v_hat, float)
    if v.shape != v_hat.shape:
        raise ValueError(f"shape mismatch {v.shape} vs {v_hat.shape}")
    if not np.max(v) > 0:
        raise ValueError("truth volume is empty")
    vol = v if v.ndim == 3 else v[None]
    with no_grad():
        _, l_h, _ = loss_terms(vol, Tensor(v_hat.reshape(vol.shape)), LossConfig(beta=0.0))
    return {"psnr": psnr(v, v_hat), "ms_ssim": ms_ssim(v, v_hat), "l_hnmse": l_h.item()}
