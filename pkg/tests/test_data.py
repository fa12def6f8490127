import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from foe import data as dt

TABLE = {  # camera, planes, span (z, y, x), aperture
    "A": ((512, 512), 12, (25, 832, 832), 386),
    "B": ((512, 512), 128, (250, 832, 832), 386),
    "C": ((512, 512), 128, (250, 832, 832), None),
    "D": ((256, 256), 96, (200, 416, 416), 193),
}


@pytest.mark.parametrize("name", sorted(TABLE))
def test_dataset_rows(name):
    s = dt.dataset_spec(name)
    cam, planes, span, ap = TABLE[name]
    assert (s.camera_px, s.z_planes, s.span_um, s.aperture_diameter_um) == (cam, planes, span, ap)


def test_dataset_scaled_preserves_ratios():
    d = dt.dataset_spec("D", divisor=8)
    assert d.camera_px == (32, 32) and d.z_planes == 12
    assert d.span_um[1] / d.camera_px[0] == pytest.approx(416 / 256)
    assert d.aperture_diameter_um / d.span_um[1] == pytest.approx(193 / 416)
    with pytest.raises(ValueError):
        dt.dataset_spec("D", divisor=3)


def test_unknown_dataset():
    with pytest.raises(ValueError):
        dt.dataset_spec("E")


# --- phantoms ---------------------------------------------------------------

def test_empty_phantom():
    v = dt.generate_phantom(dt.PhantomParams((4, 8, 8), nucleus_count=0))
    assert not v.any()


def test_phantom_deterministic_and_nonnegative():
    p = dt.PhantomParams((8, 24, 24), nucleus_count=10, background=0.1, seed=3)
    a, b = dt.generate_phantom(p), dt.generate_phantom(p)
    assert a.tobytes() == b.tobytes() and a.min() >= 0.1


def test_phantom_total_monotone_in_count():
    totals = [dt.generate_phantom(dt.PhantomParams((8, 32, 32), nucleus_count=n, seed=1)).sum()
              for n in range(1, 11)]
    assert all(b > a for a, b in zip(totals, totals[1:]))


def test_phantom_blob_profile():
    # one nucleus well inside: its integral matches a Gaussian of sigma = r/2
    p = dt.PhantomParams((40, 40, 40), nucleus_count=1, radius_um=(4.0, 4.0), intensity=(1.0, 1.0), seed=3)
    v = dt.generate_phantom(p)
    (c, r, _), = dt._place(p, np.random.default_rng(3))
    assert np.all((c > 7) & (c < 33))  # seed chosen so the 3-sigma box is interior
    assert v.sum() == pytest.approx((2 * np.pi) ** 1.5 * 2.0 ** 3, rel=0.01)


def test_phantom_overcrowded_raises():
    p = dt.PhantomParams((4, 4, 4), nucleus_count=50, radius_um=(2.0, 2.0), max_tries=50)
    with pytest.raises(dt.PhantomError):
        dt.generate_phantom(p)


def test_phantom_params_validation_and_json():
    with pytest.raises(ValueError):
        dt.PhantomParams((4, 4, 4), radius_um=(0.5, 1.0)).validate()
    p = dt.PhantomParams((4, 8, 8), nucleus_count=3)
    assert dt.PhantomParams.from_json(p.to_json()) == p


# --- augmentation ---------------------------------------------------------------

def _vol(seed=0):
    return dt.generate_phantom(dt.PhantomParams((8, 16, 16), nucleus_count=5, seed=seed))


def test_augment_disabled_is_identity():
    v = _vol()
    assert np.array_equal(dt.augment(v, np.random.default_rng(0)), v)


def test_flip_twice_identity():
    v = _vol()
    opts = dt.AugmentOptions(flip_z=1.0)
    once = dt.augment(v, np.random.default_rng(0), opts)
    assert np.array_equal(once, v[::-1])
    assert np.array_equal(dt.augment(once, np.random.default_rng(1), opts), v)


def test_brightness_scales_total():
    v = _vol()
    out = dt.augment(v, np.random.default_rng(0), dt.AugmentOptions(brightness=(2.5, 2.5)))
    assert out.sum() == pytest.approx(2.5 * v.sum(), rel=1e-14)


def test_augment_deterministic_and_nonnegative():
    opts = dt.AugmentOptions(0.5, 0.5, (20, 20, 20), (2, 2, 2), (0.5, 2.0), (0.0, 0.1))
    v = _vol()
    a = dt.augment(v, np.random.default_rng(4), opts)
    b = dt.augment(v, np.random.default_rng(4), opts)
    assert a.tobytes() == b.tobytes() and a.min() >= 0


def test_rotation_matches_scipy_rotate():
    from scipy.ndimage import rotate as sp_rotate
    v = _vol(2)
    ours = dt.rotate(v, (0.0, 0.0, np.deg2rad(30)))
    ref = sp_rotate(v, 30, axes=(2, 1), reshape=False, order=1, mode="constant")
    assert np.max(np.abs(ours - np.maximum(ref, 0))) < 1e-10


def test_rotation_by_zero_is_identity():
    v = _vol()
    np.testing.assert_allclose(dt.rotate(v, (0, 0, 0)), v, atol=1e-14)


def test_shift_zero_fill():
    v = np.arange(24, dtype=float).reshape(2, 3, 4)
    s = dt.shift(v, (0, 1, -1))
    assert np.array_equal(s[:, 1:, :3], v[:, :2, 1:])
    assert not s[:, 0].any() and not s[:, :, 3].any()


# --- aperture ------------------------------------------------------------------------

def test_aperture_full_extent_inscribed():
    v = np.ones((8, 16, 16))
    out = dt.aperture_cutout(v, 16.0, 8.0)
    assert out[:, 8, 8].all() and out[:, 0, 8].all()
    assert not out[:, 0, 0].any()


def test_aperture_centre_retained_and_inside_untouched():
    v = np.random.default_rng(0).random((9, 9, 9))
    out = dt.aperture_cutout(v, 3.0, 3.0)
    assert out[4, 4, 4] == v[4, 4, 4]
    kept = out != 0
    assert np.array_equal(out[kept], v[kept])


def test_aperture_voxel_count_matches_cylinder():
    out = dt.aperture_cutout(np.ones((64, 64, 64)), 48.0, 40.0)
    expect = math.pi * 24 ** 2 * 40
    assert abs(out.sum() - expect) / expect < 0.02


def test_aperture_too_large():
    with pytest.raises(ValueError):
        dt.aperture_cutout(np.ones((4, 8, 8)), 9.0, None)
    with pytest.raises(ValueError):
        dt.aperture_cutout(np.ones((4, 8, 8)), None, 5.0)


def test_phantom_dataset_pipeline_deterministic():
    ds = dt.toy_dataset()
    a = ds(0, np.random.default_rng(5))
    b = ds(0, np.random.default_rng(5))
    assert a.shape == (4, 16, 16) and a.tobytes() == b.tobytes() and a.min() >= 0


# --- metrics -------------------------------------------------------------------------

def test_metrics_identical():
    v = _vol() + 0.01
    m = dt.metrics_eval(v, v.copy())
    assert m["psnr"] == math.inf and m["ms_ssim"] == pytest.approx(1.0, abs=1e-12) and m["l_hnmse"] == 0


def test_psnr_known_noise():
    v = np.zeros((4, 64, 64))
    v[:, 20:40, 20:40] = 1.0
    rng = np.random.default_rng(0)
    sigma = 0.05
    noise = rng.standard_normal(v.shape)
    noise = sigma * (noise - noise.mean()) / noise.std()
    assert dt.psnr(v, v + noise) == pytest.approx(10 * np.log10(1 / sigma ** 2), abs=0.1)


def test_single_scale_matches_skimage():
    rng = np.random.default_rng(1)
    a = rng.random((40, 40))
    b = a + 0.2 * rng.standard_normal((40, 40))
    ours = dt.ms_ssim2d(a, b, 1.0, levels=1)
    ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert ours == pytest.approx(ref, abs=1e-10)


def test_ms_ssim_levels():
    assert dt.ms_ssim_levels(256, 256) == 5
    assert dt.ms_ssim_levels(32, 32) == 2
    assert dt.ms_ssim_levels(16, 16) == 1
    with pytest.raises(ValueError):
        dt.ms_ssim_levels(8, 8)


def test_ms_ssim_ordering_and_range():
    v = _vol(3)[:, :, :] / _vol(3).max()
    inv = 1.0 - v
    noisy = v + 0.05 * np.random.default_rng(0).standard_normal(v.shape)
    s_inv, s_noisy = dt.ms_ssim(v, inv), dt.ms_ssim(v, noisy)
    assert -1 <= s_inv < s_noisy < 1.0


def test_ms_ssim_five_scales_on_large_image():
    rng = np.random.default_rng(2)
    a = dt.ndimage.gaussian_filter(rng.random((256, 256)), 3)
    b = a + 0.01 * rng.standard_normal(a.shape)
    s = dt.ms_ssim2d(a, b, float(a.max() - a.min()))
    assert 0 < s < 1


def test_metrics_errors():
    with pytest.raises(ValueError):
        dt.metrics_eval(np.ones((2, 16, 16)), np.ones((1, 16, 16)))
    with pytest.raises(ValueError):
        dt.metrics_eval(np.zeros((1, 16, 16)), np.zeros((1, 16, 16)))
