import numpy as np
import pytest
from PIL import Image

from mrsrgan.dataset import SliceImage
from mrsrgan.degradation import (
    DegradationSpec,
    bicubic_upsample,
    downsample,
    downsample_array,
    keys_kernel,
    make_pair,
    resize_axis,
    resize_matrix,
    upsample_array,
)
from mrsrgan.errors import DegradeError


def smooth_image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w] / max(h, w)
    img = 0.5 + 0.2 * np.sin(2 * np.pi * (x * rng.uniform(0.5, 1.5) + y * rng.uniform(0.5, 1.5)))
    img += 0.1 * np.cos(2 * np.pi * 2 * x) * np.sin(2 * np.pi * y)
    return np.clip(img, 0, 1)


def direct_resample(img, out_h, out_w, antialias=True, a=-0.5):
    """Per-output-pixel loop: stretched Keys kernel, edge replication, normalized weights."""

    def weights(n_in, n_out):
        scale = n_out / n_in
        s = 1 / scale if antialias and scale < 1 else 1.0
        table = []
        for i in range(n_out):
            c = (i + 0.5) / scale - 0.5
            taps = {}
            for j in range(int(np.floor(c - 2 * s)) - 1, int(np.ceil(c + 2 * s)) + 2):
                x = abs((j - c) / s)
                if x <= 1:
                    wgt = (a + 2) * x**3 - (a + 3) * x**2 + 1
                elif x < 2:
                    wgt = a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
                else:
                    continue
                k = min(max(j, 0), n_in - 1)
                taps[k] = taps.get(k, 0.0) + wgt
            total = sum(taps.values())
            table.append({k: v / total for k, v in taps.items()})
        return table

    wh, ww = weights(img.shape[0], out_h), weights(img.shape[1], out_w)
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            out[i, j] = sum(a_ * b_ * img[p, q] for p, a_ in wh[i].items() for q, b_ in ww[j].items())
    return out


def pil_resize(img, out_h, out_w):
    return np.asarray(Image.fromarray(img.astype(np.float32), mode="F").resize((out_w, out_h), Image.BICUBIC))


# -- kernel ------------------------------------------------------------------


def test_keys_kernel_values():
    assert keys_kernel(0.0) == 1.0
    assert keys_kernel(1.0) == 0.0 and keys_kernel(2.0) == 0.0 and keys_kernel(2.5) == 0.0
    assert keys_kernel(0.5) == pytest.approx(0.5625)
    assert keys_kernel(1.5) == pytest.approx(-0.0625)


@pytest.mark.parametrize("t", np.linspace(0, 1, 11))
def test_keys_partition_of_unity_and_linear_reproduction(t):
    k = np.arange(-2, 4)
    w = keys_kernel(t - k)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert (w * k).sum() == pytest.approx(t, abs=1e-14)


def test_resize_matrix_rows_sum_to_one():
    for n_in, n_out, aa in [(224, 56, True), (28, 224, False), (10, 5, False), (7, 21, True)]:
        m = resize_matrix(n_in, n_out, aa)
        assert m.shape == (n_out, n_in)
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-14)


# -- downsample --------------------------------------------------------------


def test_downsample_iso_shape():
    out = downsample(SliceImage(smooth_image(224, 224)), DegradationSpec(4, 4))
    assert out.shape == (56, 56)


def test_downsample_aniso_shape():
    out = downsample(SliceImage(smooth_image(224, 224)), DegradationSpec(8, 1))
    assert out.shape == (28, 224)


@pytest.mark.parametrize("factors", [(2, 2), (4, 4), (8, 1), (3, 5)])
def test_downsample_constant(factors):
    img = SliceImage(np.full((120, 120), 0.5))
    out = downsample(img, DegradationSpec(*factors))
    assert np.allclose(out.pixels, 0.5, atol=1e-15)


def test_downsample_non_divisible():
    with pytest.raises(DegradeError):
        downsample(SliceImage(np.zeros((100, 224))), DegradationSpec(8, 1))


def test_downsample_identity_bit_exact():
    img = SliceImage(smooth_image(37, 23))
    out = downsample(img, DegradationSpec(1, 1))
    assert np.array_equal(out.pixels, img.pixels)


@pytest.mark.parametrize("factors", [(4, 4), (8, 8), (8, 1), (2, 3)])
def test_downsample_mean_preserved(factors):
    img = smooth_image(216, 216, seed=4)
    out = downsample_array(img, DegradationSpec(*factors))
    assert abs(out.mean() - img.mean()) < 1e-3


@pytest.mark.parametrize("factors", [(4, 4), (8, 1), (2, 3)])
def test_downsample_separable(factors):
    img = smooth_image(48, 48, seed=2)
    spec = DegradationSpec(*factors)
    two_d = downsample_array(img, spec)
    h_then_w = resize_axis(resize_axis(img, 0, 48 // factors[0]), 1, 48 // factors[1])
    assert np.max(np.abs(two_d - np.clip(h_then_w, 0, 1))) < 1e-6


@pytest.mark.parametrize("antialias", [True, False])
def test_downsample_matches_direct_loop(antialias):
    img = np.random.default_rng(9).random((16, 12))
    spec = DegradationSpec(4, 2, antialias=antialias)
    expected = np.clip(direct_resample(img, 4, 6, antialias), 0, 1)
    assert np.allclose(downsample_array(img, spec), expected, atol=1e-12)


def test_downsample_interior_matches_pil():
    img = np.random.default_rng(5).random((64, 64))
    ours = resize_axis(resize_axis(img, 0, 16), 1, 16)
    ref = pil_resize(img, 16, 16)
    # PIL truncates the kernel at borders instead of replicating edges
    assert np.max(np.abs(ours[2:-2, 2:-2] - ref[2:-2, 2:-2])) < 1e-5


def test_downsample_clamped(rng):
    img = (rng.random((64, 64)) > 0.5).astype(float)
    out = downsample_array(img, DegradationSpec(4, 4, antialias=False))
    assert out.min() >= 0 and out.max() <= 1


# -- upsample ----------------------------------------------------------------


def test_upsample_shapes():
    assert bicubic_upsample(SliceImage(smooth_image(56, 56)), 4, 4).shape == (224, 224)
    assert bicubic_upsample(SliceImage(smooth_image(28, 224)), 8, 1).shape == (224, 224)


def test_upsample_linear_ramp_exact():
    n = 16
    ramp = np.tile(0.1 + 0.05 * np.arange(n), (5, 1))
    out = upsample_array(ramp, 1, 2)
    x_in = (np.arange(2 * n) + 0.5) / 2 - 0.5
    analytic = 0.1 + 0.05 * x_in
    # output samples whose 4-tap support lies inside the image: x_in in [1, n-2]
    interior = (x_in >= 1) & (x_in <= n - 2)
    assert interior.sum() == 2 * n - 6
    assert np.max(np.abs(out[:, interior] - analytic[interior])) < 1e-14


def test_upsample_constant_exact():
    out = upsample_array(np.full((7, 9), 0.3), 4, 4)
    assert np.allclose(out, 0.3, atol=1e-15)


def test_upsample_interior_matches_pil():
    img = np.random.default_rng(6).random((20, 20))
    ours = resize_axis(resize_axis(img, 0, 40, antialias=False), 1, 40, antialias=False)
    ref = pil_resize(img, 40, 40)
    assert np.max(np.abs(ours[4:-4, 4:-4] - ref[4:-4, 4:-4])) < 1e-5


def test_upsample_matches_direct_loop():
    img = np.random.default_rng(8).random((6, 5))
    assert np.allclose(upsample_array(img, 2, 3), np.clip(direct_resample(img, 12, 15, False), 0, 1), atol=1e-12)


def test_reflect_boundary_differs_only_at_border():
    img = np.random.default_rng(2).random((20, 20))
    edge = upsample_array(img, 2, 2, boundary="edge")
    refl = upsample_array(img, 2, 2, boundary="reflect")
    assert np.array_equal(edge[4:-4, 4:-4], refl[4:-4, 4:-4])
    assert not np.array_equal(edge, refl)


# -- pairs -------------------------------------------------------------------


def test_make_pair_iso8():
    lr, hr = make_pair(SliceImage(smooth_image(224, 224)), DegradationSpec(8, 8))
    assert lr.shape == (28, 28) and hr.shape == (224, 224)


def test_make_pair_identity():
    img = SliceImage(smooth_image(224, 224))
    lr, hr = make_pair(img, DegradationSpec(1, 1))
    assert np.array_equal(lr.pixels, hr.pixels)


def test_make_pair_aniso4():
    lr, hr = make_pair(SliceImage(smooth_image(224, 224)), DegradationSpec(4, 1))
    assert lr.shape == (224 // 4, 224) == (56, 224)
    assert hr.shape == (224, 224)


def test_spec_validation():
    with pytest.raises(ValueError):
        DegradationSpec(0, 1)
    with pytest.raises(ValueError):
        DegradationSpec(2, 2, kernel="lanczos")
    assert DegradationSpec(4, 4).isotropic and not DegradationSpec(8, 1).isotropic
