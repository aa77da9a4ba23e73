import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import mse_naive, uqi_naive, vifp_scipy

from ssta.image import luma, resize_bilinear
from ssta.metrics import (
    SSIM_K1,
    MetricError,
    filter_valid,
    gaussian_kernel,
    metric_report,
    mse,
    psnr,
    scc,
    ssim,
    ssim_maps,
    uqi,
    vifp,
)


def textured(rng, size=48, channels=3):
    """Smooth structure plus fine noise, well inside (0, 1)."""
    coarse = rng.random((6, 6, channels))
    return 0.15 + 0.6 * resize_bilinear(coarse, size, size) + 0.1 * rng.random((size, size, channels))


def blur(img, n):
    k = np.ones(n) / n
    out = np.stack([filter_valid(img[:, :, c], k) for c in range(img.shape[2])], axis=2)
    return resize_bilinear(out, *img.shape[:2])


pairs = st.tuples(st.integers(1, 32), st.integers(1, 32), st.sampled_from([1, 3])).flatmap(
    lambda s: st.tuples(arrays(np.float64, s, elements=st.floats(0, 1)), arrays(np.float64, s, elements=st.floats(0, 1)))
)


def test_mse_and_psnr_examples():
    assert mse(np.zeros((1, 1, 1)), np.ones((1, 1, 1))) == 65025.0
    assert psnr(np.zeros((1, 1, 1)), np.ones((1, 1, 1))) == 0.0
    x = np.full((2, 2, 1), 0.5)
    assert mse(x, x) == 0.0 and psnr(x, x) == math.inf
    # one of 100 pixels off by 1 -> mse 650.25 -> 20 dB
    y = np.zeros((10, 10, 1))
    y[0, 0, 0] = math.sqrt(650.25 * 100) / 255
    assert psnr(np.zeros_like(y), y) == pytest.approx(20.0, abs=1e-12)
    with pytest.raises(ValueError):
        mse(np.zeros((2, 2, 1)), np.zeros((2, 3, 1)))


@settings(max_examples=30)
@given(pairs)
def test_mse_matches_exact_sum(pair):
    x, y = pair
    assert mse(x, y) == mse_naive(x, y)


@settings(max_examples=20)
@given(pairs.filter(lambda p: min(p[0].shape[:2]) >= 8))
def test_uqi_matches_literal_windows(pair):
    x, y = pair
    ref = uqi_naive(x, y)
    if ref is None:
        with pytest.raises(MetricError, match="degenerate"):
            uqi(x, y)
    else:
        assert uqi(x, y) == ref


def test_ssim_identity_and_constant_closed_form(rng):
    x = textured(rng)
    assert ssim(x, x) == 1.0
    c1, c2 = 0.3, 0.7
    a, b = np.full((16, 16, 1), c1), np.full((16, 16, 1), c2)
    C1 = SSIM_K1**2
    assert ssim(a, b) == pytest.approx((2 * c1 * c2 + C1) / (c1**2 + c2**2 + C1), rel=1e-12)


def test_ssim_of_inverted_image_is_low(rng):
    x = textured(rng)
    assert ssim(x, 1.0 - x) < 0.5
    assert ssim(x, 1.0 - x) < 0.0  # structure fully anti-correlated


def test_ssim_matches_scikit_image(rng):
    skm = pytest.importorskip("skimage.metrics")
    for _ in range(5):
        x = textured(rng, 40)
        y = np.clip(x + 0.05 * rng.normal(size=x.shape), 0, 1)
        ref = skm.structural_similarity(
            luma(x), luma(y), data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
        )
        assert ssim(x, y) == pytest.approx(ref, abs=1e-10)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(-0.1, 0.1))
def test_ssim_structure_term_ignores_common_offset(seed, c):
    rng = np.random.default_rng(seed)
    x = 0.2 + 0.6 * rng.random((16, 16, 1))
    y = np.clip(x + 0.05 * rng.normal(size=x.shape), 0.15, 0.85)
    _, cs = ssim_maps(x, y)
    _, cs_shift = ssim_maps(x + c, y + c)
    assert np.allclose(cs, cs_shift, rtol=0, atol=1e-9)


def test_too_small_inputs():
    x = np.zeros((10, 10, 3))
    with pytest.raises(MetricError, match="11x11"):
        ssim(x, x)
    with pytest.raises(MetricError, match="8x8"):
        uqi(x[:7], x[:7])
    with pytest.raises(MetricError, match="32x32"):
        vifp(x, x)


def test_uqi_contracts(rng):
    x = textured(rng, 16)
    assert uqi(x, x) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(MetricError, match="all windows degenerate"):
        uqi(np.full((8, 8, 1), 0.4), np.full((8, 8, 1), 0.4))


def test_scc_contracts(rng):
    x = textured(rng, 20)
    assert scc(x, x) == pytest.approx(1.0, abs=1e-12)
    assert scc(x, 1.0 - x) == pytest.approx(-1.0, abs=1e-12)
    flat = np.full((5, 5, 1), 0.3)
    assert scc(flat, np.full((5, 5, 1), 0.9)) == 0.0


def test_vifp_identity_blur_and_noise(rng):
    x = textured(rng, 64)
    assert vifp(x, x) == pytest.approx(1.0, abs=1e-12)
    mild, heavy = vifp(x, blur(x, 3)), vifp(x, blur(x, 9))
    assert heavy < mild < 1.0
    noise = np.random.default_rng(1).random(x.shape)
    assert vifp(x, noise) < 0.1


def test_vifp_matches_scipy_oracle(rng):
    pytest.importorskip("scipy.signal")
    for size in (32, 48, 64):
        x = textured(rng, size)
        y = np.clip(x + 0.03 * rng.normal(size=x.shape), 0, 1)
        assert vifp(x, y) == pytest.approx(vifp_scipy(x, y), rel=1e-10)


def test_gaussian_kernel_shape():
    k = gaussian_kernel(11, 1.5)
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.array_equal(k, k[::-1]) and k.argmax() == 5


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    x = textured(rng, 32)
    y = np.clip(x + 0.1 * rng.normal(size=x.shape), 0, 1)
    for fn in (mse, psnr, uqi, scc):
        assert fn(x, y) == pytest.approx(fn(y, x), rel=1e-12)
    assert ssim(x, y) == pytest.approx(ssim(y, x), rel=1e-12)
    # ranges
    assert -1 <= ssim(x, y) <= 1 and -1 <= uqi(x, y) <= 1 and -1 <= scc(x, y) <= 1
    assert vifp(x, y) >= 0


def test_report_on_identical_pair(rng):
    x = textured(rng, 64)
    rep = metric_report(x, x)
    assert rep.values() == {"mse": 0.0, "psnr": math.inf, "ssim": 1.0, "uqi": pytest.approx(1.0), "scc": pytest.approx(1.0), "vifp": pytest.approx(1.0)}
    assert rep.to_dict()["psnr"] is None and not rep.errors


def test_report_on_tiny_pair(rng):
    x, y = rng.random((4, 4, 3)), rng.random((4, 4, 3))
    rep = metric_report(x, y)
    assert rep.mse == mse(x, y) and rep.psnr == psnr(x, y)
    assert rep.scc is not None
    for name in ("ssim", "uqi", "vifp"):
        assert getattr(rep, name) is None and name in rep.errors
    with pytest.raises(ValueError):
        metric_report(x, y[:3])
