import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image as PILImage

from ssta.errors import DecodeError
from ssta.image import amplify_diff, as_image, load_image, luma, quantize, resize_bilinear, save_image, to_gray8


def byte_images(max_side=12):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.sampled_from([1, 3]))
    return shapes.flatmap(lambda s: arrays(np.uint8, s))


def unit_images(max_side=10):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.sampled_from([1, 3]))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=st.floats(0.0, 1.0)))


def test_pgm_bytes_map_to_unit_interval(tmp_path):
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
    img = load_image(path)
    assert img.shape == (2, 2, 1)
    assert img.ravel().tolist() == [0.0, 1.0, 0.0, 1.0]


def test_ppm_color_is_preserved(tmp_path):
    path = tmp_path / "tiny.ppm"
    path.write_bytes(b"P6\n1 1\n255\n" + bytes([10, 20, 30]))
    assert (load_image(path)[0, 0] * 255).tolist() == [10.0, 20.0, 30.0]


def test_16bit_png_is_rejected(tmp_path):
    path = tmp_path / "deep.png"
    PILImage.fromarray(np.full((3, 3), 1000, dtype=np.uint16)).save(path)
    with pytest.raises(DecodeError, match="unsupported bit depth"):
        load_image(path)


@pytest.mark.parametrize("mode", ["RGBA", "P", "LA"])
def test_other_png_color_types_are_rejected(tmp_path, mode):
    path = tmp_path / "odd.png"
    PILImage.new(mode, (3, 3)).save(path)
    with pytest.raises(DecodeError, match="unsupported color type"):
        load_image(path)


def test_missing_and_garbage_files(tmp_path):
    with pytest.raises(DecodeError, match="unreadable"):
        load_image(tmp_path / "nope.png")
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"hello world, not an image")
    with pytest.raises(DecodeError):
        load_image(junk)


def test_save_endpoints_and_half_rounding(tmp_path):
    save_image(np.array([[0.0, 1.0]]), tmp_path / "a.png")
    assert np.array(PILImage.open(tmp_path / "a.png")).tolist() == [[0, 255]]
    save_image(np.array([[0.5]]), tmp_path / "b.pgm")
    assert np.array(PILImage.open(tmp_path / "b.pgm")).tolist() == [[128]]


def _exact_half(k):
    """A float x with x * 255 == k + 0.5 exactly, or None."""
    x = (k + 0.5) / 255.0
    for cand in (x, np.nextafter(x, 0.0), np.nextafter(x, 1.0)):
        if cand * 255.0 == k + 0.5:
            return cand
    return None


def test_quantize_rounds_half_away_from_zero():
    halves = [(k, _exact_half(k)) for k in range(255)]
    halves = [(k, x) for k, x in halves if x is not None]
    assert len(halves) > 200
    for k, x in halves:
        assert quantize(np.array([x]))[0] == k + 1
    assert quantize(np.array([0.5])).tolist() == [128]
    assert quantize(np.array([0.0, 1.0, 2.0, -0.1])).tolist() == [0, 255, 255, 0]


def test_unknown_extension(tmp_path):
    with pytest.raises(ValueError, match="extension"):
        save_image(np.zeros((2, 2, 3)), tmp_path / "x.jpg")


@given(byte_images(), st.sampled_from([".png", ".ppm"]))
def test_save_load_round_trip_is_identity(tmp_path_factory, data, ext):
    path = tmp_path_factory.mktemp("rt") / f"img{ext}"
    img = data / 255.0
    save_image(img, path)
    back = load_image(path)
    assert back.shape == img.shape
    assert np.array_equal(back, img)
    assert np.array_equal(quantize(back), data)


def test_as_image_validation():
    assert as_image(np.zeros((2, 3))).shape == (2, 3, 1)
    with pytest.raises(ValueError):
        as_image(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        as_image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValueError):
        as_image(np.full((2, 2, 3), np.nan))
    with pytest.raises(ValueError):
        as_image(np.zeros((0, 2, 3)))


def test_luma_weights():
    px = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])
    assert luma(px)[0].tolist() == [0.299, 0.587, 0.114]
    assert to_gray8(np.ones((1, 1, 3)))[0, 0] == 255


def test_resize_same_size_is_identity(rng):
    img = rng.random((7, 5, 3))
    assert np.array_equal(resize_bilinear(img, 7, 5), img)


def test_resize_constant_stays_constant():
    out = resize_bilinear(np.full((5, 4, 3), 0.3), 9, 2)
    assert out.shape == (9, 2, 3)
    assert np.allclose(out, 0.3, rtol=0, atol=1e-15)


@pytest.mark.parametrize("vertical", [True, False])
def test_resize_ramp_downscale(vertical):
    ramp = np.array([0.0, 1 / 3, 2 / 3, 1.0])
    img = ramp[:, None, None] if vertical else ramp[None, :, None]
    out = resize_bilinear(img, 2, 1) if vertical else resize_bilinear(img, 1, 2)
    # source coordinates (d + 0.5) * 2 - 0.5 = 0.5 and 2.5
    assert np.allclose(out.ravel(), [1 / 6, 5 / 6], rtol=0, atol=1e-15)


def test_resize_upscale_clamps_at_borders():
    out = resize_bilinear(np.array([[[0.0], [1.0]]]), 1, 4)
    # coordinates -0.25, 0.25, 0.75, 1.25 clamp to [0, 1]
    assert np.allclose(out.ravel(), [0.0, 0.25, 0.75, 1.0])


@given(unit_images(), st.integers(1, 12), st.integers(1, 12))
def test_resize_stays_within_input_range(img, h, w):
    out = resize_bilinear(img, h, w)
    assert out.shape == (h, w, img.shape[2])
    assert out.min() >= img.min() - 1e-12
    assert out.max() <= img.max() + 1e-12


def test_amplify_examples():
    x = np.full((1, 2, 1), 0.4)
    assert np.array_equal(amplify_diff(x, x, 30), np.full_like(x, 0.5))
    assert amplify_diff(x, x + 0.1, 30).ravel().tolist() == [1.0, 1.0]
    assert np.allclose(amplify_diff(x, x - 0.01, 30), 0.2, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        amplify_diff(np.zeros((2, 2, 1)), np.zeros((2, 3, 1)))


@given(unit_images(), st.floats(0.1, 100.0))
def test_amplify_of_identical_pair_is_mid_gray(img, k):
    assert np.array_equal(amplify_diff(img, img, k), np.full_like(img, 0.5))
