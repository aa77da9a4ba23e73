import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import fd_flow_gradient, off_lattice, relative_error

from ssta.errors import FormatError
from ssta.saliency import Mask
from ssta.warp import (
    MaskedWarp,
    apply_flow,
    composite,
    flow_gradient,
    load_flow,
    project_flow,
    save_flow,
    warp,
    zero_flow,
)

sides = st.integers(1, 9)


@st.composite
def scenes(draw, max_flow=1.5):
    h, w, c = draw(sides), draw(sides), draw(st.sampled_from([1, 3]))
    x = draw(arrays(np.float64, (h, w, c), elements=st.floats(0.0, 1.0)))
    flow = draw(arrays(np.float64, (2, h, w), elements=st.floats(-max_flow, max_flow)))
    inside = draw(arrays(np.bool_, (h, w)))
    return x, flow, Mask(inside, 0)


@given(scenes())
def test_zero_flow_is_bit_exact_identity(scene):
    x, _, _ = scene
    assert np.array_equal(warp(x, zero_flow(*x.shape[:2])), x)


def test_half_pixel_shift_by_hand():
    x = np.array([[[0.0], [1.0]]])
    flow = np.zeros((2, 1, 2))
    flow[0, 0, 0] = 0.5
    assert warp(x, flow)[0, 0, 0] == 0.5


def test_integer_shift_clamps_at_border():
    x = np.array([[[0.0], [0.5], [1.0]]])
    flow = np.zeros((2, 1, 3))
    flow[0] = 1.0
    assert warp(x, flow).ravel().tolist() == [0.5, 1.0, 1.0]


def test_vertical_component_moves_rows():
    x = np.array([[[0.0]], [[1.0]]])
    flow = np.zeros((2, 2, 1))
    flow[1, 0, 0] = 0.25
    assert warp(x, flow).ravel().tolist() == [0.25, 1.0]


@given(scenes(max_flow=4.0))
def test_warp_stays_in_range_of_source(scene):
    x, flow, _ = scene
    out = warp(x, flow)
    assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12


def test_composite_rules(rng):
    x = rng.random((4, 6, 3))
    warped = rng.random((4, 6, 3)) * 1.4 - 0.2
    empty = Mask(np.zeros((4, 6), bool))
    assert np.array_equal(composite(x, warped, empty), x)
    assert np.array_equal(composite(x, warped, Mask.full((4, 6))), np.clip(warped, 0, 1))
    half = Mask(np.arange(24).reshape(4, 6) % 6 < 3)
    out = composite(x, warped, half)
    assert np.array_equal(out[~half.inside], x[~half.inside])
    assert np.array_equal(out[half.inside], np.clip(warped, 0, 1)[half.inside])
    with pytest.raises(ValueError):
        composite(x, warped[:3], half)


@given(scenes(max_flow=3.0))
def test_pixels_outside_mask_never_change(scene):
    x, flow, mask = scene
    out = apply_flow(x, flow, mask)
    assert np.array_equal(out[~mask.inside], x[~mask.inside])


def test_flow_gradient_trivial_cases(rng):
    x = rng.random((5, 5, 3))
    flow = rng.uniform(-0.4, 0.4, (2, 5, 5))
    g = rng.normal(size=x.shape)
    assert not flow_gradient(x, flow, Mask.full((5, 5)), np.zeros_like(x)).any()
    assert not flow_gradient(x, flow, Mask(np.zeros((5, 5), bool)), g).any()
    with pytest.raises(ValueError):
        flow_gradient(x, flow[:, :4], Mask.full((5, 5)), g)
    with pytest.raises(ValueError):
        flow_gradient(x, flow, Mask.full((5, 5)), g[:4])


@given(scenes(max_flow=2.5), st.integers(0, 2**32 - 1))
def test_flow_gradient_matches_finite_differences(scene, seed):
    x, flow, mask = scene
    g = np.random.default_rng(seed).normal(size=x.shape)
    analytic = flow_gradient(x, flow, mask, g)
    numeric = fd_flow_gradient(x, flow, mask, g)
    keep = off_lattice(flow)
    assert relative_error(analytic, numeric)[keep].max(initial=0.0) < 1e-4


def test_gradient_is_zero_where_sampling_is_clamped(rng):
    x = rng.random((4, 4, 1))
    flow = np.full((2, 4, 4), 0.3)
    flow[0, :, 3] = 0.7  # last column samples beyond the right edge
    grad = flow_gradient(x, flow, Mask.full((4, 4)), np.ones_like(x))
    assert not grad[0, :, 3].any()
    assert grad[0, :, :3].any()


@given(scenes())
def test_masked_warp_agrees_with_functions(scene):
    x, flow, mask = scene
    g = np.linspace(-1, 1, x.size).reshape(x.shape)
    mw = MaskedWarp(x, flow, mask)
    assert np.array_equal(mw.output, apply_flow(x, flow, mask))
    assert np.array_equal(mw.flow_gradient(g), flow_gradient(x, flow, mask, g))


def test_project_examples():
    f = np.array([0.5, -0.3, 0.1]).reshape(1, 1, 3) * np.ones((2, 1, 1))
    out = project_flow(f, 0.2)
    assert out[0].ravel().tolist() == [0.2, -0.2, 0.1]
    assert np.array_equal(project_flow(f, 1.0), f)
    assert not project_flow(f, 0.0).any()
    with pytest.raises(ValueError):
        project_flow(f, -0.1)


@given(arrays(np.float64, (2, 3, 4), elements=st.floats(-5, 5)), arrays(np.float64, (2, 3, 4), elements=st.floats(-5, 5)), st.floats(0, 3))
def test_projection_idempotent_and_non_expansive(a, b, xi):
    pa, pb = project_flow(a, xi), project_flow(b, xi)
    assert np.array_equal(project_flow(pa, xi), pa)
    assert np.abs(pa).max() <= xi
    assert np.all(np.abs(pa - pb) <= np.abs(a - b))


@given(arrays(np.float32, st.tuples(st.just(2), sides, sides), elements=st.floats(-8, 8, width=32)))
def test_flow_file_round_trip(tmp_path_factory, flow32):
    path = tmp_path_factory.mktemp("flo") / "f.flo"
    flow = flow32.astype(np.float64)
    save_flow(flow, path)
    back = load_flow(path)
    assert back.dtype == np.float64 and np.array_equal(back, flow)
    assert path.read_bytes()[:8] == b"SSTAFLO1"


def test_flow_file_errors(tmp_path):
    path = tmp_path / "f.flo"
    save_flow(np.zeros((2, 3, 3)), path)
    raw = path.read_bytes()
    (tmp_path / "magic.flo").write_bytes(b"NOTAFLOW" + raw[8:])
    with pytest.raises(FormatError, match="magic"):
        load_flow(tmp_path / "magic.flo")
    (tmp_path / "short.flo").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="payload"):
        load_flow(tmp_path / "short.flo")
    (tmp_path / "head.flo").write_bytes(raw[:12])
    with pytest.raises(FormatError, match="truncated"):
        load_flow(tmp_path / "head.flo")
