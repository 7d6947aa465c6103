import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twopath.core import BatchNorm, Conv2d, Module
from twopath.inflation import InflationSpec, boring_video_equivalence, inflate_2d_to_3d, inflate_state
from twopath.pathways import HolisticPathway


def test_inflate_small_example():
    w = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
    out = inflate_2d_to_3d(w, 2)
    assert out.shape == (1, 1, 2, 2, 2)
    for t in range(2):
        np.testing.assert_array_equal(out[0, 0, t], [[0.5, 1.0], [1.5, 2.0]])


def test_inflate_single_slice_is_identity():
    w = np.random.default_rng(0).standard_normal((3, 2, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(inflate_2d_to_3d(w, 1), w[:, :, None])


def test_inflate_temporal_sum_random():
    w = np.random.default_rng(1).standard_normal((4, 3, 3, 3))
    np.testing.assert_allclose(inflate_2d_to_3d(w, 4).sum(axis=2), w, atol=1e-7)


def test_inflate_zero_extent_rejected():
    with pytest.raises(ValueError):
        inflate_2d_to_3d(np.ones((1, 1, 1, 1)), 0)
    with pytest.raises(ValueError):
        InflationSpec(0, (1, 1, 1, 1))


def test_boring_video_trivial_cases():
    assert boring_video_equivalence(np.zeros((2, 6, 6)), np.ones((3, 2, 3, 3)), np.zeros(3), 3) == 0.0
    assert boring_video_equivalence(np.full((1, 5, 5), 2.0), np.ones((1, 1, 3, 3)), np.zeros(1), 4) == 0.0


def test_boring_video_random():
    rng = np.random.default_rng(2)
    frame = rng.standard_normal((3, 16, 16)).astype(np.float32)
    w = rng.standard_normal((8, 3, 3, 3)).astype(np.float32)
    assert boring_video_equivalence(frame, w, rng.standard_normal(8), 3) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(5, 12), st.sampled_from([1, 3, 5]),
       st.integers(1, 5), st.integers(1, 2), st.integers(0, 10**6))
def test_boring_video_property(c, f, size, k, n_t, stride, seed):
    rng = np.random.default_rng(seed)
    frame = rng.standard_normal((c, size, size)).astype(np.float32)
    w = rng.standard_normal((f, c, k, k)).astype(np.float32)
    assert boring_video_equivalence(frame, w, rng.standard_normal(f), n_t, stride, k // 2) < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10**6))
def test_temporal_sum_property(n_t, seed):
    w = np.random.default_rng(seed).standard_normal((2, 3, 3, 3)).astype(np.float32)
    summed = inflate_2d_to_3d(w, n_t).astype(np.float64).sum(axis=2)
    assert np.max(np.abs(summed - w)) / np.max(np.abs(w)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.integers(1, 6), st.integers(0, 10**6))
def test_inflate_is_linear(a, n_t, seed):
    w = np.random.default_rng(seed).standard_normal((2, 2, 3, 3))
    np.testing.assert_allclose(inflate_2d_to_3d(a * w, n_t), a * inflate_2d_to_3d(w, n_t), rtol=1e-12, atol=1e-12)


class _Frame2D(Module):
    """2D twin of a one-block holistic pathway, with matching parameter names."""

    def __init__(self, rng):
        super().__init__()
        self.conv = Conv2d(1, 4, 3, rng, padding=1)
        self.bn = BatchNorm(4)


def test_inflate_state_maps_kernels_and_copies_the_rest():
    rng = np.random.default_rng(3)
    net3d = HolisticPathway(1, (4,), (4, 8, 8), rng, pools=(((1, 2, 2), (1, 2, 2)),))
    twin = _Frame2D(rng)
    state2d = {f"blocks.0.{k}": v for k, v in twin.state_dict().items()}
    state2d["blocks.0.bn.gamma"] = np.full(4, 0.5, np.float32)
    out = inflate_state(state2d, net3d.state_dict())
    w3 = out["blocks.0.conv.weight"]
    assert w3.shape == (4, 1, 3, 3, 3)
    np.testing.assert_allclose(w3.sum(axis=2), state2d["blocks.0.conv.weight"], atol=1e-6)
    np.testing.assert_array_equal(out["blocks.0.bn.gamma"], state2d["blocks.0.bn.gamma"])
    net3d.load_state_dict(out)


def test_inflate_state_shape_conflict():
    with pytest.raises(ValueError):
        inflate_state({"a": np.zeros(3)}, {"a": np.zeros(4)})
