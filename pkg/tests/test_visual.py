import numpy as np
import pytest

from tenrmot.errors import InputError
from tenrmot.visual import VisualEncoder


@pytest.fixture(scope="module")
def enc():
    return VisualEncoder(np.random.default_rng(0), d=16, stem=8, c4=12, c8=20)


def test_shapes(enc):
    f4, f8 = enc(np.random.default_rng(1).random((64, 64, 3)))
    assert f8.features.shape == (8, 8, 16) and f8.stride == 8
    assert f4.features.shape == (16, 16, 12) and f4.stride == 4


@pytest.mark.parametrize("hw", [(32, 48), (8, 8), (40, 16)])
def test_shapes_for_other_sizes(enc, hw):
    f4, f8 = enc(np.zeros(hw + (3,)))
    assert f8.hw == (hw[0] // 8, hw[1] // 8)
    assert f4.hw == (hw[0] // 4, hw[1] // 4)


def test_rejects_indivisible_size(enc):
    with pytest.raises(InputError):
        enc(np.zeros((60, 64, 3)))


def test_constant_image_gives_constant_maps(enc):
    f4, f8 = enc(np.full((64, 64, 3), 0.3))
    for fm in (f4, f8):
        flat = fm.features.data.reshape(-1, fm.features.shape[-1])
        np.testing.assert_allclose(flat, np.broadcast_to(flat[0], flat.shape), rtol=0, atol=1e-12)


def _reach(size, layers):
    """Output cells whose receptive field contains input pixel ``size``:
    propagate an interval through (kernel 3, stride s, replicate pad 1)."""
    lo, hi = size, size
    for stride, n_out in layers:
        # output o reads inputs clip(o*stride - 1 + k, 0, n_in-1) for k in 0..2
        lo = max(0, -(-(lo - 1) // stride))
        hi = min(n_out - 1, (hi + 1) // stride)
    return lo, hi


def test_single_pixel_edit_stays_in_receptive_field(enc):
    rng = np.random.default_rng(2)
    a = rng.random((64, 64, 3))
    b = a.copy()
    y, x = 37, 21
    b[y, x] += 0.5
    _, fa = enc(a)
    _, fb = enc(b)
    diff = np.abs(fa.features.data - fb.features.data).max(axis=-1) > 0
    layers = [(2, 32), (2, 16), (1, 16), (2, 8)]
    ry, rx = _reach(y, layers), _reach(x, layers)
    allowed = np.zeros((8, 8), bool)
    allowed[ry[0] : ry[1] + 1, rx[0] : rx[1] + 1] = True
    assert diff.any()
    assert not diff[~allowed].any()
