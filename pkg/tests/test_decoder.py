import numpy as np
import pytest

from gradcheck import check
from tenrmot.decoder import (
    LanguageGuidedDecoder,
    MaskHead,
    PredictionHeads,
    build_queries,
)
from tenrmot.errors import ContractError
from tenrmot.ice import Memory
from tenrmot.tensor import Tensor
from tenrmot.visual import FeatureMap

D = 8


def det(rng, n=5):
    return rng.normal(size=(n, D)), rng.uniform(0.2, 0.8, size=(n, 4))


def test_no_tracks_gives_detect_rows_only():
    c, a = det(np.random.default_rng(0))
    batch = build_queries(c, a)
    assert len(batch) == 5 and batch.n_detect == 5
    assert not batch.is_track.any()


def test_tracks_are_appended_after_detect_rows():
    rng = np.random.default_rng(1)
    c, a = det(rng)
    tracks = [rng.normal(size=D) for _ in range(3)]
    batch = build_queries(c, a, tracks, rng.uniform(size=(3, 4)), [7, 8, 9])
    assert len(batch) == 8
    assert batch.track_rows().tolist() == [5, 6, 7]
    assert batch.track_ids[5:].tolist() == [7, 8, 9]
    np.testing.assert_array_equal(batch.content.data[6], tracks[1])


def test_zero_sentence_feature_is_plain_concatenation():
    rng = np.random.default_rng(2)
    c, a = det(rng)
    t = [rng.normal(size=D)]
    plain = build_queries(c, a, t, [[0.5] * 4], [1])
    injected = build_queries(c, a, t, [[0.5] * 4], [1], Tensor(np.zeros(D)))
    np.testing.assert_array_equal(plain.content.data, injected.content.data)


def test_injection_is_uniform():
    rng = np.random.default_rng(3)
    row = rng.normal(size=D)
    batch = build_queries(np.stack([row, row]), np.full((2, 4), 0.5), f_s=Tensor(rng.normal(size=D)))
    np.testing.assert_array_equal(batch.content.data[0], batch.content.data[1])


def test_width_mismatch():
    c, a = det(np.random.default_rng(4))
    with pytest.raises(ContractError):
        build_queries(c, a, [np.zeros(D + 1)], [[0.5] * 4], [1])
    with pytest.raises(ContractError):
        build_queries(c, a, f_s=Tensor(np.zeros(D + 2)))


def _memory(rng, h=2, w=3):
    return Memory(Tensor(rng.normal(size=(h * w, D))), h, w)


def test_decode_shape_and_determinism():
    rng = np.random.default_rng(5)
    dec = LanguageGuidedDecoder(rng, D, layers=2, heads=2)
    c, a = det(rng)
    batch = build_queries(c, a, [rng.normal(size=D)], [[0.4] * 4], [3])
    mem = _memory(rng)
    out = dec(mem, batch)
    assert out.shape == (6, D)
    np.testing.assert_array_equal(out.data, dec(mem, batch).data)


def test_zero_layer_decoder_is_identity():
    rng = np.random.default_rng(6)
    dec = LanguageGuidedDecoder(rng, D, layers=0)
    c, a = det(rng)
    batch = build_queries(c, a)
    np.testing.assert_array_equal(dec(_memory(rng), batch).data, c)


@pytest.mark.parametrize("seed", range(3))
def test_decoder_layer_gradients(seed):
    rng = np.random.default_rng(seed)
    dec = LanguageGuidedDecoder(rng, D, layers=1, heads=2)
    target = rng.normal(size=(4, D))
    h, w = 2, 2

    def loss(content, anchors, mem):
        from tenrmot.decoder import QueryBatch

        batch = QueryBatch(content, anchors, np.zeros(4, bool), np.full(4, -1))
        return (dec(Memory(mem, h, w), batch) * target).sum()

    arrays = [rng.normal(size=(4, D)), rng.uniform(0.2, 0.8, size=(4, 4)), rng.normal(size=(h * w, D))]
    assert check(loss, arrays) < 1e-3


def test_zero_offsets_reproduce_anchor():
    rng = np.random.default_rng(7)
    heads = PredictionHeads(rng, D)
    anchors = rng.uniform(0.1, 0.9, size=(3, 4))
    out = heads(Tensor(rng.normal(size=(3, D))), Tensor(anchors))
    np.testing.assert_allclose(out.boxes.data, anchors, rtol=1e-12)


def test_zero_conf_logit_gives_half():
    rng = np.random.default_rng(8)
    heads = PredictionHeads(rng, D)
    heads.conf.weight.data[...] = 0.0
    heads.conf.bias.data[...] = 0.0
    out = heads(Tensor(rng.normal(size=(2, D))), Tensor(np.full((2, 4), 0.5)))
    np.testing.assert_array_equal(out.conf, [0.5, 0.5])


def test_boxes_stay_in_unit_square_and_degenerate_anchors_are_clamped():
    rng = np.random.default_rng(9)
    heads = PredictionHeads(rng, D)
    heads.box.layers[-1].bias.data[...] = [1e3, -1e3, 1e3, -1e3]
    anchors = np.array([[0.0, 1.0, 0.5, 0.5], [1.0, 0.0, 0.0, 1.0]])
    boxes = heads(Tensor(rng.normal(size=(2, D))), Tensor(anchors)).boxes.data
    assert np.all(np.isfinite(boxes))
    assert np.all((boxes >= 0) & (boxes <= 1))


def _mask_inputs(rng, c4=6):
    f4 = FeatureMap(Tensor(rng.normal(size=(4, 6, c4))), 4)
    return f4, _memory(rng, 2, 3)


def test_mask_shape():
    rng = np.random.default_rng(10)
    head = MaskHead(rng, D, 6)
    f4, mem = _mask_inputs(rng)
    assert head.predict_masks(Tensor(rng.normal(size=(5, D))), f4, mem).shape == (5, 4, 6)


def test_zero_segmentation_vector_gives_zero_logits():
    rng = np.random.default_rng(11)
    head = MaskHead(rng, D, 6)
    head.seg.layers[-1].weight.data[...] = 0.0
    head.seg.layers[-1].bias.data[...] = 0.0
    f4, mem = _mask_inputs(rng)
    assert np.all(head.predict_masks(Tensor(rng.normal(size=(2, D))), f4, mem).data == 0.0)


def test_one_pixel_logit_is_inner_product():
    rng = np.random.default_rng(12)
    head = MaskHead(rng, D, 6)
    pixels = Tensor(rng.normal(size=(1, D)))
    emb = Tensor(rng.normal(size=(1, D)))
    q = head.seg(emb).data[0]
    logit = head.masks_from_pixels(emb, pixels, (1, 1)).data[0, 0, 0]
    assert logit == pytest.approx(sum(p * c for p, c in zip(pixels.data[0], q)), rel=1e-12)


def test_mask_dimension_mismatch():
    rng = np.random.default_rng(13)
    head = MaskHead(rng, D, 6)
    f4 = FeatureMap(Tensor(rng.normal(size=(4, 4, 6))), 4)
    with pytest.raises(ContractError):
        head.predict_masks(Tensor(rng.normal(size=(1, D))), f4, _memory(rng, 2, 3))


def test_bilinear_upsampling_preserves_constants():
    from tenrmot.decoder import bilinear_matrix

    u = bilinear_matrix(8, 4)
    np.testing.assert_allclose(u.sum(axis=1), 1.0)
    np.testing.assert_allclose(u @ np.arange(4.0), np.clip((np.arange(8) + 0.5) / 2 - 0.5, 0, 3))
