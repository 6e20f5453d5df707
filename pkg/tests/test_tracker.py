import numpy as np
import pytest

from tenrmot.config import ModelConfig
from tenrmot.errors import ConfigError, ContractError
from tenrmot.tracker import TrackSet, TrackState, propagate, spawn, update_track_query


def test_endpoints():
    e, q = np.array([0.3, -1.0]), np.array([2.0, 5.0])
    assert np.array_equal(update_track_query(e, q, 1.0), e)
    assert np.array_equal(update_track_query(e, q, 0.0), q)


def test_blend_arithmetic():
    out = update_track_query(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.8)
    np.testing.assert_allclose(out, [0.8, 0.2], rtol=0, atol=1e-15)  # 1 - 0.8 is not 0.2 in binary


def test_blend_matches_formula_exactly():
    rng = np.random.default_rng(0)
    for _ in range(100):
        e, q, a = rng.normal(size=8), rng.normal(size=8), rng.random()
        assert np.array_equal(update_track_query(e, q, a), a * e + (1 - a) * q)


def test_default_alpha():
    assert ModelConfig().alpha == 0.8


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_alpha_out_of_range(alpha):
    with pytest.raises(ConfigError):
        update_track_query(np.zeros(2), np.zeros(2), alpha)


def one_track(miss=0):
    return TrackSet([TrackState(1, np.zeros(2), np.full(4, 0.5), miss_count=miss)], next_id=2)


def test_passing_track_resets_and_moves():
    box = np.array([0.1, 0.2, 0.3, 0.4])
    out = propagate(one_track(miss=3), np.ones((1, 2)), box[None], np.array([0.9]), np.array([0.8]), 0.8)
    assert out.tracks[0].miss_count == 0
    assert np.array_equal(out.tracks[0].anchor, box)
    np.testing.assert_allclose(out.tracks[0].content, [0.8, 0.8])


def test_track_dies_after_tolerance():
    tracks = one_track()
    lived = 0
    while len(tracks):
        tracks = propagate(tracks, np.zeros((len(tracks), 2)), np.full((len(tracks), 4), 0.5),
                           np.full(len(tracks), 0.1), np.full(len(tracks), 0.9), 0.8, miss_tolerance=5)
        lived += 1
    assert lived == 5


def test_low_ref_counts_as_miss():
    out = propagate(one_track(), np.zeros((1, 2)), np.full((1, 4), 0.5), np.array([0.95]),
                    np.array([0.3]), 0.8)
    assert out.tracks[0].miss_count == 1 and not out.tracks[0].visible


def test_empty_propagation():
    out = propagate(TrackSet(), np.zeros((0, 2)), np.zeros((0, 4)), np.zeros(0), np.zeros(0), 0.8)
    assert len(out) == 0


def test_misaligned_rows():
    with pytest.raises(ContractError):
        propagate(one_track(), np.zeros((2, 2)), np.zeros((2, 4)), np.zeros(2), np.zeros(2), 0.8)


def test_two_births_with_consecutive_ids():
    tracks = TrackSet(next_id=4)
    born = spawn(tracks, np.eye(2), np.full((2, 4), 0.5), np.array([0.9, 0.8]), np.array([0.6, 0.5]))
    assert [b.id for b in born] == [4, 5] and tracks.next_id == 6
    assert np.array_equal(born[1].content, [0.0, 1.0])


def test_low_ref_prevents_birth():
    tracks = TrackSet()
    assert spawn(tracks, np.eye(1), np.full((1, 4), 0.5), np.array([0.9]), np.array([0.3])) == []


def test_empty_spawn():
    tracks = TrackSet(next_id=3)
    assert spawn(tracks, np.zeros((0, 2)), np.zeros((0, 4)), np.zeros(0), np.zeros(0)) == []
    assert tracks.next_id == 3
