"""Tests for the core data model: frames, episodes, chunk slicing, latency."""

import math

import numpy as np
import pytest

from fabg.model import (
    ACTION_DIM,
    ACTION_HIGH,
    ACTION_LOW,
    BLENDSHAPE_COUNT,
    BLENDSHAPE_NAMES,
    HEAD_YAW_INDEX,
    JAW_OPEN_INDEX,
    ActionFrame,
    Episode,
    EpisodeRangeError,
    LatencyModel,
    Observation,
    slice_chunk,
    slice_chunk_extended,
    ticks_from_seconds,
    validate_frame,
)


def _episode(n, rate=30.0, seed=0):
    rng = np.random.default_rng(seed)
    acts = rng.uniform(0.0, 1.0, size=(n, ACTION_DIM)).astype(np.float32)
    return Episode(rate_hz=rate, actions=acts)


def test_layout_constants():
    assert ACTION_DIM == 61
    assert BLENDSHAPE_COUNT == 58
    assert len(BLENDSHAPE_NAMES) == 58
    assert len(set(BLENDSHAPE_NAMES)) == 58
    assert BLENDSHAPE_NAMES[JAW_OPEN_INDEX] == "jawOpen"
    assert JAW_OPEN_INDEX == 24
    assert HEAD_YAW_INDEX == 60
    assert ACTION_LOW.shape == (61,) and ACTION_HIGH.shape == (61,)
    assert np.all(ACTION_LOW[:58] == 0.0) and np.all(ACTION_HIGH[:58] == 1.0)
    assert np.all(ACTION_LOW[58:] == -math.pi) and np.all(ACTION_HIGH[58:] == math.pi)


def test_action_frame_vector_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        vec = rng.uniform(-1.0, 1.0, size=61)
        frame = ActionFrame.from_vector(vec)
        assert frame.blendshapes.shape == (58,)
        assert frame.head_rpy.shape == (3,)
        np.testing.assert_array_equal(frame.as_vector(), vec)
    with pytest.raises(ValueError):
        ActionFrame.from_vector(np.zeros(60))


def test_validate_frame_accepts_valid_frames():
    assert validate_frame(np.zeros(61)) == []
    hi = np.concatenate([np.ones(58), np.full(3, math.pi)])
    lo = np.concatenate([np.zeros(58), np.full(3, -math.pi)])
    assert validate_frame(hi) == []
    assert validate_frame(lo) == []
    rng = np.random.default_rng(11)
    for _ in range(50):
        vec = np.concatenate([rng.uniform(0, 1, 58), rng.uniform(-math.pi, math.pi, 3)])
        assert validate_frame(vec) == []


def test_validate_frame_reports_violations():
    bad = np.zeros(61)
    bad[5] = -0.001
    msgs = validate_frame(bad)
    assert len(msgs) == 1 and "blendshapes[5]" in msgs[0]

    bad = np.zeros(61)
    bad[12] = 1.0001
    assert any("blendshapes[12]" in m for m in validate_frame(bad))

    bad = np.zeros(61)
    bad[60] = 3.2
    msgs = validate_frame(bad)
    assert len(msgs) == 1 and "head_rpy[2]" in msgs[0]

    bad = np.zeros(61)
    bad[0] = np.nan
    bad[59] = np.inf
    msgs = validate_frame(bad)
    assert len(msgs) == 2
    assert any("not finite" in m for m in msgs)

    # One message per violated field.
    bad = np.full(61, 5.0)
    assert len(validate_frame(bad)) == 61

    assert validate_frame(np.zeros(60)) != []


def test_episode_validation_and_accessors():
    ep = _episode(12)
    assert len(ep) == 12
    assert ep.actions.dtype == np.float32
    assert ep.duration_seconds() == pytest.approx(12 / 30.0)
    np.testing.assert_array_equal(ep.action(4), ep.actions[4])
    assert isinstance(ep.frame(0), ActionFrame)
    with pytest.raises(EpisodeRangeError):
        ep.action(-1)
    with pytest.raises(EpisodeRangeError):
        ep.action(12)
    with pytest.raises(ValueError):
        Episode(rate_hz=30.0, actions=np.zeros((4, 60), dtype=np.float32))
    with pytest.raises(ValueError):
        Episode(rate_hz=0.0, actions=np.zeros((4, 61), dtype=np.float32))
    with pytest.raises(ValueError):
        obs = [Observation(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((2, 2)))]
        Episode(rate_hz=30.0, actions=np.zeros((4, 61), dtype=np.float32),
                observations=obs)


def test_slice_chunk_interior_and_padding():
    ep = _episode(20, seed=5)
    chunk = slice_chunk(ep, 4, 6)
    assert chunk.origin_tick == 4
    assert chunk.length == 6
    assert not chunk.padded
    np.testing.assert_array_equal(chunk.actions, ep.actions[4:10])

    # Tail slices repeat the final frame and flag it.
    chunk = slice_chunk(ep, 18, 5)
    assert chunk.padded
    np.testing.assert_array_equal(chunk.actions[:2], ep.actions[18:20])
    for i in range(2, 5):
        np.testing.assert_array_equal(chunk.actions[i], ep.actions[19])

    # A slice ending exactly at the last frame is not padded.
    assert not slice_chunk(ep, 15, 5).padded

    # Chunks are copies, not views.
    chunk = slice_chunk(ep, 0, 3)
    chunk.actions[0, 0] = 123.0
    assert ep.actions[0, 0] != 123.0


def test_slice_chunk_errors():
    ep = _episode(10)
    with pytest.raises(EpisodeRangeError):
        slice_chunk(ep, -1, 3)
    with pytest.raises(EpisodeRangeError):
        slice_chunk(ep, 10, 3)
    with pytest.raises(ValueError):
        slice_chunk(ep, 0, 0)


def test_slice_chunk_extended_backward_extension():
    ep = _episode(10, seed=9)
    chunk = slice_chunk_extended(ep, -3, 5)
    assert chunk.padded
    assert chunk.origin_tick == -3
    for i in range(3):
        np.testing.assert_array_equal(chunk.actions[i], ep.actions[0])
    np.testing.assert_array_equal(chunk.actions[3:], ep.actions[0:2])

    # Agrees with slice_chunk on in-range starts.
    for t in range(10):
        a = slice_chunk(ep, t, 4)
        b = slice_chunk_extended(ep, t, 4)
        np.testing.assert_array_equal(a.actions, b.actions)
        assert a.padded == b.padded

    with pytest.raises(EpisodeRangeError):
        slice_chunk_extended(ep, 10, 3)


def test_latency_model():
    lat = LatencyModel(perception=1, inference=2, communication=3)
    assert lat.total() == 6
    assert lat.effect_delay() == 5
    assert LatencyModel().total() == 0
    with pytest.raises(ValueError):
        LatencyModel(perception=-1)
    with pytest.raises(ValueError):
        LatencyModel(inference=1.5)


def test_ticks_from_seconds_rounds_half_up():
    assert ticks_from_seconds(0.1, 30.0) == 3
    assert ticks_from_seconds(0.049, 30.0) == 1
    # 0.05 * 30 = 1.5 rounds up.
    assert ticks_from_seconds(0.05, 30.0) == 2
    assert ticks_from_seconds(0.0, 30.0) == 0
    with pytest.raises(ValueError):
        ticks_from_seconds(-0.1, 30.0)
    with pytest.raises(ValueError):
        ticks_from_seconds(0.1, 0.0)
