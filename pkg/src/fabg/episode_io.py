"""Binary episode container.

Layout, all little-endian:

    header (20 bytes):
        magic      4s   b"FABG"
        version    u16  1
        flags      u16  bit 0 = observations present
        rate_hz    f32
        frames     u32  N
        action_dim u16  61
        reserved   u16  0
    actions: N * 61 float32
    if flags bit 0:
        index: N records of (height u16, width u16, planes u16, offset u64)
        blobs: per frame, height*width*planes float32
               planes = 7: RGB left (3), RGB right (3), depth (1)

Offsets are absolute from the start of the container. An empty episode
without observations is exactly the 20-byte header.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .model import ACTION_DIM, DEPTH_INVALID, Episode, EpisodeFormatError, Observation

MAGIC = b"FABG"
VERSION = 1
FLAG_OBSERVATIONS = 0x0001
OBS_PLANES = 7

_HEADER = struct.Struct("<4sHHfIHH")
_INDEX_ENTRY = struct.Struct("<HHHQ")

HEADER_SIZE = _HEADER.size
assert HEADER_SIZE == 20


def _obs_blob(obs: Observation) -> np.ndarray:
    h, w = obs.depth.shape
    for name, arr, shape in (("rgb_left", obs.rgb_left, (h, w, 3)),
                             ("rgb_right", obs.rgb_right, (h, w, 3)),
                             ("depth", obs.depth, (h, w))):
        if arr.shape != shape:
            raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    planes = np.concatenate([
        np.asarray(obs.rgb_left, dtype=np.float32).reshape(h * w * 3),
        np.asarray(obs.rgb_right, dtype=np.float32).reshape(h * w * 3),
        np.asarray(obs.depth, dtype=np.float32).reshape(h * w),
    ])
    return planes


def write_episode(episode: Episode, path) -> int:
    """Serialize an episode to ``path``. Returns the byte count written.

    Raises ValueError when action values are NaN or depth values are NaN;
    +inf depth is the in-band invalid-pixel sentinel and passes through.
    """
    actions = np.asarray(episode.actions, dtype=np.float32)
    if np.isnan(actions).any():
        raise ValueError("refusing to write NaN action values")

    n = actions.shape[0]
    flags = 0
    obs_list = episode.observations
    if obs_list is not None:
        flags |= FLAG_OBSERVATIONS

    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, flags, float(episode.rate_hz),
                           n, ACTION_DIM, 0))
    buf.write(actions.astype("<f4", copy=False).tobytes())

    if obs_list is not None:
        blobs = []
        for i, obs in enumerate(obs_list):
            if np.isnan(obs.depth).any():
                raise ValueError(f"observation {i}: refusing to write NaN depth")
            blobs.append((obs.depth.shape, _obs_blob(obs)))
        index_pos = buf.tell()
        offset = index_pos + n * _INDEX_ENTRY.size
        for (h, w), blob in blobs:
            buf.write(_INDEX_ENTRY.pack(h, w, OBS_PLANES, offset))
            offset += blob.nbytes
        for _, blob in blobs:
            buf.write(blob.astype("<f4", copy=False).tobytes())

    data = buf.getvalue()
    Path(path).write_bytes(data)
    return len(data)


def _need(data: bytes, upto: int, what: str):
    if len(data) < upto:
        raise EpisodeFormatError(
            f"truncated container: {what} needs {upto} bytes, have {len(data)}")


def read_episode(source, invalid_depth: float | None = None) -> Episode:
    """Deserialize an episode from a path or a bytes object.

    Parameters
    ----------
    source : path-like or bytes
    invalid_depth : float, optional
        When given, depth sentinel pixels (+inf) are replaced with this
        value on load. By default the sentinel is kept.

    Raises
    ------
    EpisodeFormatError
        Bad magic, unsupported version, wrong action dimension,
        truncation, or NaN action values.
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    else:
        data = Path(source).read_bytes()

    _need(data, HEADER_SIZE, "header")
    magic, version, flags, rate_hz, n, action_dim, _reserved = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EpisodeFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise EpisodeFormatError(f"unsupported version {version}, expected {VERSION}")
    if action_dim != ACTION_DIM:
        raise EpisodeFormatError(f"action dimension {action_dim}, expected {ACTION_DIM}")

    pos = HEADER_SIZE
    actions_end = pos + n * ACTION_DIM * 4
    _need(data, actions_end, "action block")
    actions = np.frombuffer(data, dtype="<f4", count=n * ACTION_DIM,
                            offset=pos).reshape(n, ACTION_DIM).copy()
    if np.isnan(actions).any():
        raise EpisodeFormatError("NaN action values in container")

    observations = None
    if flags & FLAG_OBSERVATIONS:
        index_end = actions_end + n * _INDEX_ENTRY.size
        _need(data, index_end, "observation index")
        observations = []
        for i in range(n):
            h, w, planes, offset = _INDEX_ENTRY.unpack_from(
                data, actions_end + i * _INDEX_ENTRY.size)
            if planes != OBS_PLANES:
                raise EpisodeFormatError(
                    f"observation {i}: {planes} planes, expected {OBS_PLANES}")
            count = h * w * planes
            _need(data, offset + count * 4, f"observation {i} blob")
            flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            px = h * w
            rgb_left = flat[:3 * px].reshape(h, w, 3).copy()
            rgb_right = flat[3 * px:6 * px].reshape(h, w, 3).copy()
            depth = flat[6 * px:].reshape(h, w).copy()
            if invalid_depth is not None:
                depth[np.isinf(depth)] = invalid_depth
            observations.append(Observation(rgb_left=rgb_left, rgb_right=rgb_right,
                                            depth=depth, tick=i))

    return Episode(rate_hz=rate_hz, actions=actions, observations=observations)
