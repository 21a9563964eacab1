"""Core data model: action frames, chunks, episodes, latency bookkeeping.

An action frame is a 61-dimensional command: 58 facial blendshape
activations in [0, 1] followed by head roll, pitch, yaw in radians in
[-pi, pi]. Episodes are time-ordered frame sequences sampled at a fixed
tick rate (30 Hz reference), optionally paired with stereo RGB-D
observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ACTION_DIM = 61
BLENDSHAPE_COUNT = 58
HEAD_DIM = 3
REFERENCE_RATE_HZ = 30.0

# Depth pixels with no valid measurement carry this sentinel in memory.
DEPTH_INVALID = np.inf

# Canonical blendshape layout. Positions are the contract; names are
# metadata for reports and docs. The first 52 follow the common ARKit
# ordering, the trailing 6 extend it to the 58-slot layout.
BLENDSHAPE_NAMES = (
    "browDownLeft", "browDownRight", "browInnerUp", "browOuterUpLeft",
    "browOuterUpRight", "cheekPuff", "cheekSquintLeft", "cheekSquintRight",
    "eyeBlinkLeft", "eyeBlinkRight", "eyeLookDownLeft", "eyeLookDownRight",
    "eyeLookInLeft", "eyeLookInRight", "eyeLookOutLeft", "eyeLookOutRight",
    "eyeLookUpLeft", "eyeLookUpRight", "eyeSquintLeft", "eyeSquintRight",
    "eyeWideLeft", "eyeWideRight", "jawForward", "jawLeft", "jawOpen",
    "jawRight", "mouthClose", "mouthDimpleLeft", "mouthDimpleRight",
    "mouthFrownLeft", "mouthFrownRight", "mouthFunnel", "mouthLeft",
    "mouthLowerDownLeft", "mouthLowerDownRight", "mouthPressLeft",
    "mouthPressRight", "mouthPucker", "mouthRight", "mouthRollLower",
    "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper", "mouthSmileLeft",
    "mouthSmileRight", "mouthStretchLeft", "mouthStretchRight",
    "mouthUpperUpLeft", "mouthUpperUpRight", "noseSneerLeft",
    "noseSneerRight", "tongueOut",
    "tongueLeft", "tongueRight", "tongueUp", "tongueDown", "cheekSuckLeft",
    "cheekSuckRight",
)
assert len(BLENDSHAPE_NAMES) == BLENDSHAPE_COUNT

JAW_OPEN_INDEX = BLENDSHAPE_NAMES.index("jawOpen")
HEAD_ROLL_INDEX = BLENDSHAPE_COUNT
HEAD_PITCH_INDEX = BLENDSHAPE_COUNT + 1
HEAD_YAW_INDEX = BLENDSHAPE_COUNT + 2

# Per-dimension valid ranges, used by validation and by policies that
# clamp their outputs.
ACTION_LOW = np.concatenate([np.zeros(BLENDSHAPE_COUNT), np.full(HEAD_DIM, -math.pi)])
ACTION_HIGH = np.concatenate([np.ones(BLENDSHAPE_COUNT), np.full(HEAD_DIM, math.pi)])
ACTION_LOW.setflags(write=False)
ACTION_HIGH.setflags(write=False)


class EpisodeFormatError(ValueError):
    """Raised for malformed episode containers (bad magic, truncation, ...)."""


class EpisodeRangeError(IndexError):
    """Raised when a tick index falls outside an episode."""


@dataclass
class ActionFrame:
    """One 61-dim command: blendshapes (58,) in [0, 1] and head RPY (3,) radians.

    Attributes
    ----------
    blendshapes : ndarray, shape (58,)
    head_rpy : ndarray, shape (3,)
        Roll, pitch, yaw in radians, each in [-pi, pi].
    """

    blendshapes: np.ndarray
    head_rpy: np.ndarray

    def as_vector(self) -> np.ndarray:
        """Flatten to the canonical (61,) layout (blendshapes then RPY)."""
        return np.concatenate([np.asarray(self.blendshapes, dtype=np.float64),
                               np.asarray(self.head_rpy, dtype=np.float64)])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "ActionFrame":
        vec = np.asarray(vec)
        if vec.shape != (ACTION_DIM,):
            raise ValueError(f"expected shape ({ACTION_DIM},), got {vec.shape}")
        return cls(blendshapes=np.array(vec[:BLENDSHAPE_COUNT]),
                   head_rpy=np.array(vec[BLENDSHAPE_COUNT:]))


def validate_frame(frame) -> list[str]:
    """Check one frame against the per-dimension contract.

    Parameters
    ----------
    frame : ActionFrame or array-like, shape (61,)

    Returns
    -------
    list of str
        One message per violated field, empty when the frame is valid.
        Non-finite entries and out-of-range entries are both reported.
    """
    if isinstance(frame, ActionFrame):
        vec = frame.as_vector()
    else:
        vec = np.asarray(frame, dtype=np.float64)
        if vec.shape != (ACTION_DIM,):
            return [f"expected {ACTION_DIM} dims, got shape {vec.shape}"]
    problems = []
    for i, v in enumerate(vec):
        if i < BLENDSHAPE_COUNT:
            if not np.isfinite(v):
                problems.append(f"blendshapes[{i}] not finite ({v})")
            elif not (0.0 <= v <= 1.0):
                problems.append(f"blendshapes[{i}] out of [0, 1] ({v})")
        else:
            j = i - BLENDSHAPE_COUNT
            if not np.isfinite(v):
                problems.append(f"head_rpy[{j}] not finite ({v})")
            elif not (-math.pi <= v <= math.pi):
                problems.append(f"head_rpy[{j}] out of [-pi, pi] ({v})")
    return problems


@dataclass
class Observation:
    """Stereo RGB plus depth for one tick.

    rgb_left / rgb_right are (H, W, 3) float32 in [0, 1]; depth is
    (H, W) float32 meters where invalid pixels carry DEPTH_INVALID.
    The capture shape is configurable; 480x640 is the reference size.
    """

    rgb_left: np.ndarray
    rgb_right: np.ndarray
    depth: np.ndarray
    tick: int = 0


@dataclass
class ActionChunk:
    """A k-frame prediction anchored at an absolute tick.

    actions[i] is the prediction for tick origin_tick + i. ``padded`` is
    True when any frame was filled by extension (holding the source's
    last frame past its end, or its first frame before its start).
    """

    actions: np.ndarray
    origin_tick: int
    padded: bool = False

    @property
    def length(self) -> int:
        return self.actions.shape[0]


@dataclass
class Episode:
    """A demonstration or commanded trajectory at a fixed tick rate.

    actions is (N, 61) float32; observations, when present, has one
    Observation per frame with tick == frame index.
    """

    rate_hz: float
    actions: np.ndarray
    observations: list[Observation] | None = None

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float32)
        if self.actions.ndim != 2 or self.actions.shape[1] != ACTION_DIM:
            raise ValueError(f"actions must be (N, {ACTION_DIM}), got {self.actions.shape}")
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.observations is not None and len(self.observations) != len(self.actions):
            raise ValueError("observations length must match actions length")

    def __len__(self) -> int:
        return self.actions.shape[0]

    def action(self, t: int) -> np.ndarray:
        if not 0 <= t < len(self):
            raise EpisodeRangeError(f"tick {t} outside episode of length {len(self)}")
        return self.actions[t]

    def frame(self, t: int) -> ActionFrame:
        return ActionFrame.from_vector(self.action(t))

    def duration_seconds(self) -> float:
        return len(self) / self.rate_hz


def slice_chunk(episode: Episode, t: int, k: int) -> ActionChunk:
    """Take the k-frame slice of an episode starting at tick t.

    Slices that run past the episode end repeat the final frame and set
    the chunk's ``padded`` flag. t must lie inside the episode; k must
    be positive.
    """
    n = len(episode)
    if k <= 0:
        raise ValueError(f"chunk length must be positive, got {k}")
    if t < 0:
        raise EpisodeRangeError(f"tick {t} is negative")
    if t >= n:
        raise EpisodeRangeError(f"tick {t} beyond episode end ({n} frames)")
    idx = np.minimum(np.arange(t, t + k), n - 1)
    return ActionChunk(actions=episode.actions[idx].copy(), origin_tick=t,
                       padded=bool(t + k > n))


def slice_chunk_extended(episode: Episode, t: int, k: int) -> ActionChunk:
    """Like slice_chunk but also extends backward with the initial frame.

    Used by policies that model a pipeline already running before tick 0
    (the subject holds pose before the episode starts). t may be
    negative; t >= len(episode) is still an error.
    """
    n = len(episode)
    if k <= 0:
        raise ValueError(f"chunk length must be positive, got {k}")
    if t >= n:
        raise EpisodeRangeError(f"tick {t} beyond episode end ({n} frames)")
    idx = np.clip(np.arange(t, t + k), 0, n - 1)
    return ActionChunk(actions=episode.actions[idx].copy(), origin_tick=t,
                       padded=bool(t < 0 or t + k > n))


@dataclass(frozen=True)
class LatencyModel:
    """Pipeline delays in ticks.

    perception ages the observation a query sees; inference and
    communication postpone when the resulting chunk may be commanded.
    """

    perception: int = 0
    inference: int = 0
    communication: int = 0

    def __post_init__(self):
        for name in ("perception", "inference", "communication"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} delay must be a non-negative integer, got {v!r}")

    def total(self) -> int:
        return self.perception + self.inference + self.communication

    def effect_delay(self) -> int:
        """Ticks between a query and its chunk becoming commandable."""
        return self.inference + self.communication


def ticks_from_seconds(seconds: float, rate_hz: float) -> int:
    """Convert a delay in seconds to ticks, rounding half up.

    Rounding half up biases toward compensating slightly more, which is
    the safe direction for latency compensation.
    """
    if seconds < 0:
        raise ValueError(f"delay must be non-negative, got {seconds}")
    if rate_hz <= 0:
        raise ValueError(f"rate_hz must be positive, got {rate_hz}")
    return int(math.floor(seconds * rate_hz + 0.5))
