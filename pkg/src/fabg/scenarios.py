"""Synthetic interaction scenarios.

Each scenario is a deterministic function of its spec: a neutral face
(all zeros) with one archetypal motion driven on a chosen dimension.
``generate`` is pure; ``build_corpus`` adds seeded per-episode parameter
jitter and synthetic observations for training-data use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import (ACTION_DIM, BLENDSHAPE_COUNT, HEAD_YAW_INDEX, JAW_OPEN_INDEX,
                    REFERENCE_RATE_HZ, Episode, Observation)

SCENARIO_KINDS = ("step", "sustained_open", "rapid_cycle", "tracking_sine",
                  "gesture_switch")

GESTURE_PATTERN_COUNT = 4
GESTURE_SPAN = 6

OBS_HEIGHT = 36
OBS_WIDTH = 48


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters for one synthetic scenario.

    kind : one of SCENARIO_KINDS
    duration_ticks : episode length
    rate_hz : tick rate
    amplitude : peak activation in [0, 1] (radians for head dims)
    period_ticks : cycle length for the periodic kinds
    target_dim : driven dimension; None picks the kind's default
        (jawOpen for facial kinds, head yaw for tracking_sine)
    seed : base seed for the seeded kinds (gesture_switch)
    """

    kind: str
    duration_ticks: int
    rate_hz: float = REFERENCE_RATE_HZ
    amplitude: float = 1.0
    period_ticks: int = 10
    target_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.duration_ticks < 1:
            raise ValueError(f"duration_ticks must be at least 1, got {self.duration_ticks}")
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"amplitude must lie in [0, 1], got {self.amplitude}")
        if self.kind in ("rapid_cycle", "tracking_sine", "gesture_switch"):
            if self.period_ticks < 2:
                raise ValueError(f"period_ticks must be at least 2, got {self.period_ticks}")
        dim = self.resolved_target_dim()
        if not 0 <= dim < ACTION_DIM:
            raise ValueError(f"target_dim {dim} outside [0, {ACTION_DIM})")
        if self.kind == "tracking_sine" and dim < BLENDSHAPE_COUNT:
            raise ValueError("tracking_sine drives a head dimension; "
                             f"target_dim {dim} is a blendshape")
        if self.kind == "gesture_switch" and dim >= BLENDSHAPE_COUNT:
            raise ValueError("gesture_switch drives blendshapes; "
                             f"target_dim {dim} is a head dimension")

    def resolved_target_dim(self) -> int:
        if self.target_dim is not None:
            return self.target_dim
        return HEAD_YAW_INDEX if self.kind == "tracking_sine" else JAW_OPEN_INDEX

    def onset_tick(self) -> int | None:
        """First tick of stimulus for the onset-bearing kinds, else None."""
        if self.kind in ("step", "sustained_open"):
            return self.duration_ticks // 4
        return None


def _ramp_value(t: int, onset: int, release: int, ramp: int, amp: float) -> float:
    if t < onset:
        return 0.0
    if t < release:
        return amp * min(1.0, (t - onset + 1) / ramp)
    return amp * max(0.0, 1.0 - (t - release + 1) / ramp)


def generate(spec: ScenarioSpec) -> Episode:
    """Produce the scenario's demonstration episode (no observations).

    Deterministic: equal specs give equal episodes. Every frame
    satisfies the per-dimension action contract.
    """
    d = spec.duration_ticks
    p = spec.period_ticks
    amp = spec.amplitude
    dim = spec.resolved_target_dim()
    actions = np.zeros((d, ACTION_DIM), dtype=np.float32)

    if spec.kind == "step":
        onset, release = d // 4, (3 * d) // 4
        actions[onset:release, dim] = amp
    elif spec.kind == "sustained_open":
        onset, release = d // 4, (3 * d) // 4
        ramp = max(1, round(0.5 * spec.rate_hz))
        for t in range(d):
            actions[t, dim] = _ramp_value(t, onset, release, ramp, amp)
    elif spec.kind == "rapid_cycle":
        # Triangle wave written from t mod p so periodicity is exact.
        for t in range(d):
            ph = t % p
            frac = 2.0 * ph / p
            actions[t, dim] = amp * (frac if frac <= 1.0 else 2.0 - frac)
    elif spec.kind == "tracking_sine":
        for t in range(d):
            actions[t, dim] = amp * math.sin(2.0 * math.pi * (t % p) / p)
    elif spec.kind == "gesture_switch":
        rng = np.random.default_rng([spec.seed, 77])
        dims = [(dim + i) % BLENDSHAPE_COUNT for i in range(GESTURE_SPAN)]
        patterns = rng.uniform(0.0, amp, size=(GESTURE_PATTERN_COUNT, GESTURE_SPAN))
        for t in range(d):
            actions[t, dims] = patterns[(t // p) % GESTURE_PATTERN_COUNT]

    return Episode(rate_hz=spec.rate_hz, actions=actions)


def _jitter_spec(spec: ScenarioSpec, rng: np.random.Generator) -> ScenarioSpec:
    amp = float(np.clip(spec.amplitude * (1.0 + 0.2 * (rng.random() - 0.5)), 0.05, 1.0))
    dur = max(8, spec.duration_ticks + int(rng.integers(-3, 4)))
    period = spec.period_ticks
    if spec.kind in ("rapid_cycle", "tracking_sine", "gesture_switch"):
        period = max(2, period + int(rng.integers(-1, 2)))
    return replace(spec, amplitude=amp, duration_ticks=dur, period_ticks=period)


def _render_observation(value: float, tick: int, rng: np.random.Generator) -> Observation:
    """Encode the driven activation into a synthetic capture.

    Brightness and a depth bulge both track the activation so that
    vision features carry enough signal to regress actions from.
    """
    texture = rng.normal(0.0, 0.02, size=(OBS_HEIGHT, OBS_WIDTH))
    base = 0.25 + 0.5 * value
    rgb_left = np.clip(base + texture[:, :, None] * np.ones(3), 0.0, 1.0)
    rgb_right = np.clip(np.roll(rgb_left, 1, axis=1) * 0.98, 0.0, 1.0)
    rr = (np.arange(OBS_HEIGHT)[:, None] - OBS_HEIGHT / 2) ** 2
    cc = (np.arange(OBS_WIDTH)[None, :] - OBS_WIDTH / 2) ** 2
    bump = np.exp(-(rr + cc) / (2.0 * (OBS_HEIGHT / 3.0) ** 2))
    depth = 1.5 - 0.5 * value * bump + rng.normal(0.0, 0.005, size=bump.shape)
    return Observation(rgb_left=rgb_left.astype(np.float32),
                       rgb_right=rgb_right.astype(np.float32),
                       depth=depth.astype(np.float32), tick=tick)


def attach_observations(episode: Episode, dim: int, seed: int = 0) -> Episode:
    """Pair every frame with a synthetic capture encoding dimension ``dim``.

    The driven value is normalized by the episode's peak magnitude on
    that dimension so the visual encoding spans a consistent range.
    Deterministic for a given (episode, dim, seed).
    """
    rng = np.random.default_rng([seed, 55])
    col = episode.actions[:, dim]
    scale = max(abs(float(col.max())), abs(float(col.min())), 1e-9)
    obs = [_render_observation(float(col[t]) / scale, t, rng)
           for t in range(len(episode))]
    return Episode(rate_hz=episode.rate_hz, actions=episode.actions, observations=obs)


def build_corpus(specs: list[ScenarioSpec], episodes_per_spec: int = 1,
                 observations: bool = True, corpus_seed: int = 0) -> list[Episode]:
    """Generate a training corpus with per-episode parameter jitter.

    Episode j of spec i uses seed sequence (corpus_seed, i, j), so the
    corpus is reproducible and episodes differ pairwise while keeping
    each spec's macro shape. With ``observations`` a synthetic capture
    encoding the driven dimension is attached per frame.
    """
    corpus = []
    for i, spec in enumerate(specs):
        for j in range(episodes_per_spec):
            rng = np.random.default_rng([corpus_seed, i, j])
            jittered = _jitter_spec(spec, rng)
            ep = generate(jittered)
            if observations:
                obs_seed = int(rng.integers(0, 2**31))
                ep = attach_observations(ep, jittered.resolved_target_dim(),
                                         seed=obs_seed)
            corpus.append(ep)
    return corpus
