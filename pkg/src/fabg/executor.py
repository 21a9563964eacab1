"""Chunk consumption strategies under a modeled latency pipeline.

Timeline model, all in ticks at the episode rate. A query issued at
tick tau sees an observation aged by the perception delay p, so the
resulting chunk is anchored at origin tau - p: frame i predicts tick
tau - p + i. Inference plus communication delay e postpones the chunk's
effectiveness to tick tau + e. The pipeline is warm: queries whose
results are needed at tick 0 are modeled as already issued before the
episode starts, against the held initial pose.

Three consumption strategies:

* ``run_no_te``: query once per chunk interval and play the freshest
  effective chunk through, holding its last frame when the interval
  outruns it. Chunk switches land mid-motion and show up as boundary
  discontinuities.
* ``run_te``: query every tick and average each tick's command over the
  most recent chunk heads with exponential weights exp(-m * i), i = 0
  for the oldest retained chunk. Smooth, but the average leans on stale
  predictions.
* ``run_pdlc``: query every tick and command frame n of the freshest
  effective chunk. With n equal to the total pipeline delay the
  prediction lands exactly on the tick being commanded, cancelling the
  latency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .model import ACTION_DIM, ActionChunk, Episode, LatencyModel, ticks_from_seconds

SERVO_COUNT = 25
STRATEGY_NAMES = ("NoTE", "TE", "PDLC")


@runtime_checkable
class ChunkSource(Protocol):
    """Executor-facing query interface.

    ``origin_tick`` is the aged anchor (query tick minus perception
    delay); ``prev_action`` is the command most recently issued before
    the query went out, for sources that condition on it.
    """

    def query(self, origin_tick: int, prev_action: np.ndarray) -> ActionChunk: ...


@dataclass
class ExecutionTrace:
    """Commanded trajectory plus consumption bookkeeping.

    query_ticks lists in-episode ticks at which a query was issued;
    chunk_boundaries lists ticks whose command came from a different
    chunk than the tick before (strategies that re-query every tick and
    never switch mid-stream have none).
    """

    rate_hz: float
    strategy: str
    commanded: np.ndarray
    query_ticks: list[int] = field(default_factory=list)
    chunk_boundaries: list[int] = field(default_factory=list)
    te_contributions: np.ndarray | None = None
    te_weights: np.ndarray | None = None

    def __len__(self) -> int:
        return self.commanded.shape[0]


def compute_offset(latency, rate_hz: float | None = None) -> int:
    """Chunk index offset n that cancels a pipeline delay.

    Accepts a LatencyModel (returns its total in ticks) or a delay in
    seconds together with ``rate_hz`` (rounded half up to ticks: 0.1 s
    at 30 Hz gives 3; 0.049 s gives 1).
    """
    if isinstance(latency, LatencyModel):
        return latency.total()
    if rate_hz is None:
        raise ValueError("rate_hz is required when latency is given in seconds")
    return ticks_from_seconds(float(latency), rate_hz)


def _initial_command(scenario: Episode) -> np.ndarray:
    if len(scenario) == 0:
        raise ValueError("cannot execute an empty scenario")
    return scenario.actions[0].astype(np.float64)


class _QueryLog:
    """Issues queries in timeline order, memoizing by query tick."""

    def __init__(self, source: ChunkSource, perception: int, commanded: np.ndarray,
                 initial: np.ndarray):
        self.source = source
        self.perception = perception
        self.commanded = commanded
        self.initial = initial
        self.chunks: dict[int, ActionChunk] = {}

    def get(self, query_tick: int) -> ActionChunk:
        chunk = self.chunks.get(query_tick)
        if chunk is None:
            prev = self.commanded[query_tick - 1] if query_tick >= 1 else self.initial
            try:
                chunk = self.source.query(query_tick - self.perception, prev)
            except Exception as exc:
                raise RuntimeError(
                    f"policy query failed at tick {query_tick}: {exc}") from exc
            self.chunks[query_tick] = chunk
        return chunk


def run_no_te(source: ChunkSource, scenario: Episode, latency: LatencyModel,
              k: int) -> ExecutionTrace:
    """Exhaust-and-switch consumption without temporal ensembling.

    The chunk governing tick t is the freshest one already effective at
    the start of its k-tick interval: query tick floor((t - e) / k) * k.
    Commands index into the chunk by age of its anchor and hold the last
    frame once the anchor falls behind by more than k - 1 ticks.
    """
    if k < 1:
        raise ValueError(f"chunk length must be at least 1, got {k}")
    t_len = len(scenario)
    e = latency.effect_delay()
    cmd = np.zeros((t_len, ACTION_DIM), dtype=np.float64)
    log = _QueryLog(source, latency.perception, cmd, _initial_command(scenario))
    source_tick = np.empty(t_len, dtype=np.int64)
    for t in range(t_len):
        tau = ((t - e) // k) * k
        chunk = log.get(tau)
        idx = min(max(t - chunk.origin_tick, 0), chunk.length - 1)
        cmd[t] = chunk.actions[idx]
        source_tick[t] = tau
    boundaries = [t for t in range(1, t_len) if source_tick[t] != source_tick[t - 1]]
    # Queries fire on the fixed cadence 0, k, 2k, ... whether or not the
    # episode lasts long enough to consume the result.
    queries = list(range(0, t_len, k))
    return ExecutionTrace(rate_hz=scenario.rate_hz, strategy="NoTE", commanded=cmd,
                          query_ticks=queries, chunk_boundaries=boundaries)


def run_te(source: ChunkSource, scenario: Episode, latency: LatencyModel, k: int,
           m: float = 0.1, record_contributions: bool = False) -> ExecutionTrace:
    """Temporal-ensemble consumption: exponentially weighted chunk heads.

    At tick t the retained chunks are those queried at ticks
    t - k + 1 .. t - e (already effective, no older than the chunk
    span). Each contributes its head frame, weighted exp(-m * i) with
    i = 0 for the oldest, normalized. Requires k - 1 >= e so at least
    one chunk is effective; m must be non-negative.

    With ``record_contributions`` the trace carries the per-tick stack
    of head frames (ticks, taps, dims) and the normalized weights.
    """
    if k < 1:
        raise ValueError(f"chunk length must be at least 1, got {k}")
    if m < 0:
        raise ValueError(f"ensemble decay m must be non-negative, got {m}")
    e = latency.effect_delay()
    if k - 1 < e:
        raise ValueError(f"chunk length {k} too short for effect delay {e}: "
                         "no queried chunk would be effective yet")
    t_len = len(scenario)
    taps = k - e
    weights = np.exp(-m * np.arange(taps, dtype=np.float64))
    weights /= weights.sum()
    cmd = np.zeros((t_len, ACTION_DIM), dtype=np.float64)
    log = _QueryLog(source, latency.perception, cmd, _initial_command(scenario))
    contributions = (np.zeros((t_len, taps, ACTION_DIM), dtype=np.float64)
                     if record_contributions else None)
    for t in range(t_len):
        heads = np.empty((taps, ACTION_DIM), dtype=np.float64)
        for i, tau in enumerate(range(t - k + 1, t - e + 1)):
            heads[i] = log.get(tau).actions[0]
        cmd[t] = weights @ heads
        if contributions is not None:
            contributions[t] = heads
    return ExecutionTrace(rate_hz=scenario.rate_hz, strategy="TE", commanded=cmd,
                          query_ticks=list(range(t_len)), chunk_boundaries=[],
                          te_contributions=contributions,
                          te_weights=weights if record_contributions else None)


def run_pdlc(source: ChunkSource, scenario: Episode, latency: LatencyModel, k: int,
             n: int | None = None) -> ExecutionTrace:
    """Prediction-driven consumption: frame n of the freshest chunk.

    n defaults to the latency total, the offset that cancels the
    pipeline delay exactly; it must satisfy 0 <= n < k. The command at
    tick t is frame n of the chunk queried at t - e, anchored at t - e - p,
    so the frame played predicts tick t - e - p + n.
    """
    if k < 1:
        raise ValueError(f"chunk length must be at least 1, got {k}")
    if n is None:
        n = latency.total()
    if not 0 <= n < k:
        raise ValueError(f"offset n must lie in [0, {k}), got {n}")
    t_len = len(scenario)
    e = latency.effect_delay()
    cmd = np.zeros((t_len, ACTION_DIM), dtype=np.float64)
    log = _QueryLog(source, latency.perception, cmd, _initial_command(scenario))
    for t in range(t_len):
        cmd[t] = log.get(t - e).actions[n]
    return ExecutionTrace(rate_hz=scenario.rate_hz, strategy="PDLC", commanded=cmd,
                          query_ticks=list(range(t_len)), chunk_boundaries=[])


def run_strategy(name: str, source: ChunkSource, scenario: Episode,
                 latency: LatencyModel, k: int, m: float = 0.1,
                 n: int | None = None) -> ExecutionTrace:
    """Dispatch by strategy name ("NoTE", "TE", "PDLC")."""
    if name == "NoTE":
        return run_no_te(source, scenario, latency, k)
    if name == "TE":
        return run_te(source, scenario, latency, k, m=m)
    if name == "PDLC":
        return run_pdlc(source, scenario, latency, k, n=n)
    raise ValueError(f"unknown strategy {name!r}, expected one of {STRATEGY_NAMES}")


def write_trace_csv(trace: ExecutionTrace, path) -> None:
    """Write the per-tick command table.

    Columns: tick, dim_0 .. dim_60, queried, boundary. Floats use %.9g,
    which round-trips float32-valued commands exactly.
    """
    queried = set(trace.query_ticks)
    boundary = set(trace.chunk_boundaries)
    cols = ",".join(f"dim_{d}" for d in range(ACTION_DIM))
    lines = [f"tick,{cols},queried,boundary"]
    for t in range(len(trace)):
        vals = ",".join("%.9g" % v for v in trace.commanded[t])
        lines.append(f"{t},{vals},{int(t in queried)},{int(t in boundary)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a trace CSV back as (commanded, queried, boundary) arrays."""
    lines = Path(path).read_text().strip().split("\n")
    expected = "tick," + ",".join(f"dim_{d}" for d in range(ACTION_DIM)) + ",queried,boundary"
    if lines[0] != expected:
        raise ValueError(f"unexpected trace header: {lines[0][:80]}...")
    rows = [line.split(",") for line in lines[1:]]
    commanded = np.array([[float(v) for v in r[1:1 + ACTION_DIM]] for r in rows])
    queried = np.array([int(r[-2]) for r in rows])
    boundary = np.array([int(r[-1]) for r in rows])
    return commanded, queried, boundary


@dataclass
class PwmMapping:
    """Affine map from a 61-dim frame to servo PWM pulse widths.

    pwm = clip(offsets + gains @ frame, pwm_min, pwm_max), in
    microseconds. gains has shape (servos, 61).
    """

    gains: np.ndarray
    offsets: np.ndarray
    pwm_min: float = 900.0
    pwm_max: float = 2100.0

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.gains.ndim != 2 or self.gains.shape[1] != ACTION_DIM:
            raise ValueError(f"gains must be (servos, {ACTION_DIM}), got {self.gains.shape}")
        if self.offsets.shape != (self.gains.shape[0],):
            raise ValueError("offsets length must match servo count")
        if self.pwm_min >= self.pwm_max:
            raise ValueError("pwm_min must be below pwm_max")


def default_pwm_mapping(servos: int = SERVO_COUNT, seed: int = 4242) -> PwmMapping:
    """A fixed synthetic rig: each servo driven by a few random dims.

    Stand-in for a hardware calibration table; deterministic for a
    given seed.
    """
    rng = np.random.default_rng(seed)
    gains = np.zeros((servos, ACTION_DIM))
    for s in range(servos):
        dims = rng.choice(ACTION_DIM, size=3, replace=False)
        gains[s, dims] = rng.uniform(100.0, 400.0, size=3) * rng.choice([-1.0, 1.0], size=3)
    offsets = np.full(servos, 1500.0)
    return PwmMapping(gains=gains, offsets=offsets)


def map_to_pwm(mapping: PwmMapping, frames: np.ndarray) -> np.ndarray:
    """Map one frame (61,) or a stack (T, 61) to clipped PWM targets."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.shape[-1] != ACTION_DIM:
        raise ValueError(f"last axis must be {ACTION_DIM}, got {arr.shape}")
    pwm = arr @ mapping.gains.T + mapping.offsets
    return np.clip(pwm, mapping.pwm_min, mapping.pwm_max)
