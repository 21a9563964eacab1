"""Trajectory quality metrics.

All metrics compare a commanded trajectory against a demonstration (or
score the commanded trajectory alone). Time-denominated results are in
seconds; nullable results use None (serialized as JSON null), never a
placeholder zero.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .executor import ExecutionTrace
from .model import Episode


def _series(values, dim):
    if isinstance(values, ExecutionTrace):
        values = values.commanded
    elif isinstance(values, Episode):
        values = values.actions
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        if dim is not None:
            arr = arr[:, dim]
    elif arr.ndim != 1:
        raise ValueError(f"expected 1-D or 2-D values, got shape {arr.shape}")
    return arr


def _rate_of(values, rate_hz):
    if rate_hz is not None:
        return float(rate_hz)
    if isinstance(values, (ExecutionTrace, Episode)):
        return float(values.rate_hz)
    raise ValueError("rate_hz is required for bare arrays")


def dtw(a, b, dim: int | None = None, return_path: bool = False):
    """Dynamic time warping distance under an L1 frame cost.

    Alignments may repeat frames on either side but never reorder them;
    the distance is the minimum total cost over all such alignments,
    with cost |a_i - b_j| summed across dimensions. ``dim`` restricts
    2-D inputs to a single dimension first. Identical sequences score
    exactly 0.0.

    Parameters
    ----------
    a, b : array-like, (T,) or (T, D), or ExecutionTrace / Episode
    dim : int, optional
    return_path : bool
        Also return one optimal alignment as a list of index pairs.

    Returns
    -------
    float, or (float, list of (int, int)) when return_path is set.
    """
    xa = np.atleast_2d(_series(a, dim).T).T
    xb = np.atleast_2d(_series(b, dim).T).T
    n, m = xa.shape[0], xb.shape[0]
    if n == 0 or m == 0:
        raise ValueError("dtw requires non-empty sequences")
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}")

    cost = np.zeros((n, m), dtype=np.float64)
    for d in range(xa.shape[1]):
        cost += np.abs(xa[:, d, None] - xb[None, :, d])

    acc = np.empty((n, m), dtype=np.float64)
    acc[0] = np.cumsum(cost[0])
    for i in range(1, n):
        # Row recurrence acc[i][j] = cost[i][j] + min(up[j], acc[i][j-1])
        # with up[j] = min(acc[i-1][j], acc[i-1][j-1]) unrolls to a
        # prefix minimum over (up[l] - prefix_cost[l-1]), which
        # vectorizes the inner loop.
        up = acc[i - 1].copy()
        up[1:] = np.minimum(up[1:], acc[i - 1, :-1])
        s = np.cumsum(cost[i])
        shifted = np.empty(m)
        shifted[0] = 0.0
        shifted[1:] = s[:-1]
        acc[i] = s + np.minimum.accumulate(up - shifted)

    distance = float(acc[-1, -1])
    if not return_path:
        return distance

    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        candidates = []
        if i > 0 and j > 0:
            candidates.append((acc[i - 1, j - 1], (i - 1, j - 1)))
        if i > 0:
            candidates.append((acc[i - 1, j], (i - 1, j)))
        if j > 0:
            candidates.append((acc[i, j - 1], (i, j - 1)))
        i, j = min(candidates)[1]
        path.append((i, j))
    path.reverse()
    return distance, path


def response_latency(values, onset_tick: int, stimulus_amplitude: float,
                     dim: int | None = None, threshold_fraction: float = 0.1,
                     rate_hz: float | None = None) -> float | None:
    """Seconds from stimulus onset to the first threshold crossing.

    The baseline is the pre-onset mean of the series (the value at tick
    0 when the onset is tick 0); the response begins at the first tick
    at or after the onset whose deviation from that baseline reaches
    threshold_fraction * stimulus_amplitude. Returns None when the
    series never crosses.
    """
    y = _series(values, dim)
    if y.ndim != 1:
        raise ValueError("response_latency needs a single dimension; pass dim")
    if not 0 <= onset_tick < y.shape[0]:
        raise ValueError(f"onset_tick {onset_tick} outside series of length {y.shape[0]}")
    if stimulus_amplitude <= 0:
        raise ValueError(f"stimulus_amplitude must be positive, got {stimulus_amplitude}")
    if not 0.0 < threshold_fraction <= 1.0:
        raise ValueError(f"threshold_fraction must lie in (0, 1], got {threshold_fraction}")
    rate = _rate_of(values, rate_hz)
    baseline = y[:onset_tick].mean() if onset_tick > 0 else y[0]
    threshold = threshold_fraction * stimulus_amplitude
    dev = np.abs(y[onset_tick:] - baseline)
    hits = np.nonzero(dev >= threshold)[0]
    if hits.size == 0:
        return None
    return float(hits[0] / rate)


def completion_time(values, onset_tick: int, stimulus_amplitude: float,
                    dim: int | None = None, lo_fraction: float = 0.1,
                    hi_fraction: float = 0.9,
                    rate_hz: float | None = None) -> float | None:
    """Seconds from the low-threshold crossing to the high one.

    Thresholds are fractions of the stimulus amplitude, measured as
    deviation from the pre-onset baseline. An instantaneous jump crosses
    both at the same tick and scores 0.0. None when either threshold is
    never reached.
    """
    if not 0.0 < lo_fraction < hi_fraction <= 1.0:
        raise ValueError(f"need 0 < lo < hi <= 1, got {lo_fraction}, {hi_fraction}")
    y = _series(values, dim)
    if y.ndim != 1:
        raise ValueError("completion_time needs a single dimension; pass dim")
    if not 0 <= onset_tick < y.shape[0]:
        raise ValueError(f"onset_tick {onset_tick} outside series of length {y.shape[0]}")
    if stimulus_amplitude <= 0:
        raise ValueError(f"stimulus_amplitude must be positive, got {stimulus_amplitude}")
    rate = _rate_of(values, rate_hz)
    baseline = y[:onset_tick].mean() if onset_tick > 0 else y[0]
    dev = np.abs(y[onset_tick:] - baseline)
    lo_hits = np.nonzero(dev >= lo_fraction * stimulus_amplitude)[0]
    if lo_hits.size == 0:
        return None
    start = lo_hits[0]
    hi_hits = np.nonzero(dev[start:] >= hi_fraction * stimulus_amplitude)[0]
    if hi_hits.size == 0:
        return None
    return float(hi_hits[0] / rate)


def boundary_discontinuity(trace: ExecutionTrace) -> tuple[float, float]:
    """Largest adjacent-tick jump at chunk boundaries vs elsewhere.

    Jumps are L-infinity across dimensions between consecutive commands.
    Either side with no qualifying ticks (a strategy that records no
    boundaries, or boundaries everywhere) contributes 0.0 over its
    empty set. Traces need at least 2 ticks to have a jump at all.
    """
    y = trace.commanded
    if y.shape[0] < 2:
        raise ValueError("trace shorter than 2 ticks has no adjacent jumps")
    jumps = np.abs(np.diff(y, axis=0)).max(axis=1)
    is_boundary = np.zeros(jumps.shape[0], dtype=bool)
    for t in trace.chunk_boundaries:
        if 1 <= t < y.shape[0]:
            is_boundary[t - 1] = True
    boundary_max = float(jumps[is_boundary].max()) if is_boundary.any() else 0.0
    interior_max = float(jumps[~is_boundary].max()) if (~is_boundary).any() else 0.0
    return boundary_max, interior_max


def smoothness(values, dim: int | None = None) -> float:
    """Sum of squared second differences; lower is smoother.

    Computed per dimension and summed. Series shorter than 3 ticks
    score 0.0.
    """
    y = _series(values, dim)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] < 3:
        return 0.0
    dd = y[2:] - 2.0 * y[1:-1] + y[:-2]
    return float((dd * dd).sum())


@dataclass
class MetricReport:
    """Bundle of per-trace metrics; nullable entries serialize as null.

    JSON and CSV exports use these field names as stable keys.
    """

    dtw: float
    response_latency_s: float | None
    completion_time_s: float | None
    max_boundary_jump: float
    max_interior_jump: float
    smoothness: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def evaluate_trace(trace: ExecutionTrace, demonstration: Episode, dim: int,
                   onset_tick: int | None = None,
                   stimulus_amplitude: float | None = None,
                   threshold_fraction: float = 0.1, lo_fraction: float = 0.1,
                   hi_fraction: float = 0.9) -> MetricReport:
    """Score one trace against its demonstration on the driven dimension.

    Onset-based metrics need onset_tick and stimulus_amplitude; without
    them those entries are None.
    """
    d = dtw(trace, demonstration, dim=dim)
    resp = comp = None
    if onset_tick is not None and stimulus_amplitude is not None:
        resp = response_latency(trace, onset_tick, stimulus_amplitude, dim=dim,
                                threshold_fraction=threshold_fraction)
        comp = completion_time(trace, onset_tick, stimulus_amplitude, dim=dim,
                               lo_fraction=lo_fraction, hi_fraction=hi_fraction)
    b_max, i_max = boundary_discontinuity(trace)
    return MetricReport(dtw=d, response_latency_s=resp, completion_time_s=comp,
                        max_boundary_jump=b_max, max_interior_jump=i_max,
                        smoothness=smoothness(trace.commanded))
