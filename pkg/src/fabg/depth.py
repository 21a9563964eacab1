"""Depth filtering and dual-path visual feature extraction.

Depth maps are smoothed with a truncated Gaussian kernel that excludes
invalid-pixel sentinels from each window and renormalizes the remaining
weights. Features come from two fixed, seeded paths: per-cell RGB
statistics expanded to 384 channels, and a small convolutional stack
over normalized depth producing 128 channels. Both land on an 18x24
spatial grid and concatenate losslessly to 512 channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .model import DEPTH_INVALID

GRID_H = 18
GRID_W = 24
RGB_CHANNELS = 384
DEPTH_CHANNELS = 128
FUSED_CHANNELS = RGB_CHANNELS + DEPTH_CHANNELS

# Seeds for the fixed random feature maps. Changing these changes the
# feature definition, so they are constants, not config.
RGB_PROJECTION_SEED = 7021
DEPTH_STACK_SEED = 9407

CELL_STAT_DIM = 32
DEPTH_MAX_RANGE_M = 4.0


def gaussian_density(x: float, y: float, sigma: float) -> float:
    """Unnormalized 2-D Gaussian weight (1 / (2 pi sigma^2)) exp(-r^2 / (2 sigma^2))."""
    s2 = sigma * sigma
    return math.exp(-(x * x + y * y) / (2.0 * s2)) / (2.0 * math.pi * s2)


@dataclass
class GaussianKernel:
    """Truncated, normalized 2-D Gaussian filter mask.

    weights has shape (2 * radius + 1, 2 * radius + 1) and sums to 1.
    ``unnormalized_center`` keeps the analytic density value at the
    origin, 1 / (2 pi sigma^2), before the truncation renormalization.
    """

    sigma: float
    radius: int
    weights: np.ndarray = field(repr=False)
    unnormalized_center: float

    @property
    def size(self) -> int:
        return 2 * self.radius + 1


def build_gaussian_kernel(sigma: float, radius: int | None = None) -> GaussianKernel:
    """Construct the filter mask for a given sigma.

    The default radius is ceil(3 sigma), which keeps better than 98% of
    the continuous mass inside the window.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = int(math.ceil(3.0 * sigma))
    if radius < 1:
        raise ValueError(f"radius must be at least 1, got {radius}")
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    w = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)
    return GaussianKernel(sigma=float(sigma), radius=int(radius),
                          weights=w / w.sum(),
                          unnormalized_center=gaussian_density(0.0, 0.0, sigma))


def filter_depth(depth: np.ndarray, kernel: GaussianKernel) -> tuple[np.ndarray, bool]:
    """Smooth a depth map, ignoring invalid-pixel sentinels.

    Each output pixel is the Gaussian-weighted average of the valid
    pixels in its window, with weights renormalized over those valid
    pixels; borders replicate the edge rows and columns. Pixels whose
    whole window is invalid stay at the sentinel.

    Returns
    -------
    filtered : ndarray (float64, same shape as input)
    all_invalid : bool
        True when the input held no valid pixel at all; the output is
        then entirely sentinel.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"depth must be 2-D, got shape {depth.shape}")
    valid = np.isfinite(depth)
    if not valid.any():
        return np.full_like(depth, DEPTH_INVALID), True

    filled = np.where(valid, depth, 0.0)
    num = ndimage.correlate(filled, kernel.weights, mode="nearest")
    den = ndimage.correlate(valid.astype(np.float64), kernel.weights, mode="nearest")
    out = np.full_like(depth, DEPTH_INVALID)
    ok = den > 0.0
    out[ok] = num[ok] / den[ok]
    return out, False


@dataclass
class FeatureTensor:
    """Channel-major (C, 18, 24) float32 feature map; all values finite."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[1:] != (GRID_H, GRID_W):
            raise ValueError(
                f"feature tensor must be (C, {GRID_H}, {GRID_W}), got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("feature tensor has non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]


def _cell_edges(size: int, cells: int) -> np.ndarray:
    # Evenly spread integer boundaries; every cell is non-empty when size >= cells.
    return (np.arange(cells + 1) * size) // cells


def _mean_or_zero(a: np.ndarray) -> float:
    return float(a.mean()) if a.size else 0.0


def _cell_stats(rgb: np.ndarray, r0, r1, c0, c1) -> np.ndarray:
    cell = rgb[r0:r1, c0:c1, :]
    lum = 0.299 * cell[:, :, 0] + 0.587 * cell[:, :, 1] + 0.114 * cell[:, :, 2]
    stats = np.empty(16, dtype=np.float64)
    stats[0:3] = cell.mean(axis=(0, 1))
    stats[3:6] = cell.std(axis=(0, 1))
    stats[6:9] = cell.min(axis=(0, 1))
    stats[9:12] = cell.max(axis=(0, 1))
    stats[12] = _mean_or_zero(np.abs(np.diff(lum, axis=1)))
    stats[13] = _mean_or_zero(np.abs(np.diff(lum, axis=0)))
    stats[14] = lum.mean()
    stats[15] = lum.std()
    return stats


def _grid_stats(rgb: np.ndarray) -> np.ndarray:
    """Per-cell 16-dim statistics for one eye, (GRID_H, GRID_W, 16)."""
    h, w = rgb.shape[:2]
    if h % GRID_H == 0 and w % GRID_W == 0:
        # Divisible shapes vectorize over the whole grid at once.
        ch, cw = h // GRID_H, w // GRID_W
        r = rgb.reshape(GRID_H, ch, GRID_W, cw, 3)
        lum = 0.299 * r[..., 0] + 0.587 * r[..., 1] + 0.114 * r[..., 2]
        out = np.empty((GRID_H, GRID_W, 16), dtype=np.float64)
        out[..., 0:3] = r.mean(axis=(1, 3))
        out[..., 3:6] = r.std(axis=(1, 3))
        out[..., 6:9] = r.min(axis=(1, 3))
        out[..., 9:12] = r.max(axis=(1, 3))
        if cw > 1:
            out[..., 12] = np.abs(np.diff(lum, axis=3)).mean(axis=(1, 3))
        else:
            out[..., 12] = 0.0
        if ch > 1:
            out[..., 13] = np.abs(np.diff(lum, axis=1)).mean(axis=(1, 3))
        else:
            out[..., 13] = 0.0
        out[..., 14] = lum.mean(axis=(1, 3))
        out[..., 15] = lum.std(axis=(1, 3))
        return out
    rows = _cell_edges(h, GRID_H)
    cols = _cell_edges(w, GRID_W)
    out = np.empty((GRID_H, GRID_W, 16), dtype=np.float64)
    for gi in range(GRID_H):
        for gj in range(GRID_W):
            out[gi, gj] = _cell_stats(rgb, rows[gi], rows[gi + 1],
                                      cols[gj], cols[gj + 1])
    return out


def extract_rgb_features(rgb_left: np.ndarray, rgb_right: np.ndarray) -> FeatureTensor:
    """Reduce a stereo RGB pair to a (384, 18, 24) feature tensor.

    Each grid cell gets a 32-dim descriptor (16 statistics per eye:
    per-channel mean/std/min/max plus luminance gradient magnitudes,
    mean, and std), expanded to 384 channels by a fixed seeded linear
    map. Deterministic for a given input.
    """
    maps = []
    for name, rgb in (("rgb_left", rgb_left), ("rgb_right", rgb_right)):
        rgb = np.asarray(rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"{name} must be (H, W, 3), got {rgb.shape}")
        if rgb.shape[0] < GRID_H or rgb.shape[1] < GRID_W:
            raise ValueError(
                f"{name} smaller than the {GRID_H}x{GRID_W} grid: {rgb.shape}")
        maps.append(rgb)
    if maps[0].shape != maps[1].shape:
        raise ValueError("stereo pair shapes differ")

    desc = np.concatenate([_grid_stats(rgb) for rgb in maps], axis=2)
    feat = np.tensordot(_rgb_projection(), desc, axes=([1], [2]))
    return FeatureTensor(values=feat.astype(np.float32))


@lru_cache(maxsize=1)
def _rgb_projection() -> np.ndarray:
    rng = np.random.default_rng(RGB_PROJECTION_SEED)
    return rng.standard_normal((RGB_CHANNELS, CELL_STAT_DIM)) / math.sqrt(CELL_STAT_DIM)


@lru_cache(maxsize=1)
def _depth_stack_params():
    rng = np.random.default_rng(DEPTH_STACK_SEED)
    k1 = rng.standard_normal((8, 1, 3, 3)) / 3.0
    b1 = rng.standard_normal(8) * 0.1
    k2 = rng.standard_normal((16, 8, 3, 3)) / math.sqrt(8 * 9)
    b2 = rng.standard_normal(16) * 0.1
    mix = rng.standard_normal((DEPTH_CHANNELS, 16)) / 4.0
    mix_b = rng.standard_normal(DEPTH_CHANNELS) * 0.1
    return k1, b1, k2, b2, mix, mix_b


def _conv3x3_stack(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # x: (C_in, H, W); kernels: (C_out, C_in, 3, 3); replicated borders.
    out = np.empty((kernels.shape[0],) + x.shape[1:], dtype=np.float64)
    for o in range(kernels.shape[0]):
        acc = np.zeros(x.shape[1:], dtype=np.float64)
        for c in range(x.shape[0]):
            acc += ndimage.correlate(x[c], kernels[o, c], mode="nearest")
        out[o] = np.tanh(acc + bias[o])
    return out


def extract_depth_features(depth: np.ndarray) -> FeatureTensor:
    """Reduce a filtered depth map to a (128, 18, 24) feature tensor.

    The map is normalized by the working range, passed through two fixed
    seeded 3x3 convolutions with tanh activations, average-pooled onto
    the grid, then mixed to 128 channels with a final tanh. All
    parameters come from a fixed seed, so the path is deterministic.

    Raises
    ------
    ValueError
        If any pixel is non-finite: sentinels must be resolved by
        filter_depth (or replaced on load) before feature extraction.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"depth must be 2-D, got shape {depth.shape}")
    if depth.shape[0] < GRID_H or depth.shape[1] < GRID_W:
        raise ValueError(f"depth smaller than the {GRID_H}x{GRID_W} grid: {depth.shape}")
    if not np.isfinite(depth).all():
        raise ValueError("depth has unresolved invalid pixels; filter or replace first")

    k1, b1, k2, b2, mix, mix_b = _depth_stack_params()
    x = (depth / DEPTH_MAX_RANGE_M)[None, :, :]
    x = _conv3x3_stack(x, k1, b1)
    x = _conv3x3_stack(x, k2, b2)

    rows = _cell_edges(x.shape[1], GRID_H)
    cols = _cell_edges(x.shape[2], GRID_W)
    pooled = np.empty((16, GRID_H, GRID_W), dtype=np.float64)
    for gi in range(GRID_H):
        for gj in range(GRID_W):
            pooled[:, gi, gj] = x[:, rows[gi]:rows[gi + 1], cols[gj]:cols[gj + 1]].mean(axis=(1, 2))

    feat = np.tanh(np.tensordot(mix, pooled, axes=([1], [0])) + mix_b[:, None, None])
    return FeatureTensor(values=feat.astype(np.float32))


def fuse_features(rgb: FeatureTensor, depth: FeatureTensor) -> FeatureTensor:
    """Concatenate RGB and depth tensors to (512, 18, 24), RGB first.

    Channels 0..383 are exactly the RGB tensor and 384..511 exactly the
    depth tensor, so either side can be recovered by slicing.
    """
    if rgb.channels != RGB_CHANNELS:
        raise ValueError(f"rgb tensor has {rgb.channels} channels, expected {RGB_CHANNELS}")
    if depth.channels != DEPTH_CHANNELS:
        raise ValueError(f"depth tensor has {depth.channels} channels, expected {DEPTH_CHANNELS}")
    return FeatureTensor(values=np.concatenate([rgb.values, depth.values], axis=0))
