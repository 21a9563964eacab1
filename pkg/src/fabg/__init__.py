"""Latency-compensated execution of chunked facial action predictions.

The package models a face-actuation pipeline end to end: 61-dim action
frames and episodes with a binary container, RGB-D feature extraction,
chunk-predicting policies, consumption strategies under modeled delays,
trajectory metrics, and a config-driven experiment runner with a CLI.
"""

from .model import (ACTION_DIM, BLENDSHAPE_COUNT, BLENDSHAPE_NAMES, JAW_OPEN_INDEX,
                    ActionChunk, ActionFrame, Episode, EpisodeFormatError,
                    LatencyModel, Observation, slice_chunk, validate_frame)

__all__ = [
    "ACTION_DIM", "BLENDSHAPE_COUNT", "BLENDSHAPE_NAMES", "JAW_OPEN_INDEX",
    "ActionChunk", "ActionFrame", "Episode", "EpisodeFormatError",
    "LatencyModel", "Observation", "slice_chunk", "validate_frame",
]

__version__ = "0.1.0"
