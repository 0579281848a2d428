"""Hierarchical graph-based multi-object tracking for team sports."""

__version__ = "0.1.0"

from .model import (
    AssocGraph,
    CharConfidences,
    Detection,
    EngineConfig,
    FeatureBundle,
    TrackPoint,
    TrackSet,
    Tracklet,
    max_temporal_span,
)

__all__ = [
    "AssocGraph",
    "CharConfidences",
    "Detection",
    "EngineConfig",
    "FeatureBundle",
    "TrackPoint",
    "TrackSet",
    "Tracklet",
    "max_temporal_span",
]
