"""Core domain types shared across the tracker.

Everything here is immutable once built. Numeric arrays held by the types are
flagged read-only so they can be shared between threads without copying.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

JERSEY_SIZE = 100
CHAR_SIZE = 11  # EOL followed by digits 0-9
TEAM_SIZE = 3  # team A, team B, referee
EOL = 0

SPATIAL_MODES = ("field", "frame")
SCORER_KINDS = ("logistic", "message_passing")
ROUNDING_KINDS = ("greedy", "exact")


def max_temporal_span(levels: int) -> int:
    """Largest frame gap bridgeable inside one window of a ``levels``-deep hierarchy.

    Every level doubles the temporal extent of its graphs, starting from two
    frames at level 1, so the top level spans ``2 ** levels`` frames
    (7 levels -> 128, 9 -> 512, 10 -> 1024).
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    return 2**levels


def level_window(level: int) -> int:
    """Frame extent of the graphs built at ``level``."""
    return max_temporal_span(level)


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Detection:
    frame: int
    bbox: tuple[float, float, float, float]  # x, y, w, h (top-left origin)
    confidence: float
    det_id: int

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"negative frame {self.frame} for det {self.det_id}")
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"non-positive extent {self.bbox} for det {self.det_id}")

    @property
    def center(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return (x + w / 2.0, y + h / 2.0)


@dataclass(frozen=True)
class CharConfidences:
    """Per-position character confidences of a two-character jersey read.

    Index 0 is end-of-line, indices 1..10 are the digits 0..9.
    """

    c1: np.ndarray
    c2: np.ndarray

    def __post_init__(self):
        for name in ("c1", "c2"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (CHAR_SIZE,):
                raise ValueError(f"{name} must have {CHAR_SIZE} entries, got {arr.shape}")
            if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} entries must lie in [0, 1]")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class FeatureBundle:
    """Per-detection features consumed by the association graphs."""

    appearance: np.ndarray
    jersey: np.ndarray
    legible: bool
    team: np.ndarray
    position: np.ndarray  # (x_m, y_m) in field mode, (cx, cy, w, h) in frame mode
    spatial_mode: str = "field"

    def __post_init__(self):
        object.__setattr__(self, "appearance", _frozen(self.appearance))
        jersey = _frozen(self.jersey)
        if jersey.shape != (JERSEY_SIZE,):
            raise ValueError(f"jersey vector must have {JERSEY_SIZE} entries")
        if np.any(jersey < 0) or np.any(jersey > 1) or jersey.sum() > 1 + 1e-6:
            raise ValueError("jersey entries must lie in [0, 1] and sum to at most 1")
        if not self.legible and np.any(jersey != 0):
            raise ValueError("illegible jersey must be the zero vector")
        object.__setattr__(self, "jersey", jersey)
        team = _frozen(self.team)
        if team.shape != (TEAM_SIZE,) or sorted(team.tolist()) != [0.0, 0.0, 1.0]:
            raise ValueError(f"team must be a one-hot vector of length {TEAM_SIZE}")
        object.__setattr__(self, "team", team)
        if self.spatial_mode not in SPATIAL_MODES:
            raise ValueError(f"unknown spatial mode {self.spatial_mode!r}")
        pos = _frozen(self.position)
        expected = 2 if self.spatial_mode == "field" else 4
        if pos.shape != (expected,):
            raise ValueError(f"{self.spatial_mode} position must have {expected} entries")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class Tracklet:
    """A temporally ordered chain of detections acting as one graph node.

    Aggregates are member means. ``jersey`` is averaged over legible members
    only, ``n_legible`` records how many there were.
    """

    node_id: int
    det_ids: tuple[int, ...]
    frames: tuple[int, ...]
    level: int
    appearance: np.ndarray
    jersey: np.ndarray
    n_legible: int
    team: np.ndarray
    first_box: np.ndarray  # frame-space (x, y, w, h) of the first member
    last_box: np.ndarray
    first_field: Optional[np.ndarray] = None
    last_field: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("tracklet level must be >= 1")
        if len(self.det_ids) != len(self.frames) or not self.det_ids:
            raise ValueError("tracklet needs one frame per detection")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError(f"tracklet {self.node_id} frames not strictly increasing")
        for name in ("appearance", "jersey", "team", "first_box", "last_box"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        for name in ("first_field", "last_field"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(v))

    @property
    def size(self) -> int:
        return len(self.det_ids)

    @property
    def legible(self) -> bool:
        return self.n_legible > 0

    @property
    def first_frame(self) -> int:
        return self.frames[0]

    @property
    def last_frame(self) -> int:
        return self.frames[-1]

    @classmethod
    def from_detection(cls, det: Detection, bundle: FeatureBundle, field_point=None) -> "Tracklet":
        return cls(
            node_id=det.det_id,
            det_ids=(det.det_id,),
            frames=(det.frame,),
            level=1,
            appearance=bundle.appearance,
            jersey=bundle.jersey,
            n_legible=int(bundle.legible),
            team=bundle.team,
            first_box=det.bbox,
            last_box=det.bbox,
            first_field=field_point,
            last_field=field_point,
        )

    @classmethod
    def merge(cls, chain: Sequence["Tracklet"], level: int) -> "Tracklet":
        """Concatenate a time-ordered chain into one tracklet at ``level``.

        Means are recombined with member sizes as weights, which equals the
        mean over all underlying detections.
        """
        if not chain:
            raise ValueError("cannot merge an empty chain")
        sizes = np.array([t.size for t in chain], dtype=np.float64)
        app = np.sum([t.appearance * n for t, n in zip(chain, sizes)], axis=0) / sizes.sum()
        team = np.sum([t.team * n for t, n in zip(chain, sizes)], axis=0) / sizes.sum()
        n_leg = sum(t.n_legible for t in chain)
        if n_leg:
            jersey = np.sum([t.jersey * t.n_legible for t in chain if t.n_legible], axis=0) / n_leg
        else:
            jersey = np.zeros(JERSEY_SIZE)
        return cls(
            node_id=chain[0].node_id,
            det_ids=tuple(d for t in chain for d in t.det_ids),
            frames=tuple(f for t in chain for f in t.frames),
            level=level,
            appearance=app,
            jersey=jersey,
            n_legible=n_leg,
            team=team,
            first_box=chain[0].first_box,
            last_box=chain[-1].last_box,
            first_field=chain[0].first_field,
            last_field=chain[-1].last_field,
        )


@dataclass(frozen=True)
class AssocGraph:
    """Candidate associations between nodes of one level and window.

    ``src``/``dst`` index into ``nodes``; ``features`` has one row per edge.
    """

    level: int
    window: tuple[int, int]
    nodes: tuple[Tracklet, ...]
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "src", _frozen(self.src, np.int64).reshape(-1))
        object.__setattr__(self, "dst", _frozen(self.dst, np.int64).reshape(-1))
        feats = _frozen(self.features)
        if feats.ndim == 1:
            feats = feats.reshape(len(self.src), -1)
        object.__setattr__(self, "features", feats)
        if self.scores is not None:
            scores = _frozen(self.scores)
            if scores.shape != self.src.shape:
                raise ValueError("one score per edge required")
            object.__setattr__(self, "scores", scores)
        if len(self.src):
            last = np.array([n.last_frame for n in self.nodes])
            first = np.array([n.first_frame for n in self.nodes])
            bad = np.flatnonzero(last[self.src] >= first[self.dst])
            if len(bad):
                i = bad[0]
                raise ValueError(f"edge {self.src[i]}->{self.dst[i]} does not point forward in time")

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def edges(self) -> Iterator[tuple[int, int, np.ndarray, Optional[float]]]:
        for i in range(self.n_edges):
            score = None if self.scores is None else float(self.scores[i])
            yield (self.nodes[self.src[i]].node_id, self.nodes[self.dst[i]].node_id,
                   self.features[i], score)

    def with_scores(self, scores) -> "AssocGraph":
        return dataclasses.replace(self, scores=np.asarray(scores, dtype=np.float64))


@dataclass(frozen=True)
class TrackPoint:
    frame: int
    bbox: tuple[float, float, float, float]
    conf: float = 1.0
    # Row index in the detection source; not part of the serialized form.
    det_id: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class SequenceInfo:
    n_frames: int = 0
    fps: float = 0.0
    width: int = 0
    height: int = 0


@dataclass(frozen=True)
class TrackSet:
    tracks: dict[int, tuple[TrackPoint, ...]]
    info: SequenceInfo = SequenceInfo()

    def __post_init__(self):
        object.__setattr__(
            self, "tracks", {int(k): tuple(v) for k, v in sorted(self.tracks.items())}
        )

    def __len__(self) -> int:
        return len(self.tracks)

    @property
    def n_points(self) -> int:
        return sum(len(v) for v in self.tracks.values())

    def frames(self) -> list[int]:
        return sorted({p.frame for pts in self.tracks.values() for p in pts})

    def by_frame(self) -> dict[int, list[tuple[int, TrackPoint]]]:
        out: dict[int, list[tuple[int, TrackPoint]]] = {}
        for tid, pts in self.tracks.items():
            for p in pts:
                out.setdefault(p.frame, []).append((tid, p))
        return out


def validate_trackset(t: TrackSet) -> list[str]:
    """Return human-readable invariant violations; empty means valid."""
    problems = []
    seen: dict[tuple[int, int], int] = {}
    for tid, pts in t.tracks.items():
        for a, b in zip(pts, pts[1:]):
            if b.frame <= a.frame:
                problems.append(f"track {tid}: non-increasing frame {a.frame} -> {b.frame}")
        for p in pts:
            if p.det_id < 0:
                continue
            key = (p.frame, p.det_id)
            if key in seen and seen[key] != tid:
                problems.append(
                    f"shared detection: det {p.det_id} at frame {p.frame} "
                    f"in tracks {seen[key]} and {tid}"
                )
            seen.setdefault(key, tid)
    return problems


@dataclass(frozen=True)
class EngineConfig:
    levels: int = 9
    prune_k: int = 10
    spatial_mode: str = "field"
    team_cluster_n: int = 500
    scorer: str = "logistic"
    rounding: str = "greedy"
    window_overlap: float = 0.5
    seed: int = 0
    edge_threshold: float = 0.5
    prune_lambda: float = 0.5
    mp_rounds: int = 8
    exact_cap: int = 200
    use_jersey: bool = True
    use_team: bool = True
    use_time: bool = True
    use_iou: bool = False
    field_extent: tuple[float, float] = (105.0, 68.0)

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.prune_k < 1:
            raise ValueError("prune_k must be >= 1")
        if self.team_cluster_n < 2:
            raise ValueError("team_cluster_n must be >= 2")
        if self.spatial_mode not in SPATIAL_MODES:
            raise ValueError(f"spatial_mode must be one of {SPATIAL_MODES}")
        if self.scorer not in SCORER_KINDS:
            raise ValueError(f"scorer must be one of {SCORER_KINDS}")
        if self.rounding not in ROUNDING_KINDS:
            raise ValueError(f"rounding must be one of {ROUNDING_KINDS}")
        if not 0.0 < self.window_overlap < 1.0:
            raise ValueError("window_overlap must be in (0, 1)")
        if self.mp_rounds < 0:
            raise ValueError("mp_rounds must be >= 0")
        object.__setattr__(self, "field_extent", tuple(float(v) for v in self.field_extent))

    @property
    def span(self) -> int:
        return max_temporal_span(self.levels)

    def replace(self, **changes) -> "EngineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["field_extent"] = list(self.field_extent)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def sort_nodes(nodes: Iterable[Tracklet]) -> list[Tracklet]:
    return sorted(nodes, key=lambda t: (t.first_frame, t.node_id))
