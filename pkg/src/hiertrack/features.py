"""Per-detection features and the node similarities used as edge features."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ingest import FeatureTable, SequenceBundle
from .model import (
    EOL,
    JERSEY_SIZE,
    TEAM_SIZE,
    CharConfidences,
    Detection,
    EngineConfig,
    FeatureBundle,
    Tracklet,
)

log = logging.getLogger(__name__)

W_EPS = 1e-9


# ---------------------------------------------------------------------------
# Jersey numbers


def jersey_vector(cc: CharConfidences) -> tuple[np.ndarray, bool]:
    """Confidence over jersey numbers 0-99 from two-position character confidences.

    Reads whose first position is most likely end-of-line are illegible and
    map to the zero vector. One-digit number ``d`` gets ``c1(d) * c2(EOL)``,
    two-digit number ``ab`` gets ``c1(a) * c2(b)``. Two-character reads with a
    leading zero do not name a jersey number and carry no mass.
    """
    c1 = np.asarray(cc.c1, dtype=np.float64)
    c2 = np.asarray(cc.c2, dtype=np.float64)
    if int(np.argmax(c1)) == EOL:
        return np.zeros(JERSEY_SIZE), False
    d1 = c1[1:]  # digits 0..9
    d2 = c2[1:]
    out = np.empty(JERSEY_SIZE)
    out[:10] = d1 * c2[EOL]
    out[10:] = np.outer(d1[1:], d2).ravel()
    return out, True


# ---------------------------------------------------------------------------
# Team identity


class DegenerateClustering(ValueError):
    pass


@dataclass(frozen=True)
class TeamModel:
    centroid_a: np.ndarray
    centroid_b: np.ndarray
    fitted: bool = True

    def __post_init__(self):
        a = np.array(self.centroid_a, dtype=np.float64)
        b = np.array(self.centroid_b, dtype=np.float64)
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "centroid_a", a)
        object.__setattr__(self, "centroid_b", b)
        if self.fitted and np.linalg.norm(a - b) <= 1e-9:
            raise DegenerateClustering("team centroids coincide")


def fit_team_model(embeddings, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> TeamModel:
    """Two-means over player embeddings with farthest-pair seeding.

    The seed picks the probe point; the first centroid is the point farthest
    from it and the second the point farthest from the first. The centroid
    that compares lexicographically smaller becomes team A.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least 2 player embeddings to fit teams")
    rng = np.random.default_rng(seed)
    probe = X[rng.integers(len(X))]
    i = int(np.argmax(((X - probe) ** 2).sum(1)))
    j = int(np.argmax(((X - X[i]) ** 2).sum(1)))
    if np.all(X[i] == X[j]):
        raise DegenerateClustering("all team embeddings are identical")
    centroids = np.stack([X[i], X[j]])
    for _ in range(max_iter):
        d = ((X[:, None, :] - centroids[None]) ** 2).sum(-1)
        labels = (d[:, 1] < d[:, 0]).astype(int)
        new = centroids.copy()
        for k in (0, 1):
            members = X[labels == k]
            if len(members):
                new[k] = members.mean(0)
        moved = np.abs(new - centroids).max()
        centroids = new
        if moved < tol:
            break
    a, b = centroids
    if tuple(b) < tuple(a):
        a, b = b, a
    return TeamModel(a, b)


def team_onehot(embedding, model: Optional[TeamModel] = None, referee: bool = False) -> np.ndarray:
    if referee:
        return np.array([0.0, 0.0, 1.0])
    if model is None or not model.fitted:
        raise ValueError("team model must be fitted to classify a player")
    e = np.asarray(embedding, dtype=np.float64)
    da = np.sum((e - model.centroid_a) ** 2)
    db = np.sum((e - model.centroid_b) ** 2)
    return np.array([1.0, 0.0, 0.0]) if da <= db else np.array([0.0, 1.0, 0.0])


def label_onehot(label: int) -> np.ndarray:
    out = np.zeros(TEAM_SIZE)
    out[label] = 1.0
    return out


# ---------------------------------------------------------------------------
# Field coordinates


def project_points(points, H) -> np.ndarray:
    """Apply a homography to an (n, 2) array of pixel points."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    Hm = np.asarray(H, dtype=np.float64)
    homog = np.concatenate([P, np.ones((len(P), 1))], axis=1) @ Hm.T
    w = homog[:, 2]
    if np.any(np.abs(w) < W_EPS):
        raise ValueError("point projects to infinity")
    return homog[:, :2] / w[:, None]


def project_to_field(bbox, H) -> tuple[float, float]:
    """Field position of the bounding-box middle point."""
    x, y, w, h = bbox
    p = project_points([[x + w / 2.0, y + h / 2.0]], H)[0]
    return float(p[0]), float(p[1])


def interpolate_homographies(known: Mapping[int, np.ndarray], targets: Iterable[int]) -> dict[int, np.ndarray]:
    """Fill frames without a registered homography.

    Between two known frames matrices are blended element-wise and linearly;
    before the first and after the last known frame the nearest matrix is
    copied. Known frames are returned untouched.
    """
    if not known:
        raise ValueError("need at least one known homography")
    frames = np.array(sorted(known))
    mats = np.stack([np.asarray(known[f], dtype=np.float64) for f in frames])
    out = {}
    for t in targets:
        t = int(t)
        if t in known:
            out[t] = np.asarray(known[t], dtype=np.float64)
            continue
        k = int(np.searchsorted(frames, t))
        if k == 0:
            out[t] = mats[0].copy()
        elif k == len(frames):
            out[t] = mats[-1].copy()
        else:
            f0, f1 = frames[k - 1], frames[k]
            a = (t - f0) / (f1 - f0)
            out[t] = (1.0 - a) * mats[k - 1] + a * mats[k]
    return out


# ---------------------------------------------------------------------------
# Edge features


@dataclass(frozen=True)
class EdgeLayout:
    """Which similarity channels an edge feature vector carries, in order."""

    spatial_mode: str = "field"
    image_diag: float = 1.0
    use_jersey: bool = True
    use_team: bool = True
    use_time: bool = True
    use_iou: bool = False

    @classmethod
    def from_config(cls, config: EngineConfig, image_diag: float = 1.0) -> "EdgeLayout":
        return cls(config.spatial_mode, float(image_diag),
                   config.use_jersey, config.use_team, config.use_time, config.use_iou)

    @property
    def names(self) -> tuple[str, ...]:
        names = ["app_cos"]
        if self.use_jersey:
            names += ["jersey_cos", "jersey_valid"]
        if self.use_team:
            names.append("team_cos")
        names += ["field_dist"] if self.spatial_mode == "field" else ["frame_dist", "log_size_ratio"]
        if self.use_time:
            names.append("dt")
        if self.use_iou:
            names.append("iou")
        return tuple(names)

    @property
    def dim(self) -> int:
        return len(self.names)


def _unit_rows(X: np.ndarray, what: Optional[str] = None) -> np.ndarray:
    n = np.linalg.norm(X, axis=1, keepdims=True)
    zero = n[:, 0] == 0
    if what is not None and np.any(zero):
        log.warning("%d zero-norm %s vector(s); cosine taken as 0", int(zero.sum()), what)
    return np.divide(X, n, out=np.zeros_like(X), where=n > 0)


def _centers(boxes: np.ndarray) -> np.ndarray:
    return boxes[:, :2] + boxes[:, 2:] / 2.0


def _iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ix = np.clip(np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = ix * iy
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


class NodeMatrix:
    """Column-stacked view of a node list for vectorised pair features."""

    def __init__(self, nodes: Sequence[Tracklet], spatial_mode: str):
        self.n = len(nodes)
        self.first = np.array([t.first_frame for t in nodes], dtype=np.int64)
        self.last = np.array([t.last_frame for t in nodes], dtype=np.int64)
        self.app = _unit_rows(np.stack([t.appearance for t in nodes]), "appearance") if nodes else None
        self.jersey = _unit_rows(np.stack([t.jersey for t in nodes])) if nodes else None
        self.legible = np.array([t.legible for t in nodes], dtype=bool)
        self.team = _unit_rows(np.stack([t.team for t in nodes]), "team") if nodes else None
        self.first_box = np.stack([t.first_box for t in nodes]) if nodes else None
        self.last_box = np.stack([t.last_box for t in nodes]) if nodes else None
        if spatial_mode == "field" and nodes:
            if any(t.first_field is None for t in nodes):
                raise ValueError("field mode needs field coordinates on every node")
            self.first_field = np.stack([t.first_field for t in nodes])
            self.last_field = np.stack([t.last_field for t in nodes])

    def app_cos(self, src, dst) -> np.ndarray:
        return np.einsum("ij,ij->i", self.app[src], self.app[dst])

    def spatial_norm(self, src, dst, layout: EdgeLayout, field_diag: float) -> np.ndarray:
        """Spatial distance scaled to roughly [0, 1], used for pruning."""
        if layout.spatial_mode == "field":
            d = np.linalg.norm(self.last_field[src] - self.first_field[dst], axis=1)
            return d / field_diag
        d = np.linalg.norm(_centers(self.last_box[src]) - _centers(self.first_box[dst]), axis=1)
        return d / layout.image_diag


def gap_level(gap) -> np.ndarray:
    """Lowest hierarchy level whose graphs can hold a frame gap."""
    gap = np.asarray(gap, dtype=np.int64)
    return np.maximum(1, np.ceil(np.log2(gap + 1)).astype(np.int64))


def pair_features(nm: NodeMatrix, src, dst, layout: EdgeLayout, level: Optional[int] = None) -> np.ndarray:
    """Edge feature rows for ``src -> dst``.

    ``dt`` is the frame gap relative to the extent of the graph's level; when
    ``level`` is not given, the lowest level able to hold each gap is used.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    cols = [nm.app_cos(src, dst)]
    if layout.use_jersey:
        valid = nm.legible[src] & nm.legible[dst]
        jc = np.einsum("ij,ij->i", nm.jersey[src], nm.jersey[dst])
        cols += [np.where(valid, jc, 0.0), valid.astype(np.float64)]
    if layout.use_team:
        cols.append(np.einsum("ij,ij->i", nm.team[src], nm.team[dst]))
    if layout.spatial_mode == "field":
        cols.append(np.linalg.norm(nm.last_field[src] - nm.first_field[dst], axis=1))
    else:
        a, b = nm.last_box[src], nm.first_box[dst]
        cols.append(np.linalg.norm(_centers(a) - _centers(b), axis=1) / layout.image_diag)
        cols.append(np.log(b[:, 3] / a[:, 3]))
    if layout.use_time:
        gap = nm.first[dst] - nm.last[src]
        lvl = gap_level(gap) if level is None else level
        cols.append(gap / np.exp2(lvl))
    if layout.use_iou:
        cols.append(_iou(nm.last_box[src], nm.first_box[dst]))
    if not len(src):
        return np.zeros((0, layout.dim))
    return np.stack(cols, axis=1)


def node_similarities(a: Tracklet, b: Tracklet, mode: str = "field",
                      layout: Optional[EdgeLayout] = None, level: Optional[int] = None) -> np.ndarray:
    """Edge feature vector for the candidate association ``a -> b``."""
    if a.last_frame >= b.first_frame:
        raise ValueError("first tracklet must end before the second starts")
    layout = layout or EdgeLayout(spatial_mode=mode)
    if layout.spatial_mode != mode:
        raise ValueError("layout and mode disagree")
    nm = NodeMatrix([a, b], mode)
    return pair_features(nm, [0], [1], layout, level)[0]


# ---------------------------------------------------------------------------
# Sequence-level feature building


@dataclass
class DetectionFeatures:
    """Per-detection feature arrays aligned with ``detections``."""

    detections: list[Detection]
    appearance: np.ndarray
    jersey: np.ndarray
    legible: np.ndarray
    team: np.ndarray
    field: Optional[np.ndarray]
    team_model: Optional[TeamModel]
    image_diag: float

    def bundle(self, i: int, spatial_mode: str = "field") -> FeatureBundle:
        det = self.detections[i]
        if spatial_mode == "field":
            pos = self.field[i]
        else:
            x, y, w, h = det.bbox
            pos = (x + w / 2.0, y + h / 2.0, w, h)
        return FeatureBundle(self.appearance[i], self.jersey[i], bool(self.legible[i]),
                             self.team[i], pos, spatial_mode)

    def tracklet(self, i: int) -> Tracklet:
        det = self.detections[i]
        fp = None if self.field is None else self.field[i]
        return Tracklet(
            node_id=det.det_id,
            det_ids=(det.det_id,),
            frames=(det.frame,),
            level=1,
            appearance=self.appearance[i],
            jersey=self.jersey[i],
            n_legible=int(self.legible[i]),
            team=self.team[i],
            first_box=det.bbox,
            last_box=det.bbox,
            first_field=fp,
            last_field=fp,
        )


def first_player_embeddings(detections: Sequence[Detection], table: FeatureTable, n: int) -> np.ndarray:
    order = sorted(detections, key=lambda d: (d.frame, d.det_id))
    rows = []
    for d in order:
        rec = table.records[d.det_id]
        if rec.referee or rec.team_embedding is None:
            continue
        rows.append(rec.team_embedding)
        if len(rows) == n:
            break
    return np.asarray(rows, dtype=np.float64)


def build_features(bundle: SequenceBundle, config: Optional[EngineConfig] = None) -> DetectionFeatures:
    config = config or bundle.config
    dets = bundle.detections
    table = bundle.features
    n = len(dets)
    app = np.zeros((n, table.appearance_dim))
    jersey = np.zeros((n, JERSEY_SIZE))
    legible = np.zeros(n, dtype=bool)
    team = np.zeros((n, TEAM_SIZE))

    model = None
    if table.team_mode == "embedding":
        emb = first_player_embeddings(dets, table, config.team_cluster_n)
        model = fit_team_model(emb, seed=config.seed)

    for i, d in enumerate(dets):
        rec = table.records[d.det_id]
        app[i] = rec.appearance
        if rec.chars is not None:
            jersey[i], legible[i] = jersey_vector(rec.chars)
        if table.team_mode == "label":
            team[i] = label_onehot(rec.team_label)
        elif table.team_mode == "embedding":
            team[i] = team_onehot(rec.team_embedding, model, rec.referee)
        else:
            team[i] = label_onehot(2 if rec.referee else 0)

    fields = None
    if config.spatial_mode == "field":
        if not bundle.homographies:
            raise ValueError("field mode needs homographies")
        frames = sorted({d.frame for d in dets})
        hs = interpolate_homographies(bundle.homographies, frames)
        fields = np.zeros((n, 2))
        by_frame: dict[int, list[int]] = {}
        for i, d in enumerate(dets):
            by_frame.setdefault(d.frame, []).append(i)
        for f, idx in by_frame.items():
            H = hs[f]
            boxes = np.array([dets[i].bbox for i in idx], dtype=np.float64)
            fields[idx] = project_points(_centers(boxes), H)

    info = bundle.info
    if info.width > 0 and info.height > 0:
        diag = float(np.hypot(info.width, info.height))
    elif dets:
        boxes = np.array([d.bbox for d in dets])
        diag = float(np.hypot((boxes[:, 0] + boxes[:, 2]).max(), (boxes[:, 1] + boxes[:, 3]).max()))
    else:
        diag = 1.0
    return DetectionFeatures(dets, app, jersey, legible, team, fields, model, diag)
