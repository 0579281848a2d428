"""Builders for small hand-made fixtures shared by the test modules."""

from __future__ import annotations

import numpy as np

from hiertrack.model import JERSEY_SIZE, AssocGraph, SequenceInfo, TrackPoint, TrackSet, Tracklet

# Outcome lines of the acceptance criteria, printed in the terminal summary.
CRITERIA_RESULTS: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    CRITERIA_RESULTS.append(line)
    print(line)


def tracklet(node_id, frames, app=None, jersey=None, team=(1.0, 0.0, 0.0), box=(0.0, 0.0, 10.0, 20.0),
             field=(0.0, 0.0), end_box=None, end_field=None, level=1, det_ids=None):
    frames = tuple(int(f) for f in np.atleast_1d(frames))
    app = np.array([1.0, 0.0, 0.0, 0.0]) if app is None else np.asarray(app, dtype=np.float64)
    j = np.zeros(JERSEY_SIZE) if jersey is None else np.asarray(jersey, dtype=np.float64)
    return Tracklet(
        node_id=node_id,
        det_ids=tuple(det_ids) if det_ids is not None else tuple(range(node_id * 1000, node_id * 1000 + len(frames))),
        frames=frames,
        level=level,
        appearance=app,
        jersey=j,
        n_legible=int(jersey is not None) * len(frames),
        team=np.asarray(team, dtype=np.float64),
        first_box=box,
        last_box=box if end_box is None else end_box,
        first_field=np.asarray(field, dtype=np.float64),
        last_field=np.asarray(field if end_field is None else end_field, dtype=np.float64),
    )


def chain_graph(frames, edges, scores, level=1):
    """Graph over single-frame nodes at ``frames`` with the given edges and scores."""
    nodes = [tracklet(i, f) for i, f in enumerate(frames)]
    src = [s for s, _ in edges]
    dst = [d for _, d in edges]
    return AssocGraph(level, (0, max(frames) + 1), tuple(nodes), src, dst,
                      np.zeros((len(edges), 1)), np.asarray(scores, dtype=np.float64))


def random_graph(rng: np.random.Generator, max_nodes=7, max_edges=12, n_frames=4):
    """Random forward DAG with scores in (0, 1)."""
    n = int(rng.integers(1, max_nodes + 1))
    frames = sorted(rng.integers(0, n_frames, size=n).tolist())
    pairs = [(a, b) for a in range(n) for b in range(n) if frames[a] < frames[b]]
    m = min(len(pairs), int(rng.integers(0, max_edges + 1)))
    pick = sorted(rng.choice(len(pairs), size=m, replace=False).tolist()) if m else []
    edges = [pairs[i] for i in pick]
    scores = rng.uniform(0.0, 1.0, size=m)
    return chain_graph(frames, edges, scores)


def trackset(tracks: dict, info: SequenceInfo = SequenceInfo()) -> TrackSet:
    """``{tid: [(frame, (x, y, w, h)), ...]}`` to a TrackSet."""
    return TrackSet({tid: tuple(TrackPoint(f, tuple(float(v) for v in b)) for f, b in pts)
                     for tid, pts in tracks.items()}, info)


def random_boxes_instance(rng: np.random.Generator, max_frames=3, max_ids=3):
    """Random gt and pred TrackSets with overlapping boxes on a few frames."""
    n_frames = int(rng.integers(1, max_frames + 1))
    gt, pred = {}, {}
    n_gt = int(rng.integers(0, max_ids + 1))
    n_pr = int(rng.integers(0, max_ids + 1))
    anchors = rng.uniform(0, 20, size=(max_ids, 2))
    for tid in range(n_gt):
        pts = []
        for f in range(n_frames):
            if rng.random() < 0.8:
                x, y = anchors[tid] + rng.normal(0, 1.0, 2)
                pts.append((f, (x, y, rng.uniform(6, 10), rng.uniform(6, 10))))
        if pts:
            gt[tid] = pts
    for tid in range(n_pr):
        pts = []
        base = anchors[int(rng.integers(0, max_ids))]
        for f in range(n_frames):
            if rng.random() < 0.8:
                x, y = base + rng.normal(0, 2.0, 2)
                pts.append((f, (x, y, rng.uniform(6, 10), rng.uniform(6, 10))))
        if pts:
            pred[tid] = pts
    return trackset(pred), trackset(gt)
