"""Hierarchical association over sliding windows.

A window of ``2 ** L`` frames is solved bottom-up. Level ``l`` cuts the window
into blocks of ``2 ** l`` frames; each block becomes one association graph
whose nodes are the tracklets produced inside its two halves at level
``l - 1`` (single detections at level 1). Solved paths are merged into longer
tracklets and handed to the next level. Consecutive windows overlap and are
joined through the detections they share.
"""

from __future__ import annotations

import dataclasses
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .features import DetectionFeatures, EdgeLayout, NodeMatrix, build_features, pair_features
from .ingest import SequenceBundle
from .model import (
    AssocGraph,
    EngineConfig,
    SequenceInfo,
    TrackPoint,
    TrackSet,
    Tracklet,
    level_window,
    max_temporal_span,
    sort_nodes,
)
from .rounding import graph_chains, round_edges
from .scorer import ScorerWeights, WeightsError, score_edges

log = logging.getLogger(__name__)

GraphHook = Callable[[int, AssocGraph, np.ndarray], None]


def _field_diag(config: EngineConfig) -> float:
    return float(np.hypot(*config.field_extent))


def build_level_graph(nodes: Sequence[Tracklet], level: int, config: EngineConfig,
                      layout: Optional[EdgeLayout] = None,
                      window: Optional[tuple[int, int]] = None) -> AssocGraph:
    """Candidate edges between ``nodes`` at ``level`` after K-nearest pruning.

    Every node may link to any later node whose gap fits the level's extent.
    A candidate survives only if it is among the ``prune_k`` best outgoing
    candidates of its source and the ``prune_k`` best incoming candidates of
    its destination, ranked by appearance cosine minus ``prune_lambda`` times
    the scaled spatial distance.
    """
    layout = layout or EdgeLayout.from_config(config)
    nodes = sort_nodes(nodes)
    n = len(nodes)
    if window is None:
        window = (nodes[0].first_frame, nodes[-1].last_frame + 1) if nodes else (0, 0)
    empty = AssocGraph(level, window, tuple(nodes), np.zeros(0), np.zeros(0),
                       np.zeros((0, layout.dim)))
    if n < 2:
        return empty
    nm = NodeMatrix(nodes, layout.spatial_mode)
    gap = nm.first[None, :] - nm.last[:, None]
    cand = (gap > 0) & (gap < level_window(level))
    if not cand.any():
        return empty
    rows, cols = np.nonzero(cand)
    prio = np.full((n, n), -np.inf)
    prio[rows, cols] = nm.app_cos(rows, cols) - config.prune_lambda * nm.spatial_norm(
        rows, cols, layout, _field_diag(config))
    k = config.prune_k
    # rank 0 = best; stable sort keeps lower index first on ties
    out_rank = np.empty((n, n), dtype=np.int64)
    out_rank[np.arange(n)[:, None], np.argsort(-prio, axis=1, kind="stable")] = np.arange(n)[None, :]
    in_rank = np.empty((n, n), dtype=np.int64)
    in_rank[np.argsort(-prio, axis=0, kind="stable"), np.arange(n)[None, :]] = np.arange(n)[:, None]
    keep = cand & (out_rank < k) & (in_rank < k)
    src, dst = np.nonzero(keep)
    feats = pair_features(nm, src, dst, layout, level)
    return AssocGraph(level, window, tuple(nodes), src, dst, feats)


def promote_tracklets(graph: AssocGraph, accepted) -> list[Tracklet]:
    """Merge the accepted paths of ``graph`` into next-level tracklets."""
    chains = graph_chains(graph, accepted)
    nxt = graph.level + 1
    out = []
    for chain in chains:
        members = [graph.nodes[i] for i in chain]
        if len(members) == 1:
            out.append(dataclasses.replace(members[0], level=nxt))
        else:
            out.append(Tracklet.merge(members, nxt))
    return sort_nodes(out)


def _blocks(nodes: Sequence[Tracklet], start: int, level: int) -> list[list[Tracklet]]:
    size = level_window(level)
    groups: dict[int, list[Tracklet]] = defaultdict(list)
    for t in nodes:
        groups[(t.first_frame - start) // size].append(t)
    return [sort_nodes(groups[k]) for k in sorted(groups)]


def solve_graph(graph: AssocGraph, weights: ScorerWeights, config: EngineConfig) -> tuple[AssocGraph, np.ndarray]:
    rounds = config.mp_rounds if weights.kind == "message_passing" else None
    scored = graph.with_scores(score_edges(graph, weights, rounds=rounds))
    accepted = round_edges(scored, config.rounding, config.edge_threshold, config.exact_cap)
    return scored, accepted


def track_window(
    feats: DetectionFeatures,
    indices: Sequence[int],
    start: int,
    weights: ScorerWeights,
    config: EngineConfig,
    layout: EdgeLayout,
    hook: Optional[GraphHook] = None,
) -> list[Tracklet]:
    """Run levels 1..L on the detections ``indices`` of one window."""
    nodes = sort_nodes(feats.tracklet(i) for i in indices)
    for level in range(1, config.levels + 1):
        size = level_window(level)
        nxt: list[Tracklet] = []
        for block in _blocks(nodes, start, level):
            if len(block) == 1:
                nxt.append(dataclasses.replace(block[0], level=level + 1))
                continue
            b0 = start + ((block[0].first_frame - start) // size) * size
            graph = build_level_graph(block, level, config, layout, (b0, b0 + size))
            if graph.n_edges == 0:
                nxt.extend(dataclasses.replace(t, level=level + 1) for t in graph.nodes)
                continue
            scored, accepted = solve_graph(graph, weights, config)
            if hook is not None:
                hook(level, scored, accepted)
            nxt.extend(promote_tracklets(scored, accepted))
        nodes = sort_nodes(nxt)
    return nodes


# ---------------------------------------------------------------------------
# Windows and stitching


def window_starts(n_frames: int, length: int, overlap: float = 0.5) -> list[int]:
    stride = max(1, int(round(length * (1.0 - overlap))))
    starts = [0]
    while starts[-1] + length < n_frames:
        starts.append(starts[-1] + stride)
    return starts


@dataclass(frozen=True)
class WindowTracks:
    start: int
    end: int  # exclusive
    tracks: tuple[tuple[int, ...], ...]  # det_ids per track


def stitch_windows(windows: Sequence[WindowTracks], det_frames: Mapping[int, int]) -> list[list[int]]:
    """Join per-window tracks into sequence-level tracks of det_ids.

    Adjacent windows are linked one-to-one through shared detections, the
    largest overlap first (ties go to the earlier track of either window).
    Each detection is finally assigned through the window that owns its frame:
    ownership switches halfway through every overlap.
    """
    if not windows:
        return []
    cuts = []
    for a, b in zip(windows, windows[1:]):
        cuts.append(b.start + max(0, a.end - b.start) // 2)
    lo = [-np.inf] + cuts
    hi = cuts + [np.inf]

    gids: list[list[int]] = []
    next_gid = 0
    for k, win in enumerate(windows):
        if k == 0:
            gids.append(list(range(len(win.tracks))))
            next_gid = len(win.tracks)
            continue
        prev = windows[k - 1]
        owner = {d: i for i, t in enumerate(prev.tracks) for d in t}
        pairs = []
        for j, t in enumerate(win.tracks):
            counts = Counter(owner[d] for d in t if d in owner)
            pairs.extend((-c, i, j) for i, c in counts.items())
        pairs.sort()
        used_prev, mine = set(), [-1] * len(win.tracks)
        for _, i, j in pairs:
            if i in used_prev or mine[j] != -1:
                continue
            used_prev.add(i)
            mine[j] = gids[k - 1][i]
        for j in range(len(mine)):
            if mine[j] == -1:
                mine[j] = next_gid
                next_gid += 1
        gids.append(mine)

    members: dict[int, list[int]] = defaultdict(list)
    for k, win in enumerate(windows):
        for j, t in enumerate(win.tracks):
            for d in t:
                if lo[k] <= det_frames[d] < hi[k]:
                    members[gids[k][j]].append(d)
    out = [sorted(ds, key=lambda d: (det_frames[d], d)) for ds in members.values() if ds]
    out.sort(key=lambda ds: (det_frames[ds[0]], ds[0]))
    return out


def tracks_to_trackset(tracks: Sequence[Sequence[int]], feats: DetectionFeatures,
                       info: SequenceInfo = SequenceInfo()) -> TrackSet:
    by_id = {d.det_id: d for d in feats.detections}
    ordered = sorted(tracks, key=lambda ds: (by_id[ds[0]].frame, ds[0]))
    out = {}
    for tid, ds in enumerate(ordered):
        out[tid] = tuple(TrackPoint(by_id[d].frame, by_id[d].bbox, by_id[d].confidence, det_id=d)
                         for d in ds)
    return TrackSet(out, info)


class GraphDump:
    """Writes every solved graph as an edge list, one file per window and level."""

    def __init__(self, directory: Union[str, Path]):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def hook_for(self, window_index: int) -> GraphHook:
        def hook(level: int, graph: AssocGraph, accepted: np.ndarray) -> None:
            path = self.dir / f"window{window_index:03d}_level{level:02d}.txt"
            acc = set(accepted.tolist())
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(f"# block {graph.window[0]} {graph.window[1]} nodes {len(graph.nodes)}\n")
                for e in range(graph.n_edges):
                    s, d = graph.nodes[graph.src[e]], graph.nodes[graph.dst[e]]
                    feats = " ".join(f"{v:.6g}" for v in graph.features[e])
                    fh.write(f"{s.node_id} {d.node_id} {graph.scores[e]:.6f} "
                             f"{int(e in acc)} {feats}\n")
        return hook


def check_weights(weights: ScorerWeights, config: EngineConfig, layout: EdgeLayout) -> None:
    if weights.kind != config.scorer:
        raise WeightsError(f"config asks for a {config.scorer} scorer, weights are {weights.kind}")
    if weights.levels < config.levels:
        raise WeightsError(f"weights cover {weights.levels} levels, config needs {config.levels}")
    if weights.layout != layout.names:
        raise WeightsError(f"weights expect features {weights.layout}, engine builds {layout.names}")


def run_hierarchy(
    bundle: Union[SequenceBundle, DetectionFeatures],
    weights: ScorerWeights,
    config: Optional[EngineConfig] = None,
    info: Optional[SequenceInfo] = None,
    dump: Optional[GraphDump] = None,
    threads: int = 1,
) -> TrackSet:
    if isinstance(bundle, SequenceBundle):
        config = config or bundle.config
        info = info or bundle.info
        feats = build_features(bundle, config)
    else:
        feats = bundle
        config = config or EngineConfig()
    info = info or SequenceInfo()
    layout = EdgeLayout.from_config(config, feats.image_diag)
    check_weights(weights, config, layout)

    dets = feats.detections
    n_frames = max([info.n_frames] + [d.frame + 1 for d in dets])
    span = max_temporal_span(config.levels)
    starts = window_starts(n_frames, span, config.window_overlap)
    frames = np.array([d.frame for d in dets], dtype=np.int64)

    def solve(k: int) -> WindowTracks:
        s = starts[k]
        idx = np.flatnonzero((frames >= s) & (frames < s + span))
        hook = dump.hook_for(k) if dump is not None else None
        top = track_window(feats, idx, s, weights, config, layout, hook) if len(idx) else []
        return WindowTracks(s, s + span, tuple(t.det_ids for t in top))

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, range(len(starts))))
    else:
        results = [solve(k) for k in range(len(starts))]
    log.info("solved %d window(s) of %d frames", len(results), span)
    det_frames = {d.det_id: d.frame for d in dets}
    tracks = stitch_windows(results, det_frames)
    return tracks_to_trackset(tracks, feats, info)


# ---------------------------------------------------------------------------
# Training graphs


def node_identity(t: Tracklet, gt_of: Mapping[int, int]) -> int:
    ids = [gt_of.get(d, -1) for d in t.det_ids]
    ids = [i for i in ids if i >= 0]
    if not ids:
        return -1
    counts = Counter(ids)
    return min(counts, key=lambda i: (-counts[i], i))


def edge_labels(graph: AssocGraph, gt_of: Mapping[int, int]) -> np.ndarray:
    """1 for edges joining consecutive nodes of one identity, else 0."""
    ident = [node_identity(t, gt_of) for t in graph.nodes]
    successor = {}
    by_id: dict[int, list[int]] = defaultdict(list)
    for i, g in enumerate(ident):
        if g >= 0:
            by_id[g].append(i)
    for members in by_id.values():
        members.sort(key=lambda i: (graph.nodes[i].first_frame, graph.nodes[i].node_id))
        for a, b in zip(members, members[1:]):
            successor[a] = b
    return np.array([1.0 if successor.get(s) == d else 0.0
                     for s, d in zip(graph.src.tolist(), graph.dst.tolist())])


def training_graphs(
    feats: DetectionFeatures,
    gt_of: Mapping[int, int],
    config: EngineConfig,
    n_frames: Optional[int] = None,
    window_stride: Optional[int] = None,
) -> list[tuple[AssocGraph, np.ndarray]]:
    """Labelled graphs for every level, built with ground-truth promotion.

    Each level is solved by accepting exactly its positive edges, so higher
    levels see the tracklets a perfect lower level would have produced.
    Windows start every ``window_stride`` frames (default: an eighth of the
    span) so the scarce top-level graphs get more examples; a block seen from
    two windows is emitted once.
    """
    layout = EdgeLayout.from_config(config, feats.image_diag)
    dets = feats.detections
    n_frames = n_frames or max(d.frame + 1 for d in dets)
    span = max_temporal_span(config.levels)
    stride = window_stride or max(1, span // 8)
    frames = np.array([d.frame for d in dets], dtype=np.int64)
    starts = list(range(0, max(n_frames - span, 0) + 1, stride))
    if starts[-1] + span < n_frames:
        starts.append(n_frames - span)
    seen = set()
    out = []
    for s in starts:
        idx = np.flatnonzero((frames >= s) & (frames < s + span))
        nodes = sort_nodes(feats.tracklet(i) for i in idx)
        for level in range(1, config.levels + 1):
            size = level_window(level)
            nxt = []
            for block in _blocks(nodes, s, level):
                b0 = s + ((block[0].first_frame - s) // size) * size
                graph = build_level_graph(block, level, config, layout, (b0, b0 + size))
                y = edge_labels(graph, gt_of)
                if graph.n_edges and (level, b0) not in seen:
                    seen.add((level, b0))
                    out.append((graph, y))
                nxt.extend(promote_tracklets(graph, np.flatnonzero(y > 0.5)))
            nodes = sort_nodes(nxt)
    return out
