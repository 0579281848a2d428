"""HOTA-family metrics and the frame-gap re-identification analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import Detection, TrackSet

ALPHAS = np.round(np.arange(0.05, 0.96, 0.05), 2)


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (x, y, w, h) boxes, shape (len(a), len(b))."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.clip(np.minimum(ax2[:, None], bx2[None]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(ay2[:, None], by2[None]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


@dataclass(frozen=True)
class MetricReport:
    """Scores as fractions per threshold; the headline properties are percentages."""

    alphas: np.ndarray
    hota_alpha: np.ndarray
    deta_alpha: np.ndarray
    assa_alpha: np.ndarray
    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    n_gt_ids: int = 0
    n_pred_ids: int = 0

    @property
    def hota(self) -> float:
        return float(100.0 * self.hota_alpha.mean())

    @property
    def deta(self) -> float:
        return float(100.0 * self.deta_alpha.mean())

    @property
    def assa(self) -> float:
        return float(100.0 * self.assa_alpha.mean())

    def as_dict(self) -> dict[str, float]:
        return {"HOTA": self.hota, "DetA": self.deta, "AssA": self.assa,
                "TP": int(self.tp.sum()), "FN": int(self.fn.sum()), "FP": int(self.fp.sum()),
                "gt_ids": self.n_gt_ids, "pred_ids": self.n_pred_ids}

    def to_text(self) -> str:
        lines = [f"{'metric':<8}{'value':>10}",
                 f"{'HOTA':<8}{self.hota:>10.2f}",
                 f"{'DetA':<8}{self.deta:>10.2f}",
                 f"{'AssA':<8}{self.assa:>10.2f}",
                 "",
                 f"{'alpha':>6}{'HOTA':>9}{'DetA':>9}{'AssA':>9}{'TP':>8}{'FN':>8}{'FP':>8}"]
        for i, a in enumerate(self.alphas):
            lines.append(f"{a:>6.2f}{100 * self.hota_alpha[i]:>9.2f}{100 * self.deta_alpha[i]:>9.2f}"
                         f"{100 * self.assa_alpha[i]:>9.2f}{self.tp[i]:>8d}{self.fn[i]:>8d}{self.fp[i]:>8d}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        out = [f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in self.as_dict().items()]
        for i, a in enumerate(self.alphas):
            out.append(f"HOTA@{a:.2f}={100 * self.hota_alpha[i]:.6f}")
        return "\n".join(out) + "\n"


def _frame_table(ts: TrackSet) -> tuple[list[int], dict[int, tuple[np.ndarray, np.ndarray]]]:
    ids = sorted(ts.tracks)
    index = {t: i for i, t in enumerate(ids)}
    per: dict[int, tuple[list[int], list]] = {}
    for tid, pts in ts.tracks.items():
        frames = [p.frame for p in pts]
        if len(set(frames)) != len(frames):
            raise ValueError(f"track {tid} has more than one box in a frame")
        for p in pts:
            slot = per.setdefault(p.frame, ([], []))
            slot[0].append(index[tid])
            slot[1].append(p.bbox)
    return ids, {f: (np.array(i, dtype=np.int64), np.array(b, dtype=np.float64).reshape(-1, 4))
                 for f, (i, b) in per.items()}


def match_frame(iou: np.ndarray, align: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Bijective matching among pairs with IoU >= alpha.

    Maximises the number of matches, then the summed alignment score, then
    the summed IoU. Returns matched (row, col) indices.
    """
    ok = iou >= alpha - np.finfo(float).eps
    if not ok.any():
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    big = 2.0 * (min(iou.shape) + 1)
    w = np.where(ok, big + align + 1e-9 * iou, 0.0)
    r, c = linear_sum_assignment(w, maximize=True)
    keep = ok[r, c]
    return r[keep], c[keep]


def evaluate(pred: TrackSet, gt: TrackSet, alphas: Sequence[float] = ALPHAS) -> MetricReport:
    alphas = np.asarray(alphas, dtype=np.float64)
    gt_ids, gt_frames = _frame_table(gt)
    pr_ids, pr_frames = _frame_table(pred)
    G, P, A = len(gt_ids), len(pr_ids), len(alphas)
    frames = sorted(set(gt_frames) | set(pr_frames))
    empty = (np.zeros(0, dtype=np.int64), np.zeros((0, 4)))

    # global alignment from IoU-normalised potential matches
    potential = np.zeros((G, P))
    gt_count = np.zeros(G)
    pr_count = np.zeros(P)
    ious = {}
    for f in frames:
        gi, gb = gt_frames.get(f, empty)
        pi, pb = pr_frames.get(f, empty)
        gt_count[gi] += 1
        pr_count[pi] += 1
        if len(gi) and len(pi):
            iou = box_iou(gb, pb)
            ious[f] = iou
            denom = iou.sum(axis=1, keepdims=True) + iou.sum(axis=0, keepdims=True) - iou
            sim = np.divide(iou, denom, out=np.zeros_like(iou), where=denom > np.finfo(float).eps)
            potential[np.ix_(gi, pi)] += sim
    align = potential / np.maximum(gt_count[:, None] + pr_count[None, :] - potential, 1e-12)

    tp = np.zeros(A, dtype=np.int64)
    matches = np.zeros((A, G, P))
    n_gt = int(gt_count.sum())
    n_pr = int(pr_count.sum())
    for f, iou in ious.items():
        gi, _ = gt_frames[f]
        pi, _ = pr_frames[f]
        a_sub = align[np.ix_(gi, pi)]
        for k, alpha in enumerate(alphas):
            r, c = match_frame(iou, a_sub, alpha)
            tp[k] += len(r)
            matches[k, gi[r], pi[c]] += 1
    fn = n_gt - tp
    fp = n_pr - tp

    deta = np.zeros(A)
    assa = np.zeros(A)
    for k in range(A):
        denom = tp[k] + fn[k] + fp[k]
        deta[k] = 1.0 if denom == 0 else tp[k] / denom
        if tp[k] == 0:
            assa[k] = 1.0 if denom == 0 else 0.0
            continue
        m = matches[k]
        score = m / np.maximum(gt_count[:, None] + pr_count[None, :] - m, 1e-12)
        assa[k] = float((m * score).sum() / tp[k])
    hota = np.sqrt(deta * assa)
    return MetricReport(alphas, hota, deta, assa, tp, fn, fp, G, P)


# ---------------------------------------------------------------------------
# Detection to ground-truth assignment and frame-gap analysis


def match_detections_to_gt(detections: Sequence[Detection], gt: TrackSet,
                           min_iou: float = 0.5) -> dict[int, int]:
    """Map det_id to ground-truth track id by per-frame max-IoU matching."""
    by_frame: dict[int, list[Detection]] = {}
    for d in detections:
        by_frame.setdefault(d.frame, []).append(d)
    gt_by_frame = gt.by_frame()
    out = {d.det_id: -1 for d in detections}
    for f, dets in by_frame.items():
        g = gt_by_frame.get(f)
        if not g:
            continue
        iou = box_iou(np.array([d.bbox for d in dets]), np.array([p.bbox for _, p in g]))
        r, c = linear_sum_assignment(np.where(iou >= min_iou, iou, 0.0), maximize=True)
        for i, j in zip(r, c):
            if iou[i, j] >= min_iou:
                out[dets[i].det_id] = g[j][0]
    return out


@dataclass(frozen=True)
class GapResult:
    gap: int
    accuracy: float  # percent; nan when nothing was queried
    n_queries: int
    n_skipped_frames: int


def gap_accuracy(frames: np.ndarray, identities: np.ndarray, features: np.ndarray,
                 gaps: Sequence[int]) -> list[GapResult]:
    """Nearest-cosine identity matching between frames ``i`` and ``i + N``.

    ``identities`` holds the ground-truth id of every row (negative for rows
    without one); unlabelled rows still compete as candidates.
    """
    frames = np.asarray(frames, dtype=np.int64)
    identities = np.asarray(identities, dtype=np.int64)
    feats = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    unit = np.divide(feats, norms, out=np.zeros_like(feats), where=norms > 0)
    rows: dict[int, np.ndarray] = {}
    order = np.argsort(frames, kind="stable")
    for f in np.unique(frames):
        rows[int(f)] = order[frames[order] == f]
    results = []
    for n in gaps:
        hits = total = skipped = 0
        for f, src in rows.items():
            dst = rows.get(f + int(n))
            if dst is None:
                skipped += 1
                continue
            dst_ids = identities[dst]
            queries = [i for i in src if identities[i] >= 0 and identities[i] in dst_ids]
            if not queries:
                skipped += 1
                continue
            sims = unit[queries] @ unit[dst].T
            best = dst_ids[np.argmax(sims, axis=1)]
            hits += int(np.sum(best == identities[queries]))
            total += len(queries)
        acc = 100.0 * hits / total if total else float("nan")
        results.append(GapResult(int(n), acc, total, skipped))
    return results


def reid_gap_analysis(bundle, gaps: Sequence[int] = (1, 50, 100, 300),
                      gt_map: Optional[Mapping[int, int]] = None) -> list[GapResult]:
    """Frame-gap identity matching accuracy on a loaded sequence."""
    if bundle.gt is None and gt_map is None:
        raise ValueError("gap analysis needs ground truth")
    dets = bundle.detections
    gt_map = gt_map if gt_map is not None else match_detections_to_gt(dets, bundle.gt)
    frames = np.array([d.frame for d in dets], dtype=np.int64)
    ids = np.array([gt_map.get(d.det_id, -1) for d in dets], dtype=np.int64)
    feats = np.stack([bundle.features.records[d.det_id].appearance for d in dets]) if dets else np.zeros((0, 1))
    return gap_accuracy(frames, ids, feats, gaps)


def format_gap_table(results: Sequence[GapResult]) -> str:
    lines = [f"{'step':>6}{'accuracy':>10}{'queries':>9}"]
    for r in results:
        lines.append(f"{r.gap:>6d}{r.accuracy:>10.2f}{r.n_queries:>9d}")
    return "\n".join(lines) + "\n"
