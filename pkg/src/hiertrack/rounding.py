"""Turn edge scores into vertex-disjoint paths.

Accepted edges must leave every node with at most one incoming and one
outgoing association. Both solvers return edge indices into the graph, in
ascending order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import AssocGraph


class FlowConstraintError(RuntimeError):
    """An accepted edge set gives some node two successors or predecessors."""


def _greedy_order(g: AssocGraph) -> np.ndarray:
    src_frame = np.array([g.nodes[s].first_frame for s in g.src], dtype=np.int64)
    src_id = np.array([g.nodes[s].node_id for s in g.src], dtype=np.int64)
    dst_id = np.array([g.nodes[d].node_id for d in g.dst], dtype=np.int64)
    # lexsort: last key is primary
    return np.lexsort((dst_id, src_id, src_frame, -g.scores))


def _require_scores(g: AssocGraph):
    if g.scores is None:
        raise ValueError("graph has no edge scores")


def greedy_round(g: AssocGraph, threshold: float = 0.5) -> np.ndarray:
    _require_scores(g)
    if g.n_edges == 0:
        return np.zeros(0, dtype=np.int64)
    has_out = np.zeros(len(g.nodes), dtype=bool)
    has_in = np.zeros(len(g.nodes), dtype=bool)
    accepted = []
    src, dst, scores = g.src, g.dst, g.scores
    for e in _greedy_order(g):
        if scores[e] < threshold:
            break
        s, d = src[e], dst[e]
        if has_out[s] or has_in[d]:
            continue
        has_out[s] = has_in[d] = True
        accepted.append(e)
    return np.array(sorted(accepted), dtype=np.int64)


def exact_round(g: AssocGraph, threshold: float = 0.5, cap: int = 200) -> np.ndarray:
    """Maximise the summed surplus ``score - threshold`` under flow constraints.

    Each node owns one out-slot and one in-slot; an edge pairs the source's
    out-slot with the destination's in-slot, so feasible edge sets are exactly
    the matchings of that bipartite slot graph. Zero-surplus edges do not move
    the objective and are added afterwards in greedy order where slots allow.
    """
    _require_scores(g)
    if len(g.nodes) > cap:
        raise ValueError(f"exact rounding limited to {cap} nodes, graph has {len(g.nodes)}")
    if g.n_edges == 0:
        return np.zeros(0, dtype=np.int64)
    surplus = g.scores - threshold
    pos = np.flatnonzero(surplus > 0)
    accepted: list[int] = []
    if len(pos):
        rows = np.unique(g.src[pos])
        cols = np.unique(g.dst[pos])
        W = np.zeros((len(rows), len(cols)))
        edge_at = -np.ones((len(rows), len(cols)), dtype=np.int64)
        ri = np.searchsorted(rows, g.src[pos])
        ci = np.searchsorted(cols, g.dst[pos])
        for e, r, c in zip(pos, ri, ci):
            if surplus[e] > W[r, c]:
                W[r, c] = surplus[e]
                edge_at[r, c] = e
        r_idx, c_idx = linear_sum_assignment(W, maximize=True)
        for r, c in zip(r_idx, c_idx):
            if edge_at[r, c] >= 0:
                accepted.append(int(edge_at[r, c]))
    has_out = np.zeros(len(g.nodes), dtype=bool)
    has_in = np.zeros(len(g.nodes), dtype=bool)
    has_out[g.src[accepted]] = True
    has_in[g.dst[accepted]] = True
    for e in _greedy_order(g):
        if surplus[e] > 0:
            continue
        if surplus[e] < 0:
            break
        s, d = g.src[e], g.dst[e]
        if not (has_out[s] or has_in[d]):
            has_out[s] = has_in[d] = True
            accepted.append(int(e))
    return np.array(sorted(accepted), dtype=np.int64)


def round_edges(g: AssocGraph, kind: str = "greedy", threshold: float = 0.5, cap: int = 200) -> np.ndarray:
    if kind == "greedy":
        return greedy_round(g, threshold)
    if kind == "exact":
        return exact_round(g, threshold, cap)
    raise ValueError(f"unknown rounding kind {kind!r}")


def surplus_objective(g: AssocGraph, accepted, threshold: float = 0.5) -> float:
    accepted = np.asarray(accepted, dtype=np.int64)
    return float(np.sum(g.scores[accepted] - threshold)) if len(accepted) else 0.0


def is_feasible(g: AssocGraph, accepted) -> bool:
    accepted = np.asarray(accepted, dtype=np.int64)
    if len(accepted) == 0:
        return True
    s, d = g.src[accepted], g.dst[accepted]
    forward = all(g.nodes[a].last_frame < g.nodes[b].first_frame for a, b in zip(s, d))
    return forward and len(np.unique(s)) == len(s) and len(np.unique(d)) == len(d)


def extract_chains(n_nodes: int, edges: Sequence[tuple[int, int]]) -> list[list[int]]:
    """Split ``n_nodes`` nodes into maximal paths along ``edges``.

    Chains come out ordered by their head node index.
    """
    succ = [-1] * n_nodes
    pred = [-1] * n_nodes
    for s, d in edges:
        s, d = int(s), int(d)
        if succ[s] != -1:
            raise FlowConstraintError(f"node {s} has two outgoing edges")
        if pred[d] != -1:
            raise FlowConstraintError(f"node {d} has two incoming edges")
        succ[s] = d
        pred[d] = s
    chains = []
    seen = 0
    for head in range(n_nodes):
        if pred[head] != -1:
            continue
        chain = [head]
        while succ[chain[-1]] != -1:
            chain.append(succ[chain[-1]])
        seen += len(chain)
        chains.append(chain)
    if seen != n_nodes:
        raise FlowConstraintError("accepted edges contain a cycle")
    return chains


def graph_chains(g: AssocGraph, accepted) -> list[list[int]]:
    accepted = np.asarray(accepted, dtype=np.int64)
    return extract_chains(len(g.nodes), list(zip(g.src[accepted], g.dst[accepted])))
