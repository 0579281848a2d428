"""Edge classifiers with level-specific encoders and shared weights.

Both kinds start by standardising the edge features with per-level statistics
and passing them through the encoder of the graph's level (affine + ReLU).

``logistic``
    sigmoid(head(encoded)).

``message_passing``
    Edge states start at the encoding, node states at zero. Each round updates
    edges from their endpoints, then sends separate messages forward (to the
    later node) and backward (to the earlier node); nodes combine the past and
    future aggregates. The edge head reads the final edge state. Update weights
    are shared across rounds and levels.

Gradients are written out by hand; :func:`gradient_check` compares them with
central finite differences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import AssocGraph, SCORER_KINDS

log = logging.getLogger(__name__)

WEIGHTS_FORMAT = "hiertrack-weights"
LAYOUT_VERSION = 1

MP_ARRAYS = {
    # name: (rows in units of hidden, ) ; all map to hidden columns
    "mp.edge": 4,
    "mp.fwd": 2,
    "mp.bwd": 2,
    "mp.node": 2,
}


class WeightsError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class ScorerWeights:
    kind: str
    levels: int
    layout: tuple[str, ...]
    hidden: int
    rounds: int = 0
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    layout_version: int = LAYOUT_VERSION

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise WeightsError(f"unknown scorer kind {self.kind!r}")
        self.layout = tuple(self.layout)
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in self.arrays.items()}
        self.validate()

    @property
    def feature_dim(self) -> int:
        return len(self.layout)

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        F, H, L = self.feature_dim, self.hidden, self.levels
        shapes = {"norm.mean": (L, F), "norm.scale": (L, F)}
        for lvl in range(1, L + 1):
            shapes[f"enc.{lvl}.W"] = (F, H)
            shapes[f"enc.{lvl}.b"] = (H,)
        shapes["head.w"] = (H,)
        shapes["head.b"] = (1,)
        if self.kind == "message_passing":
            for name, k in MP_ARRAYS.items():
                shapes[f"{name}.W"] = (k * H, H)
                shapes[f"{name}.b"] = (H,)
        return shapes

    def trainable(self, max_level: Optional[int] = None) -> list[str]:
        names = []
        for name in self.expected_shapes():
            if name.startswith("norm."):
                continue
            if name.startswith("enc.") and max_level is not None:
                if int(name.split(".")[1]) > max_level:
                    continue
            names.append(name)
        return names

    def validate(self) -> None:
        shapes = self.expected_shapes()
        for name, shape in shapes.items():
            if name not in self.arrays:
                raise WeightsError(f"missing weight array {name!r}")
            arr = self.arrays[name]
            if arr.shape != shape:
                raise WeightsError(f"array {name!r} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise WeightsError(f"array {name!r} has non-finite entries")
        extra = set(self.arrays) - set(shapes)
        if extra:
            raise WeightsError(f"unexpected weight arrays {sorted(extra)}")
        if np.any(self.arrays["norm.scale"] <= 0):
            raise WeightsError("norm.scale entries must be positive")

    def copy(self) -> "ScorerWeights":
        return ScorerWeights(self.kind, self.levels, self.layout, self.hidden, self.rounds,
                             {k: v.copy() for k, v in self.arrays.items()}, self.layout_version)

    def equals(self, other: "ScorerWeights") -> bool:
        if (self.kind, self.levels, self.layout, self.hidden, self.rounds) != (
                other.kind, other.levels, other.layout, other.hidden, other.rounds):
            return False
        if set(self.arrays) != set(other.arrays):
            return False
        return all(self.arrays[k].tobytes() == other.arrays[k].tobytes() for k in self.arrays)


def init_weights(kind: str, layout: Sequence[str], levels: int, hidden: int = 16,
                 rounds: int = 8, seed: int = 0, zero: bool = False) -> ScorerWeights:
    H = hidden
    proto = ScorerWeights.__new__(ScorerWeights)
    proto.kind, proto.levels, proto.layout, proto.hidden = kind, levels, tuple(layout), hidden
    shapes = proto.expected_shapes()
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in shapes.items():
        if name == "norm.mean":
            arrays[name] = np.zeros(shape)
        elif name == "norm.scale":
            arrays[name] = np.ones(shape)
        elif zero or name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        elif name == "head.w":
            arrays[name] = rng.normal(0.0, 1.0 / math.sqrt(H), shape)
        else:
            arrays[name] = rng.normal(0.0, math.sqrt(2.0 / shape[0]), shape)
    return ScorerWeights(kind, levels, tuple(layout), hidden,
                         rounds if kind == "message_passing" else 0, arrays)


def prior_weights(layout: Sequence[str], levels: int, hidden: int = 16) -> ScorerWeights:
    """Untrained logistic weights encoding a plain linear vote over the channels.

    The encoder carries the linear term through a +/- pair of ReLU units, so
    the logit is exactly ``coef . x + bias``. Useful when no trained weights
    are at hand.
    """
    coef = {
        "app_cos": 6.0, "jersey_cos": 4.0, "jersey_valid": -1.0, "team_cos": 2.0,
        "field_dist": -0.5, "frame_dist": -30.0, "log_size_ratio": 0.0, "dt": -2.0, "iou": 2.0,
    }
    w = init_weights("logistic", layout, levels, hidden, zero=True)
    v = np.array([coef[n] for n in layout])
    for lvl in range(1, levels + 1):
        w.arrays[f"enc.{lvl}.W"][:, 0] = v
        w.arrays[f"enc.{lvl}.W"][:, 1] = -v
    w.arrays["head.w"][:2] = [1.0, -1.0]
    w.arrays["head.b"][0] = -3.5
    return w


# ---------------------------------------------------------------------------
# Batches


@dataclass
class EdgeBatch:
    """Disjoint union of graphs flattened into edge arrays."""

    x: np.ndarray  # (E, F)
    level: np.ndarray  # (E,) 1-based
    src: np.ndarray  # (E,) node index in the union
    dst: np.ndarray
    n_nodes: int
    y: Optional[np.ndarray] = None

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @classmethod
    def from_graph(cls, g: AssocGraph, labels=None) -> "EdgeBatch":
        E = g.n_edges
        return cls(np.asarray(g.features, dtype=np.float64).reshape(E, -1),
                   np.full(E, g.level, dtype=np.int64), g.src.astype(np.int64),
                   g.dst.astype(np.int64), len(g.nodes),
                   None if labels is None else np.asarray(labels, dtype=np.float64))

    @classmethod
    def concat(cls, parts: Sequence["EdgeBatch"]) -> "EdgeBatch":
        if not parts:
            raise ValueError("nothing to concatenate")
        offsets = np.cumsum([0] + [p.n_nodes for p in parts])
        ys = [p.y for p in parts]
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.level for p in parts]),
            np.concatenate([p.src + o for p, o in zip(parts, offsets)]),
            np.concatenate([p.dst + o for p, o in zip(parts, offsets)]),
            int(offsets[-1]),
            None if any(y is None for y in ys) else np.concatenate(ys),
        )


def _relu(a):
    return np.maximum(a, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_batch(w: ScorerWeights, b: EdgeBatch):
    if b.x.ndim != 2 or (b.n_edges and b.x.shape[1] != w.feature_dim):
        raise WeightsError(f"edge features have {b.x.shape[-1]} columns, weights expect "
                           f"{w.feature_dim} ({', '.join(w.layout)})")
    if b.n_edges and (b.level.min() < 1 or b.level.max() > w.levels):
        raise WeightsError(f"graph level outside 1..{w.levels}")


def _encode(w: ScorerWeights, b: EdgeBatch):
    A = w.arrays
    mean, scale = A["norm.mean"], A["norm.scale"]
    xn = (b.x - mean[b.level - 1]) / scale[b.level - 1]
    pre = np.empty((b.n_edges, w.hidden))
    for lvl in np.unique(b.level):
        m = b.level == lvl
        pre[m] = xn[m] @ A[f"enc.{lvl}.W"] + A[f"enc.{lvl}.b"]
    return xn, pre


def _forward(w: ScorerWeights, b: EdgeBatch, rounds: Optional[int] = None):
    """Return logits and a cache for the backward pass."""
    A = w.arrays
    H = w.hidden
    xn, pre = _encode(w, b)
    e0 = _relu(pre)
    cache = {"xn": xn, "pre": pre, "e0": e0, "rounds": []}
    e = e0
    if w.kind == "message_passing":
        R = w.rounds if rounds is None else rounds
        h = np.zeros((b.n_nodes, H))
        src, dst = b.src, b.dst
        for _ in range(R):
            cat_e = np.concatenate([h[src], h[dst], e, e0], axis=1)
            ue = cat_e @ A["mp.edge.W"] + A["mp.edge.b"]
            e_new = _relu(ue)
            cat_f = np.concatenate([h[src], e_new], axis=1)
            uf = cat_f @ A["mp.fwd.W"] + A["mp.fwd.b"]
            cat_b = np.concatenate([h[dst], e_new], axis=1)
            ub = cat_b @ A["mp.bwd.W"] + A["mp.bwd.b"]
            agg_in = np.zeros((b.n_nodes, H))
            agg_out = np.zeros((b.n_nodes, H))
            np.add.at(agg_in, dst, _relu(uf))
            np.add.at(agg_out, src, _relu(ub))
            cat_n = np.concatenate([agg_in, agg_out], axis=1)
            un = cat_n @ A["mp.node.W"] + A["mp.node.b"]
            cache["rounds"].append((cat_e, ue, cat_f, uf, cat_b, ub, cat_n, un))
            h = _relu(un)
            e = e_new
    cache["e_final"] = e
    logits = e @ A["head.w"] + A["head.b"][0]
    return logits, cache


def _backward(w: ScorerWeights, b: EdgeBatch, cache, dlogit: np.ndarray) -> dict[str, np.ndarray]:
    A = w.arrays
    H = w.hidden
    grads = {name: np.zeros_like(A[name]) for name in w.trainable()}
    grads["head.w"] = cache["e_final"].T @ dlogit
    grads["head.b"] = np.array([dlogit.sum()])
    de = np.outer(dlogit, A["head.w"])
    de0 = np.zeros_like(de)
    if w.kind == "message_passing":
        src, dst = b.src, b.dst
        dh = np.zeros((b.n_nodes, H))
        for cat_e, ue, cat_f, uf, cat_b, ub, cat_n, un in reversed(cache["rounds"]):
            dun = dh * (un > 0)
            grads["mp.node.W"] += cat_n.T @ dun
            grads["mp.node.b"] += dun.sum(0)
            dcat_n = dun @ A["mp.node.W"].T
            dagg_in, dagg_out = dcat_n[:, :H], dcat_n[:, H:]
            dh_prev = np.zeros((b.n_nodes, H))
            duf = dagg_in[dst] * (uf > 0)
            grads["mp.fwd.W"] += cat_f.T @ duf
            grads["mp.fwd.b"] += duf.sum(0)
            dcat_f = duf @ A["mp.fwd.W"].T
            np.add.at(dh_prev, src, dcat_f[:, :H])
            de_new = de + dcat_f[:, H:]
            dub = dagg_out[src] * (ub > 0)
            grads["mp.bwd.W"] += cat_b.T @ dub
            grads["mp.bwd.b"] += dub.sum(0)
            dcat_b = dub @ A["mp.bwd.W"].T
            np.add.at(dh_prev, dst, dcat_b[:, :H])
            de_new += dcat_b[:, H:]
            due = de_new * (ue > 0)
            grads["mp.edge.W"] += cat_e.T @ due
            grads["mp.edge.b"] += due.sum(0)
            dcat_e = due @ A["mp.edge.W"].T
            np.add.at(dh_prev, src, dcat_e[:, :H])
            np.add.at(dh_prev, dst, dcat_e[:, H:2 * H])
            de = dcat_e[:, 2 * H:3 * H]
            de0 += dcat_e[:, 3 * H:]
            dh = dh_prev
    dpre = (de + de0) * (cache["pre"] > 0)
    xn = cache["xn"]
    for lvl in np.unique(b.level):
        m = b.level == lvl
        grads[f"enc.{lvl}.W"] = xn[m].T @ dpre[m]
        grads[f"enc.{lvl}.b"] = dpre[m].sum(0)
    return grads


def batch_logits(w: ScorerWeights, b: EdgeBatch, rounds: Optional[int] = None) -> np.ndarray:
    _check_batch(w, b)
    if b.n_edges == 0:
        return np.zeros(0)
    return _forward(w, b, rounds)[0]


def score_edges(g: AssocGraph, w: ScorerWeights, kind: Optional[str] = None,
                rounds: Optional[int] = None, layout: Optional[Sequence[str]] = None) -> np.ndarray:
    """Association probability for every edge of ``g``."""
    if kind is not None and kind != w.kind:
        raise WeightsError(f"weights are for a {w.kind} scorer, not {kind}")
    if layout is not None and tuple(layout) != w.layout:
        raise WeightsError(f"edge layout {tuple(layout)} does not match weights {w.layout}")
    if g.level > w.levels:
        raise WeightsError(f"graph level {g.level} exceeds trained levels {w.levels}")
    if g.n_edges == 0:
        return np.zeros(0)
    return _sigmoid(batch_logits(w, EdgeBatch.from_graph(g), rounds))


def loss_and_grads(w: ScorerWeights, b: EdgeBatch, with_grads: bool = True):
    """Mean binary cross-entropy over the batch and its gradients."""
    _check_batch(w, b)
    if b.n_edges == 0:
        return 0.0, ({n: np.zeros_like(w.arrays[n]) for n in w.trainable()} if with_grads else None)
    if b.y is None:
        raise ValueError("batch has no labels")
    logits, cache = _forward(w, b)
    y = b.y
    # softplus(z) - y z, evaluated stably
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    if not with_grads:
        return loss, None
    dlogit = (_sigmoid(logits) - y) / b.n_edges
    return loss, _backward(w, b, cache, dlogit)


# ---------------------------------------------------------------------------
# Gradient check


def gradient_check(w: ScorerWeights, batch: EdgeBatch, epsilon: float = 1e-6,
                   n_coords: Optional[int] = None, seed: int = 0) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    Checks every trainable coordinate, or a seeded random subset of
    ``n_coords`` of them. Coordinates where both gradients are exactly zero
    agree trivially.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    _, grads = loss_and_grads(w, batch)
    coords = [(name, idx) for name in w.trainable() for idx in np.ndindex(w.arrays[name].shape)]
    if n_coords is not None and n_coords < len(coords):
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(coords), size=n_coords, replace=False))
        coords = [coords[i] for i in pick]
    probe = w.copy()
    worst = 0.0
    for name, idx in coords:
        arr = probe.arrays[name]
        orig = arr[idx]
        arr[idx] = orig + epsilon
        lp, _ = loss_and_grads(probe, batch, with_grads=False)
        arr[idx] = orig - epsilon
        lm, _ = loss_and_grads(probe, batch, with_grads=False)
        arr[idx] = orig
        numeric = (lp - lm) / (2 * epsilon)
        analytic = grads[name][idx]
        denom = max(abs(numeric), abs(analytic))
        if denom == 0.0:
            continue
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    stage_iters: int = 500
    epochs: int = 250
    batch_graphs: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    inherit_encoders: bool = True  # start each level's encoder from the one below


@dataclass
class TrainResult:
    weights: ScorerWeights
    loss: float
    history: list[tuple[int, str, float]]

    def log_lines(self) -> list[str]:
        return [f"{it}\t{stage}\t{loss:.8f}" for it, stage, loss in self.history]


class _Adam:
    def __init__(self, w: ScorerWeights, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {n: np.zeros_like(w.arrays[n]) for n in w.trainable()}
        self.v = {n: np.zeros_like(w.arrays[n]) for n in w.trainable()}
        self.t = {n: 0 for n in w.trainable()}

    def step(self, w: ScorerWeights, grads: dict, names: Iterable[str]):
        c = self.cfg
        for n in names:
            g = grads[n]
            self.t[n] += 1
            self.m[n] = c.beta1 * self.m[n] + (1 - c.beta1) * g
            self.v[n] = c.beta2 * self.v[n] + (1 - c.beta2) * g * g
            mhat = self.m[n] / (1 - c.beta1 ** self.t[n])
            vhat = self.v[n] / (1 - c.beta2 ** self.t[n])
            w.arrays[n] -= c.lr * mhat / (np.sqrt(vhat) + c.eps)


def fit_normalization(w: ScorerWeights, batches: Sequence[EdgeBatch]) -> None:
    """Set per-level feature standardisation from the training edges."""
    allb = EdgeBatch.concat(list(batches))
    mean = np.zeros((w.levels, w.feature_dim))
    scale = np.ones((w.levels, w.feature_dim))
    for lvl in range(1, w.levels + 1):
        m = allb.level == lvl
        if m.sum() < 2:
            continue
        x = allb.x[m]
        mean[lvl - 1] = x.mean(0)
        sd = x.std(0)
        scale[lvl - 1] = np.where(sd > 1e-6, sd, 1.0)
    w.arrays["norm.mean"] = mean
    w.arrays["norm.scale"] = scale


def train_scorer(
    graphs: Sequence[tuple[AssocGraph, np.ndarray]],
    init: ScorerWeights,
    cfg: Optional[TrainConfig] = None,
    normalize: bool = True,
    log_path=None,
) -> TrainResult:
    """Fit the scorer by minibatch Adam on mean binary cross-entropy.

    Levels are introduced one at a time: while level ``l`` is being trained,
    only graphs of levels ``<= l`` are seen and encoders above ``l`` stay
    frozen. Joint training over all graphs follows.
    """
    cfg = cfg or TrainConfig()
    batches = [EdgeBatch.from_graph(g, y) for g, y in graphs if g.n_edges]
    if not batches:
        raise ValueError("no labelled edges to train on")
    for b in batches:
        if b.y is None or len(b.y) != b.n_edges:
            raise ValueError("every graph needs one label per edge")
        _check_batch(init, b)
    w = init.copy()
    if normalize:
        fit_normalization(w, batches)
    rng = np.random.default_rng(cfg.seed)
    adam = _Adam(w, cfg)
    history: list[tuple[int, str, float]] = []
    levels_of = np.array([int(b.level[0]) for b in batches])
    it = 0

    def run_step(idx, names, stage):
        nonlocal it
        batch = EdgeBatch.concat([batches[i] for i in idx])
        loss, grads = loss_and_grads(w, batch)
        if not math.isfinite(loss) or any(not np.all(np.isfinite(grads[n])) for n in names):
            raise TrainingDiverged(f"non-finite loss/gradient at iteration {it} ({stage}): {loss}")
        adam.step(w, grads, names)
        history.append((it, stage, loss))
        it += 1

    for lvl in range(1, w.levels + 1):
        pool = np.flatnonzero(levels_of <= lvl)
        if not len(pool) or cfg.stage_iters <= 0:
            continue
        if cfg.inherit_encoders and lvl > 1:
            for part in ("W", "b"):
                w.arrays[f"enc.{lvl}.{part}"] = w.arrays[f"enc.{lvl - 1}.{part}"].copy()
        names = w.trainable(max_level=lvl)
        order = rng.permutation(pool)
        pos = 0
        for _ in range(cfg.stage_iters):
            if pos >= len(order):
                order, pos = rng.permutation(pool), 0
            idx = order[pos:pos + cfg.batch_graphs]
            pos += cfg.batch_graphs
            run_step(idx, names, f"level{lvl}")

    names = w.trainable()
    for ep in range(cfg.epochs):
        order = rng.permutation(len(batches))
        for start in range(0, len(order), cfg.batch_graphs):
            run_step(order[start:start + cfg.batch_graphs], names, f"joint{ep}")

    final, _ = loss_and_grads(w, EdgeBatch.concat(batches), with_grads=False)
    if not math.isfinite(final):
        raise TrainingDiverged(f"non-finite final loss {final}")
    result = TrainResult(w, final, history)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("iteration\tstage\tloss\n")
            fh.write("\n".join(result.log_lines()) + "\n")
    log.info("trained %s scorer: %d iterations, final loss %.6f", w.kind, it, final)
    return result


def edge_accuracy(w: ScorerWeights, graphs: Sequence[tuple[AssocGraph, np.ndarray]],
                  threshold: float = 0.5) -> float:
    correct = total = 0
    for g, y in graphs:
        if not g.n_edges:
            continue
        p = score_edges(g, w)
        correct += int(np.sum((p >= threshold) == (np.asarray(y) > 0.5)))
        total += g.n_edges
    return correct / total if total else float("nan")


# ---------------------------------------------------------------------------
# Weight files


def save_weights(w: ScorerWeights, path) -> None:
    payload = {
        "format": WEIGHTS_FORMAT,
        "layout_version": w.layout_version,
        "kind": w.kind,
        "levels": w.levels,
        "hidden": w.hidden,
        "rounds": w.rounds,
        "layout": list(w.layout),
        "arrays": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
            for name, arr in sorted(w.arrays.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_weights(path) -> ScorerWeights:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise WeightsError(f"{path}: invalid JSON ({exc.msg})") from None
    if payload.get("format") != WEIGHTS_FORMAT:
        raise WeightsError(f"{path}: not a weight file")
    if payload.get("layout_version") != LAYOUT_VERSION:
        raise WeightsError(f"{path}: feature layout version {payload.get('layout_version')} "
                           f"is not supported (expected {LAYOUT_VERSION})")
    try:
        arrays = {}
        for name, spec in payload["arrays"].items():
            arr = np.array(spec["data"], dtype=np.float64)
            arrays[name] = arr.reshape(spec["shape"])
        return ScorerWeights(payload["kind"], int(payload["levels"]), tuple(payload["layout"]),
                             int(payload["hidden"]), int(payload.get("rounds", 0)), arrays)
    except KeyError as exc:
        raise WeightsError(f"{path}: missing field {exc}") from None
    except ValueError as exc:
        raise WeightsError(f"{path}: {exc}") from None

