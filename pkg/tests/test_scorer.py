import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiertrack.model import AssocGraph
from hiertrack.scorer import (
    EdgeBatch,
    ScorerWeights,
    TrainConfig,
    WeightsError,
    edge_accuracy,
    gradient_check,
    init_weights,
    load_weights,
    loss_and_grads,
    prior_weights,
    save_weights,
    score_edges,
    train_scorer,
)

from helpers import tracklet
from oracles import central_difference

LAYOUT = ("app_cos", "jersey_cos", "jersey_valid", "team_cos", "field_dist", "dt")


def feature_graph(rng, n_nodes=6, n_edges=10, level=1, F=len(LAYOUT)):
    nodes = [tracklet(i, [i]) for i in range(n_nodes)]
    pairs = [(a, b) for a in range(n_nodes) for b in range(a + 1, n_nodes)]
    pick = sorted(rng.choice(len(pairs), size=min(n_edges, len(pairs)), replace=False))
    src = [pairs[i][0] for i in pick]
    dst = [pairs[i][1] for i in pick]
    return AssocGraph(level, (0, n_nodes), tuple(nodes), src, dst, rng.normal(size=(len(src), F)))


def _batch(rng, levels=2, graphs=3, **kw):
    parts = []
    for k in range(graphs):
        g = feature_graph(rng, level=1 + k % levels, **kw)
        parts.append(EdgeBatch.from_graph(g, rng.integers(0, 2, g.n_edges)))
    return EdgeBatch.concat(parts)


def _random_weights(kind, seed=0, levels=2, hidden=5, rounds=2):
    w = init_weights(kind, LAYOUT, levels, hidden=hidden, rounds=rounds, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for name in w.arrays:
        if name.endswith(".b"):
            w.arrays[name] = rng.normal(0, 0.3, w.arrays[name].shape)
    w.arrays["norm.mean"] = rng.normal(0, 0.2, w.arrays["norm.mean"].shape)
    w.arrays["norm.scale"] = rng.uniform(0.5, 2.0, w.arrays["norm.scale"].shape)
    return w


def test_zero_weights_give_one_half():
    g = feature_graph(np.random.default_rng(0))
    w = init_weights("logistic", LAYOUT, 1, zero=True)
    np.testing.assert_array_equal(score_edges(g, w), np.full(g.n_edges, 0.5))


def test_hand_set_logistic_weights():
    w = init_weights("logistic", LAYOUT, 1, hidden=4, zero=True)
    w.arrays["enc.1.W"][0, 0] = 1.0
    w.arrays["head.w"][0] = 1.0
    nodes = (tracklet(0, [0]), tracklet(1, [1]))
    g = AssocGraph(1, (0, 2), nodes, [0], [1], np.ones((1, len(LAYOUT))))
    assert score_edges(g, w)[0] == pytest.approx(1 / (1 + np.exp(-1.0)), abs=1e-15)
    assert score_edges(g, w)[0] == pytest.approx(0.7311, abs=1e-4)


def test_message_passing_with_zero_rounds_is_logistic_head():
    g = feature_graph(np.random.default_rng(1), level=2)
    mp = _random_weights("message_passing", seed=3)
    lg = init_weights("logistic", LAYOUT, 2, hidden=5)
    for name in lg.arrays:
        lg.arrays[name] = mp.arrays[name].copy()
    np.testing.assert_array_equal(score_edges(g, mp, rounds=0), score_edges(g, lg))
    assert not np.allclose(score_edges(g, mp, rounds=2), score_edges(g, lg))


@pytest.mark.parametrize("kind", ["logistic", "message_passing"])
def test_gradient_check_random_batch(kind):
    b = _batch(np.random.default_rng(5))
    w = _random_weights(kind, seed=7)
    assert gradient_check(w, b, epsilon=1e-5) < 1e-4


def test_gradient_check_tiny_message_passing_graph():
    g = feature_graph(np.random.default_rng(8), n_nodes=3, n_edges=3)
    b = EdgeBatch.from_graph(g, [1, 0, 1])
    w = _random_weights("message_passing", seed=9, levels=1, hidden=3, rounds=2)
    assert gradient_check(w, b, epsilon=1e-5) < 1e-4


def test_trained_message_passing_gradients_absolute():
    """After training many gradients are tiny; compare them in absolute terms.

    Central differences of an O(1) loss carry round-off near 1e-11, so a
    relative comparison says nothing about coordinates whose gradient is
    below about 1e-7.
    """
    rng = np.random.default_rng(21)
    graphs = [(feature_graph(rng, level=1 + k % 2), rng.integers(0, 2, 10)) for k in range(4)]
    w = train_scorer(graphs, _random_weights("message_passing", seed=4, hidden=4),
                     TrainConfig(lr=1e-2, stage_iters=10, epochs=3)).weights
    b = EdgeBatch.concat([EdgeBatch.from_graph(g, y) for g, y in graphs])
    _, grads = loss_and_grads(w, b)
    eps = 1e-5
    for name in w.trainable():
        def f(x, name=name):
            p = w.copy()
            p.arrays[name] = x
            return loss_and_grads(p, b, with_grads=False)[0]
        np.testing.assert_allclose(grads[name], central_difference(f, w.arrays[name], eps), rtol=0, atol=1e-9)


def test_zero_batch_has_zero_gradients():
    w = _random_weights("message_passing", seed=1)
    empty = EdgeBatch(np.zeros((0, len(LAYOUT))), np.zeros(0, dtype=np.int64),
                      np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), 0, np.zeros(0))
    loss, grads = loss_and_grads(w, empty)
    assert loss == 0.0 and all(not g.any() for g in grads.values())
    assert gradient_check(w, empty) == 0.0


def test_gradient_check_epsilon_range():
    b = _batch(np.random.default_rng(0))
    with pytest.raises(ValueError):
        gradient_check(_random_weights("logistic"), b, epsilon=1e-2)


@pytest.mark.parametrize("kind", ["logistic", "message_passing"])
def test_gradients_match_loss_from_scores(kind):
    """Differentiate a loss rebuilt from ``score_edges`` rather than the trainer's loss."""
    rng = np.random.default_rng(11)
    g = feature_graph(rng, n_nodes=5, n_edges=7)
    y = rng.integers(0, 2, g.n_edges).astype(float)
    w = _random_weights(kind, seed=12, levels=1, hidden=4)
    _, grads = loss_and_grads(w, EdgeBatch.from_graph(g, y))

    for name in ("head.w", "enc.1.W") + (("mp.edge.W",) if kind == "message_passing" else ()):
        def loss(x, name=name):
            probe = w.copy()
            probe.arrays[name] = x.copy()
            p = score_edges(g, probe)
            return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))

        numeric = central_difference(loss, w.arrays[name])
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-5, atol=1e-8)


def test_scores_are_permutation_equivariant():
    rng = np.random.default_rng(2)
    g = feature_graph(rng, n_nodes=6, n_edges=9)
    w = _random_weights("message_passing", seed=4, levels=1, hidden=5, rounds=3)
    base = score_edges(g, w)
    perm = rng.permutation(len(g.nodes))
    inv = np.argsort(perm)
    nodes = tuple(g.nodes[i] for i in perm)
    eperm = rng.permutation(g.n_edges)
    h = AssocGraph(1, g.window, nodes, inv[g.src][eperm], inv[g.dst][eperm], g.features[eperm])
    np.testing.assert_allclose(score_edges(h, w), base[eperm], rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(score_edges(g, w), base)


@given(st.floats(-1, 1), st.floats(0.0, 1.0), st.integers(0, 5))
def test_prior_scores_monotone_in_appearance(x, delta, seed):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=len(LAYOUT))
    w = prior_weights(LAYOUT, 2)
    nodes = (tracklet(0, [0]), tracklet(1, [1]))
    lo, hi = feats.copy(), feats.copy()
    lo[0], hi[0] = x, x + delta
    g = AssocGraph(1, (0, 2), nodes, [0, 0], [1, 1], np.stack([lo, hi]))
    s = score_edges(g, w)
    assert s[1] >= s[0]


def test_layout_and_level_mismatch():
    g = feature_graph(np.random.default_rng(0), level=3)
    w = init_weights("logistic", LAYOUT, 2)
    with pytest.raises(WeightsError, match="level"):
        score_edges(g, w)
    with pytest.raises(WeightsError):
        score_edges(feature_graph(np.random.default_rng(0), F=3), w)
    with pytest.raises(WeightsError):
        score_edges(feature_graph(np.random.default_rng(0)), w, kind="message_passing")


def _separable(rng, n_graphs=12, level=1):
    normal = np.array([1.0, -0.5, 0.25, 0.8, -1.0, 0.3])
    graphs = []
    for _ in range(n_graphs):
        g = feature_graph(rng, n_nodes=6, n_edges=12, level=level)
        margin = g.features @ normal
        keep = np.abs(margin) > 0.3  # clear gap around the plane
        x = g.features.copy()
        x[~keep] += np.sign(margin[~keep])[:, None] * 0.5 * normal
        g = AssocGraph(level, g.window, g.nodes, g.src, g.dst, x)
        graphs.append((g, (x @ normal > 0).astype(float)))
    return graphs, normal


def test_training_on_separable_edges():
    graphs, normal = _separable(np.random.default_rng(21))
    for g, y in graphs:  # the plane really separates the fixture
        assert np.all((g.features @ normal > 0) == (y > 0.5))
    init = init_weights("logistic", LAYOUT, 1, hidden=8, seed=0)
    res = train_scorer(graphs, init, TrainConfig(lr=1e-2, stage_iters=200, epochs=100, batch_graphs=4))
    assert edge_accuracy(res.weights, graphs) >= 0.99
    assert res.history and res.loss < res.history[0][2]


def test_training_needs_edges():
    empty = feature_graph(np.random.default_rng(0), n_edges=0)
    with pytest.raises(ValueError, match="no labelled edges"):
        train_scorer([(empty, np.zeros(0))], init_weights("logistic", LAYOUT, 1))


def test_single_edge_loss_goes_to_zero():
    g = feature_graph(np.random.default_rng(3), n_nodes=2, n_edges=1)
    init = init_weights("logistic", LAYOUT, 1, hidden=4, seed=2)
    res = train_scorer([(g, np.ones(1))], init, TrainConfig(lr=0.05, stage_iters=0, epochs=400),
                       normalize=False)
    losses = np.array([h[2] for h in res.history])
    assert losses[-1] < 1e-3
    assert np.all(np.diff(losses[20:]) <= 1e-12)


@pytest.mark.parametrize("kind", ["logistic", "message_passing"])
def test_training_is_reproducible(kind, tmp_path):
    rng = np.random.default_rng(4)
    graphs = [(feature_graph(rng, level=1 + i % 2), rng.integers(0, 2, 10).astype(float)) for i in range(6)]
    init = init_weights(kind, LAYOUT, 2, hidden=4, rounds=2, seed=1)
    cfg = TrainConfig(stage_iters=5, epochs=3, batch_graphs=2, seed=9)
    a = train_scorer(graphs, init, cfg, log_path=tmp_path / "a.log")
    b = train_scorer(graphs, init, cfg, log_path=tmp_path / "b.log")
    assert a.weights.equals(b.weights)
    assert (tmp_path / "a.log").read_bytes() == (tmp_path / "b.log").read_bytes()
    assert (tmp_path / "a.log").read_text().splitlines()[1].split("\t")[1] == "level1"


def test_training_freezes_higher_levels():
    rng = np.random.default_rng(6)
    graphs = [(feature_graph(rng, level=1), rng.integers(0, 2, 10).astype(float)) for _ in range(4)]
    init = init_weights("logistic", LAYOUT, 2, hidden=4, seed=1)
    res = train_scorer(graphs, init, TrainConfig(stage_iters=10, epochs=0, inherit_encoders=False))
    np.testing.assert_array_equal(res.weights.arrays["enc.2.W"], init.arrays["enc.2.W"])
    assert not np.array_equal(res.weights.arrays["enc.1.W"], init.arrays["enc.1.W"])


@pytest.mark.parametrize("kind", ["logistic", "message_passing"])
def test_weights_round_trip(kind, tmp_path):
    w = _random_weights(kind, seed=5)
    save_weights(w, tmp_path / "w.json")
    back = load_weights(tmp_path / "w.json")
    assert back.equals(w)
    for name in w.arrays:
        assert back.arrays[name].tobytes() == w.arrays[name].tobytes()


def test_weights_file_errors(tmp_path):
    w = _random_weights("logistic")
    save_weights(w, tmp_path / "w.json")
    data = json.loads((tmp_path / "w.json").read_text())
    bad = dict(data, layout_version=99)
    (tmp_path / "v.json").write_text(json.dumps(bad))
    with pytest.raises(WeightsError, match="layout version"):
        load_weights(tmp_path / "v.json")
    del data["arrays"]["enc.1.W"]
    (tmp_path / "m.json").write_text(json.dumps(data))
    with pytest.raises(WeightsError, match="enc.1.W"):
        load_weights(tmp_path / "m.json")
    (tmp_path / "j.json").write_text("{")
    with pytest.raises(WeightsError):
        load_weights(tmp_path / "j.json")


def test_weights_validation():
    w = init_weights("logistic", LAYOUT, 1)
    arrays = dict(w.arrays)
    arrays["head.w"] = np.full(3, np.nan)
    with pytest.raises(WeightsError):
        ScorerWeights("logistic", 1, LAYOUT, w.hidden, 0, arrays)
    with pytest.raises(WeightsError):
        ScorerWeights("svm", 1, LAYOUT, w.hidden, 0, w.arrays)
