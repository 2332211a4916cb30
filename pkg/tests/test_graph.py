import logging

import numpy as np
import pytest

from gckd.errors import UsageError
from gckd.model.encoder import FeatureBatch
from gckd.model.graph import (
    GnnLayerParams,
    build_graph,
    dump_edges,
    extract_domain_aware,
    gnn_backward,
    gnn_forward,
    gnn_forward_cached,
)

from conftest import unit_rows


def _input(rows):
    return FeatureBatch(rows, "target", "image", "student", "f_TI")


def _oracle_neighbors(X, k):
    """Brute-force KNN: cosine by explicit loops, ties to the lower index."""
    unit = [row / np.sqrt(sum(float(v) * float(v) for v in row)) for row in X]
    V = len(unit)
    out = []
    for j in range(V):
        sims = [(-sum(float(a) * float(b) for a, b in zip(unit[j], unit[i])), i) for i in range(V) if i != j]
        out.append([i for _, i in sorted(sims)[:k]])
    return np.array(out)


def _random_instance(rng):
    d = int(rng.integers(2, 6))
    b = int(rng.integers(1, 12))
    cs = int(rng.integers(0, 26))
    ct = int(rng.integers(0, 26))
    rows = unit_rows(rng, b + cs + ct, d)
    # Exact duplicates create ties
    for _ in range(int(rng.integers(0, 4))):
        src, dst = rng.integers(0, len(rows), size=2)
        rows[dst] = rows[src]
    return rows[:b], rows[b:b + cs], rows[b + cs:], d


def test_adjacency_matches_bruteforce_oracle(rng):
    checked = 0
    while checked < 100:
        inputs, src, tgt, d = _random_instance(rng)
        V = len(inputs) + len(src) + len(tgt)
        if V < 2:
            continue
        k = int(rng.integers(1, V))
        g = build_graph(_input(inputs), src.reshape(-1, d), tgt.reshape(-1, d), k)
        expected = _oracle_neighbors(g.X, k)
        np.testing.assert_array_equal(g.neighbors, expected)
        adj = g.adjacency()
        assert np.all(adj.sum(axis=1) == k)
        assert np.all(np.diag(adj) == 0)
        checked += 1


def _dense_reference(g, layers):
    A = g.adjacency()
    A_hat = (np.eye(g.num_vertices) + A) / (g.k + 1)
    H = g.X
    for i, layer in enumerate(layers):
        Z = A_hat @ H @ layer.weight + layer.bias
        H = np.tanh(Z) if i < len(layers) - 1 else Z
    return H / np.linalg.norm(H, axis=1, keepdims=True)


def _layers(rng, d, n=2):
    return [GnnLayerParams(np.eye(d) + 0.3 * rng.standard_normal((d, d)), 0.1 * rng.standard_normal(d))
            for _ in range(n)]


def test_gnn_forward_matches_dense_formula(rng):
    for _ in range(20):
        d = 4
        rows = unit_rows(rng, 30, d)
        g = build_graph(_input(rows[:6]), rows[6:18], rows[18:], 5)
        layers = _layers(rng, d)
        np.testing.assert_allclose(gnn_forward(g, layers), _dense_reference(g, layers), atol=1e-10, rtol=0)


def test_gnn_backward_matches_finite_differences(rng):
    d = 3
    rows = unit_rows(rng, 10, d)
    g = build_graph(_input(rows[:4]), rows[4:7], rows[7:], 3)
    layers = _layers(rng, d)
    w = rng.standard_normal((g.num_vertices, d))
    _, cache = gnn_forward_cached(g, layers)
    grads, grad_x = gnn_backward(layers, g, cache, w)
    h = 1e-6

    def loss():
        return float(np.sum(w * gnn_forward(g, layers)))

    for layer, (g_w, g_b) in zip(layers, grads):
        for arr, grad in ((layer.weight, g_w), (layer.bias, g_b)):
            for idx in np.ndindex(*arr.shape):
                original = arr[idx]
                arr[idx] = original + h
                plus = loss()
                arr[idx] = original - h
                minus = loss()
                arr[idx] = original
                assert grad[idx] == pytest.approx((plus - minus) / (2 * h), abs=1e-7)
    for idx in [(0, 0), (2, 1), (9, 2)]:
        original = g.X[idx]
        g.X[idx] = original + h
        plus = loss()
        g.X[idx] = original - h
        minus = loss()
        g.X[idx] = original
        assert grad_x[idx] == pytest.approx((plus - minus) / (2 * h), abs=1e-7)


def test_k_clamped_with_warning(rng, caplog):
    rows = unit_rows(rng, 4, 3)
    with caplog.at_level(logging.WARNING, logger="gckd.model.graph"):
        g = build_graph(_input(rows[:2]), rows[2:], np.zeros((0, 3)), 10)
    assert g.clamped and g.k == 3
    assert "clamped" in caplog.text


def test_clamp_with_empty_memories_is_quiet(rng, caplog):
    rows = unit_rows(rng, 4, 3)
    with caplog.at_level(logging.DEBUG, logger="gckd.model.graph"):
        g = build_graph(_input(rows), np.zeros((0, 3)), np.zeros((0, 3)), 10)
    assert g.clamped and g.k == 3
    records = [r for r in caplog.records if "clamped" in r.getMessage()]
    assert [r.levelno for r in records] == [logging.DEBUG]


def test_nearest_neighbor_by_angle():
    angles = np.deg2rad([0.0, 10.0, 90.0])
    rows = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    g = build_graph(_input(rows[:1]), rows[1:2], rows[2:], 1)
    assert g.neighbors[:, 0].tolist() == [1, 0, 1]


def test_memory_row_order_does_not_change_propagated_inputs(rng):
    inputs, src, tgt = unit_rows(rng, 3, 4), unit_rows(rng, 9, 4), unit_rows(rng, 7, 4)
    layers = _layers(rng, 4)
    base = gnn_forward(build_graph(_input(inputs), src, tgt, 4), layers)
    shuffled = gnn_forward(build_graph(_input(inputs), src[rng.permutation(9)], tgt[rng.permutation(7)], 4), layers)
    np.testing.assert_allclose(shuffled[:3], base[:3], atol=1e-12)


def test_too_few_vertices(rng):
    with pytest.raises(UsageError):
        build_graph(_input(unit_rows(rng, 1, 3)), np.zeros((0, 3)), np.zeros((0, 3)), 2)
    with pytest.raises(UsageError):
        build_graph(_input(unit_rows(rng, 3, 3)), np.zeros((0, 3)), np.zeros((0, 3)), 0)


def test_identical_vectors_stay_identical_under_identity_gnn():
    rows = np.tile(np.array([[0.6, 0.8]]), (5, 1))
    g = build_graph(_input(rows[:2]), rows[2:], np.zeros((0, 2)), 2)
    layers = [GnnLayerParams(np.eye(2), np.zeros(2)), GnnLayerParams(np.eye(2), np.zeros(2))]
    out = gnn_forward(g, layers)
    expected = np.tanh(rows) / np.linalg.norm(np.tanh(rows), axis=1, keepdims=True)
    np.testing.assert_allclose(out, expected, atol=1e-12)
    domain_aware = extract_domain_aware(out, 2, _input(rows[:2]))
    assert domain_aware.features.shape == (2, 2) and domain_aware.role == "f_TI"


def test_dump_edges(tmp_path, rng):
    rows = unit_rows(rng, 5, 3)
    g = build_graph(_input(rows[:2]), rows[2:], np.zeros((0, 3)), 2)
    path = tmp_path / "graphs" / "iter_000000_image.txt"
    dump_edges(g, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 10
    assert lines[0] == f"0 {g.neighbors[0, 0]}"
