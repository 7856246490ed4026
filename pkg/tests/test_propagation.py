import numpy as np
import pytest

from arcrec import autodiff as ad
from arcrec.autodiff import Tape, Tensor
from arcrec.graphs import Adjacency
from arcrec.propagation import cold_embedding, combine_layers, layer_weights, \
    propagate, propagation_operator
from conftest import assert_grads_close, central_difference


def dense_operator(adj: Adjacency, weighted: bool = False) -> np.ndarray:
    """Independent dense construction: inverse-degree self channel plus the
    symmetrically normalized adjacency."""
    n = adj.n
    S = np.zeros((n, n))
    for i, j, w in adj.edge_list():
        S[i, j] = S[j, i] = w if weighted else 1.0
    deg = S.sum(axis=1) if weighted else (S > 0).sum(axis=1).astype(float)
    P = np.zeros((n, n))
    for i in range(n):
        P[i, i] = 1.0 / deg[i] if deg[i] > 0 else 1.0
        for j in range(n):
            if S[i, j] != 0:
                P[i, j] += S[i, j] / (np.sqrt(deg[i]) * np.sqrt(deg[j]))
    return P


def random_adjacency(rng, n, p=0.4, weighted=False) -> Adjacency:
    edges = {}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges[(i, j)] = float(rng.integers(1, 4)) if weighted else 1.0
    return Adjacency.from_edges(n, edges)


def test_two_degree_one_nodes_add_embeddings():
    adj = Adjacency.from_edges(2, {(0, 1): 1.0})
    op = propagation_operator(adj)
    e = Tensor(np.array([[1.0, 2.0], [10.0, 20.0]]))
    h = propagate(op, e, 1)
    np.testing.assert_allclose(h[1].value, [[11.0, 22.0], [11.0, 22.0]])


def test_isolated_node_passes_through():
    adj = Adjacency.from_edges(3, {(0, 1): 1.0})
    op = propagation_operator(adj)
    e = Tensor(np.array([[1.0], [2.0], [7.0]]))
    h = propagate(op, e, 4)
    for layer in h:
        assert layer.value[2, 0] == 7.0


def test_path_graph_matches_dense_oracle():
    adj = Adjacency.from_edges(4, {(0, 1): 1.0, (1, 2): 1.0, (2, 3): 1.0})
    op = propagation_operator(adj)
    h0 = np.array([[1.0], [2.0], [3.0], [4.0]])
    got = propagate(op, Tensor(h0), 1)[1].value
    want = dense_operator(adj) @ h0
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("weighted", [False, True])
def test_random_graphs_match_dense_oracle(weighted):
    rng = np.random.default_rng(5 if weighted else 6)
    for _ in range(20):
        n = int(rng.integers(1, 11))
        adj = random_adjacency(rng, n, weighted=weighted)
        op = propagation_operator(adj, weighted=weighted)
        h0 = rng.normal(size=(n, 3))
        got = propagate(op, Tensor(h0), 2)
        P = dense_operator(adj, weighted=weighted)
        np.testing.assert_allclose(got[1].value, P @ h0, atol=1e-10)
        np.testing.assert_allclose(got[2].value, P @ (P @ h0), atol=1e-10)


def test_layer_weights_exact():
    assert layer_weights(0) == [1.0]
    assert layer_weights(1) == [2.0 / 3.0, 1.0 / 3.0]
    assert layer_weights(2) == [6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]


@pytest.mark.parametrize("depth", range(8))
def test_layer_weights_sum_to_one(depth):
    assert abs(sum(layer_weights(depth)) - 1.0) < 1e-12


def test_combine_layers_identity_at_depth_zero():
    e = Tensor(np.array([[1.0, 2.0]]))
    out = combine_layers([e])
    np.testing.assert_allclose(out.value, e.value)


def test_permutation_equivariance():
    rng = np.random.default_rng(7)
    n = 8
    adj = random_adjacency(rng, n)
    h0 = rng.normal(size=(n, 4))
    op = propagation_operator(adj)
    base = combine_layers(propagate(op, Tensor(h0), 2)).value

    perm = rng.permutation(n)
    remap = {int(p): i for i, p in enumerate(perm)}
    edges = {}
    for i, j, w in adj.edge_list():
        a, b = remap[i], remap[j]
        edges[(min(a, b), max(a, b))] = w
    adj_p = Adjacency.from_edges(n, edges)
    op_p = propagation_operator(adj_p)
    permuted = combine_layers(propagate(op_p, Tensor(h0[perm]), 2)).value
    np.testing.assert_allclose(permuted, base[perm], atol=1e-12)


def test_propagation_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    adj = random_adjacency(rng, 6)
    op = propagation_operator(adj)
    e0 = rng.uniform(-1, 1, size=(6, 3))
    w = rng.uniform(0.5, 1.5, size=(6, 3))

    def value(arrs):
        h = combine_layers(propagate(op, Tensor(arrs[0]), 2))
        return ad.tsum(ad.mul(h, Tensor(w))).item()

    t = Tensor(e0.copy())
    with Tape() as tape:
        h = combine_layers(propagate(op, t, 2))
        out = ad.tsum(ad.mul(h, Tensor(w)))
    g = tape.backward(out)[t]
    fd = central_difference(value, [e0])[0]
    assert_grads_close(g, fd)


def test_cold_embedding_cases():
    h = np.array([[1.0, 1.0], [-1.0, -1.0], [3.0, 5.0]])
    np.testing.assert_allclose(cold_embedding(h, np.array([2])), [3.0, 5.0])
    np.testing.assert_allclose(cold_embedding(h, np.array([0, 1])), [0.0, 0.0])
    np.testing.assert_allclose(cold_embedding(h, np.array([], dtype=np.int64)),
                               h.mean(axis=0))
