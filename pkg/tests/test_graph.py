import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokgraph import autodiff as ad
from tokgraph.graph import (
    CapacityError, PropagationConfig, appnp_closed_form, appnp_dense, appnp_structured,
    build_graph, export_edges, frame_degrees, normalized_adjacency_dense, oversmoothing_profile,
    parse_edges, propagate,
)

SWITCHES = list(itertools.product([True, False], repeat=2))


def brute_adjacency(T, P, intra=True, temp=True):
    """Adjacency from the edge definitions, enumerating all node pairs."""
    n = T * P
    m = np.eye(n)
    for i, j in itertools.product(range(n), repeat=2):
        if i == j:
            continue
        (ti, pi), (tj, pj) = divmod(i, P), divmod(j, P)
        if intra and ti == tj:
            m[i, j] = 1
        if temp and pi == pj and abs(ti - tj) == 1:
            m[i, j] = 1
    d = m.sum(axis=1)
    return m / np.sqrt(np.outer(d, d)), d


# -- construction ---------------------------------------------------------


def test_two_by_two_counts():
    g = build_graph(2, 2)
    assert len(g.edge_intra) == 2 and len(g.edge_temp) == 2
    np.testing.assert_array_equal(g.degree, [3, 3, 3, 3])


def test_three_frames_four_sites():
    g = build_graph(3, 4)
    np.testing.assert_array_equal(g.degree.reshape(3, 4), [[5] * 4, [6] * 4, [5] * 4])


def test_single_node():
    g = build_graph(1, 1)
    assert g.edge_intra == [] and g.edge_temp == []
    np.testing.assert_array_equal(g.degree, [1])
    np.testing.assert_array_equal(normalized_adjacency_dense(g), [[1.0]])


@pytest.mark.parametrize("T,P", [(0, 3), (3, 0)])
def test_empty_grid_rejected(T, P):
    with pytest.raises(ValueError):
        build_graph(T, P)


def test_degree_formulas_over_sweep():
    for T in range(1, 9):
        for P in range(1, 26):
            g = build_graph(T, P)
            assert len(g.edge_intra) == T * P * (P - 1) // 2
            assert len(g.edge_temp) == (T - 1) * P
            per_frame = g.degree.reshape(T, P)
            if T == 1:
                assert np.all(per_frame == P)
            else:
                assert np.all(per_frame[[0, -1]] == P + 1)
                assert np.all(per_frame[1:-1] == P + 2)
            assert _connected(g)


def _connected(g):
    n = g.n_nodes
    adj = [[] for _ in range(n)]
    for i, j in g.edge_intra + g.edge_temp:
        adj[i].append(j)
        adj[j].append(i)
    seen, stack = {0}, [0]
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


def test_stride_knob_degrees():
    np.testing.assert_array_equal(frame_degrees(5, 3, stride=2), [4, 4, 5, 4, 4])


# -- operator -------------------------------------------------------------


def test_two_by_two_operator_entries():
    a = normalized_adjacency_dense(build_graph(2, 2))
    nz = a[a != 0]
    np.testing.assert_allclose(nz, 1 / 3, atol=1e-15)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-15)


@pytest.mark.parametrize("T,P", [(1, 1), (1, 5), (2, 3), (4, 4), (6, 2)])
@pytest.mark.parametrize("intra,temp", SWITCHES)
def test_operator_matches_brute_force(T, P, intra, temp):
    cfg = PropagationConfig(use_intra=intra, use_temp=temp)
    a = normalized_adjacency_dense(build_graph(T, P, cfg))
    ref, _ = brute_adjacency(T, P, intra, temp)
    np.testing.assert_allclose(a, ref, atol=1e-15)
    assert np.array_equal(a, a.T)


@pytest.mark.parametrize("T,P", [(1, 1), (1, 7), (2, 4), (3, 5), (8, 25)])
def test_spectrum(T, P):
    g = build_graph(T, P)
    a = normalized_adjacency_dense(g)
    w, vecs = np.linalg.eigh(a)
    assert w[-1] == pytest.approx(1.0, abs=1e-12)
    assert w[0] > -1.0 + 1e-9
    if len(w) > 1:
        assert w[-2] < 1.0 - 1e-9   # simple top eigenvalue
    u = np.sqrt(g.degree) / np.linalg.norm(np.sqrt(g.degree))
    assert abs(abs(vecs[:, -1] @ u) - 1.0) < 1e-10


def test_power_iteration_radius():
    a = normalized_adjacency_dense(build_graph(3, 4))
    x = np.random.default_rng(0).normal(size=a.shape[0])
    for _ in range(500):
        x = a @ x
        x /= np.linalg.norm(x)
    assert np.linalg.norm(a @ x) <= 1.0 + 1e-12


# -- propagation ----------------------------------------------------------


def test_alpha_one_is_identity():
    g = build_graph(3, 4)
    h0 = np.random.default_rng(0).normal(size=(12, 5))
    cfg = PropagationConfig(alpha=1.0, k_prop=7)
    np.testing.assert_array_equal(appnp_dense(h0, g, cfg), h0)
    assert appnp_structured(h0, 3, 4, cfg).tobytes() == h0.tobytes()


def test_zero_steps_is_identity():
    g = build_graph(3, 4)
    h0 = np.random.default_rng(0).normal(size=(12, 5))
    cfg = PropagationConfig(alpha=0.3, k_prop=0)
    np.testing.assert_array_equal(appnp_dense(h0, g, cfg), h0)
    np.testing.assert_array_equal(appnp_structured(h0, 3, 4, cfg), h0)


def test_one_step_hand_example():
    # token order (t1,p1),(t1,p2),(t2,p1),(t2,p2); every operator entry is 1/3
    cfg = PropagationConfig(alpha=0.5, k_prop=1)
    h0 = np.array([[3.0], [0.0], [0.0], [0.0]])
    a = np.array([[1, 1, 1, 0], [1, 1, 0, 1], [1, 0, 1, 1], [0, 1, 1, 1]]) / 3.0
    oracle = 0.5 * a @ h0 + 0.5 * h0
    np.testing.assert_allclose(oracle.ravel(), [2.0, 0.5, 0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(appnp_dense(h0, build_graph(2, 2), cfg), oracle, atol=1e-15)
    np.testing.assert_allclose(appnp_structured(h0, 2, 2, cfg), oracle, atol=1e-15)


@pytest.mark.parametrize("intra,temp", SWITCHES)
def test_structured_equals_dense_random(intra, temp):
    rng = np.random.default_rng(int(intra) * 2 + int(temp))
    for _ in range(50):
        T, P, C = rng.integers(1, 9), rng.integers(1, 17), rng.integers(1, 9)
        cfg = PropagationConfig(alpha=float(rng.uniform(0.01, 1.0)), k_prop=int(rng.integers(0, 15)),
                                use_intra=intra, use_temp=temp)
        h0 = rng.normal(size=(T * P, C))
        d = appnp_dense(h0, build_graph(T, P, cfg), cfg)
        s = appnp_structured(h0, T, P, cfg)
        assert np.abs(d - s).max() < 1e-10


def test_structured_batched_leading_axes():
    rng = np.random.default_rng(5)
    cfg = PropagationConfig(alpha=0.2, k_prop=4)
    h0 = rng.normal(size=(3, 2, 12, 4))
    g = build_graph(3, 4, cfg)
    np.testing.assert_allclose(appnp_structured(h0, 3, 4, cfg), appnp_dense(h0, g, cfg), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 10_000))
def test_node_relabeling_equivariance(T, P, seed):
    rng = np.random.default_rng(seed)
    cfg = PropagationConfig(alpha=0.15, k_prop=5)
    g = build_graph(T, P, cfg)
    a = normalized_adjacency_dense(g)
    h0 = rng.normal(size=(T * P, 3))
    perm = rng.permutation(T * P)
    a_perm = a[np.ix_(perm, perm)]   # relabeled nodes and edges
    out = appnp_dense(h0, g, cfg)
    out_perm = appnp_dense(h0[perm], g, cfg, adjacency=a_perm)
    np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)


def test_propagate_is_differentiable_and_self_adjoint():
    rng = np.random.default_rng(0)
    cfg = PropagationConfig(alpha=0.2, k_prop=6)
    h = ad.Tensor(rng.normal(size=(2, 12, 3)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(2, 12, 3)))
    assert ad.grad_check(lambda: (propagate(h, 3, 4, cfg) * w).sum(), [h]) < 1e-7


def test_propagate_switched_off_is_passthrough():
    h = ad.Tensor(np.ones((4, 2)))
    assert propagate(h, 2, 2, PropagationConfig(use_intra=False, use_temp=False)) is h


# -- fixed point ----------------------------------------------------------


def test_closed_form_residual_and_limit():
    rng = np.random.default_rng(0)
    g = build_graph(3, 3)
    a = normalized_adjacency_dense(g)
    h0 = rng.normal(size=(9, 2))
    star = appnp_closed_form(h0, g, 0.2)
    assert np.abs(star - (0.8 * a @ star + 0.2 * h0)).max() < 1e-10
    cfg = PropagationConfig(alpha=0.2, k_prop=400)
    assert np.abs(appnp_dense(h0, g, cfg) - star).max() < 1e-8
    np.testing.assert_array_equal(appnp_closed_form(h0, g, 1.0), h0)


@pytest.mark.parametrize("alpha", [0.05, 0.1, 0.5])
def test_geometric_convergence(alpha):
    rng = np.random.default_rng(1)
    g = build_graph(3, 3)
    h0 = rng.normal(size=(9, 4))
    star = appnp_closed_form(h0, g, alpha)
    a = normalized_adjacency_dense(g)
    h = h0
    e0 = np.linalg.norm(h0 - star, 2)
    for k in range(1, 60):
        h = (1 - alpha) * a @ h + alpha * h0
        assert np.linalg.norm(h - star, 2) <= (1 - alpha) ** k * e0 * (1 + 1e-12) + 1e-14


def test_closed_form_capacity():
    with pytest.raises(CapacityError):
        appnp_closed_form(np.zeros((30, 1)), build_graph(5, 6), 0.1, max_nodes=20)


# -- oversmoothing --------------------------------------------------------


def test_dominant_eigenvector_has_zero_residual():
    g = build_graph(2, 4)
    h0 = np.outer(np.sqrt(g.degree), [1.0, -2.0])
    prof = oversmoothing_profile(h0, g, 30)
    assert prof.orthogonal_residual.max() < 1e-12


def test_diffusion_decays_at_spectral_rate():
    g = build_graph(2, 4)
    h0 = np.random.default_rng(0).normal(size=(8, 3))
    prof = oversmoothing_profile(h0, g, 200)
    r = prof.orthogonal_residual
    assert r[200] < 1e-6 * r[0]
    # eigen-decomposition oracle for the exact orthogonal component
    w, v = np.linalg.eigh(normalized_adjacency_dense(g))
    coef = v.T @ h0
    coef[-1] = 0.0
    for k in (1, 5, 20):
        exact = np.linalg.norm(v @ (w[:, None] ** k * coef))
        assert r[k] == pytest.approx(exact, rel=1e-9, abs=1e-14)
    assert np.all(np.diff(r[2:]) <= 1e-15)


def test_teleport_anchors_features():
    g = build_graph(2, 4)
    h0 = np.random.default_rng(2).normal(size=(8, 3))
    prof = oversmoothing_profile(h0, g, 50, alpha=0.1)
    assert np.all(prof.teleport_distance <= prof.teleport_bound + 1e-12)
    assert prof.teleport_distance[-1] < prof.diffusion_distance[-1]


# -- export ---------------------------------------------------------------


def test_edge_export_roundtrip():
    g = build_graph(3, 3)
    edges, degree = parse_edges(export_edges(g))
    np.testing.assert_array_equal(degree, g.degree)
    assert len(edges["intra"]) == 9 and len(edges["temporal"]) == 6
    for (t, p), (t2, p2) in edges["intra"]:
        assert t == t2 and p != p2
    for (t, p), (t2, p2) in edges["temporal"]:
        assert p == p2 and abs(t - t2) == 1
    # the exported list alone reproduces the operator
    n = 9
    m = np.eye(n)
    for kind in edges.values():
        for (t, p), (t2, p2) in kind:
            m[t * 3 + p, t2 * 3 + p2] = m[t2 * 3 + p2, t * 3 + p] = 1
    d = m.sum(axis=1)
    np.testing.assert_array_equal(d, degree)
    np.testing.assert_allclose(m / np.sqrt(np.outer(d, d)), normalized_adjacency_dense(g), atol=1e-15)


def test_parse_rejects_unknown_type():
    with pytest.raises(ValueError):
        parse_edges("diagonal 0 0 1 1\n")
