"""Typed spatio-temporal token graph and teleported (personalized PageRank)
feature propagation.

Nodes are the ``N = T * P`` tokens of a ``T x H x W`` grid, indexed
``n = t * P + p``.  Two edge types live on this single node set:

* intra-frame edges join every pair of sites within a frame (a clique),
* temporal edges join site ``p`` in frame ``t`` to site ``p`` in frame
  ``t + stride``.

Every node also carries a self-loop.  Propagation runs

    H <- (1 - alpha) * A @ H + alpha * H0,   A = D^-1/2 (M + I) D^-1/2

for ``k_prop`` steps.  Because all nodes of a frame share one degree, the
clique term reduces to a per-frame feature sum, which is what
:func:`appnp_structured` exploits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import custom_op


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationConfig:
    alpha: float = 0.1
    k_prop: int = 10
    use_intra: bool = True
    use_temp: bool = True
    stride: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.k_prop < 0:
            raise ValueError("k_prop must be non-negative")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def enabled(self):
        return self.use_intra or self.use_temp


@dataclass
class StGraph:
    t_frames: int
    p_sites: int
    edge_intra: list = field(repr=False)
    edge_temp: list = field(repr=False)
    degree: np.ndarray = field(repr=False)
    stride: int = 1

    @property
    def n_nodes(self):
        return self.t_frames * self.p_sites

    def node(self, t, p):
        return t * self.p_sites + p


def frame_degrees(T, P, use_intra=True, use_temp=True, stride=1):
    """Degree (self-loop included) shared by every node of each frame."""
    d = np.ones(T, dtype=np.int64)
    if use_intra:
        d += P - 1
    if use_temp:
        t = np.arange(T)
        d += (t - stride >= 0).astype(np.int64) + (t + stride < T).astype(np.int64)
    return d


def build_graph(T, P, cfg=None):
    if T < 1 or P < 1:
        raise ValueError(f"graph needs T >= 1 and P >= 1, got T={T}, P={P}")
    cfg = cfg or PropagationConfig()
    intra, temp = [], []
    if cfg.use_intra:
        for t in range(T):
            base = t * P
            for p in range(P):
                for q in range(p + 1, P):
                    intra.append((base + p, base + q))
    if cfg.use_temp:
        for t in range(T - cfg.stride):
            for p in range(P):
                temp.append((t * P + p, (t + cfg.stride) * P + p))
    degree = np.repeat(frame_degrees(T, P, cfg.use_intra, cfg.use_temp, cfg.stride), P)

    counted = np.ones(T * P, dtype=np.int64)
    for edges in (intra, temp):
        if edges:
            e = np.asarray(edges)
            np.add.at(counted, e[:, 0], 1)
            np.add.at(counted, e[:, 1], 1)
    if not np.array_equal(counted, degree):
        raise AssertionError("analytic degrees disagree with edge enumeration")
    return StGraph(T, P, intra, temp, degree, cfg.stride)


def normalized_adjacency_dense(g, dtype=np.float64):
    n = g.n_nodes
    m = np.eye(n, dtype=dtype)
    for edges in (g.edge_intra, g.edge_temp):
        if edges:
            e = np.asarray(edges)
            m[e[:, 0], e[:, 1]] = 1.0
            m[e[:, 1], e[:, 0]] = 1.0
    s = 1.0 / np.sqrt(g.degree.astype(dtype))
    return s[:, None] * m * s[None, :]


def appnp_dense(h0, g, cfg, adjacency=None):
    """Reference propagation: explicit ``N x N`` operator, ``k_prop`` matmuls.

    ``h0`` has shape ``(..., N, C)``.
    """
    h0 = np.asarray(h0)
    a = normalized_adjacency_dense(g, h0.dtype) if adjacency is None else adjacency
    h = h0
    for _ in range(cfg.k_prop):
        h = (1.0 - cfg.alpha) * (a @ h) + cfg.alpha * h0
    return h


def appnp_structured(h0, T, P, cfg):
    """Propagation in ``O(T * P * C)`` per step without forming the operator.

    Nodes in frame ``t`` share degree ``d_t``, so a node's clique-plus-self
    neighbourhood sum is the frame sum ``S_t``.  Temporal neighbours
    contribute ``h[t +- s, p] / sqrt(d_t d_{t+-s})``.
    """
    h0 = np.asarray(h0)
    if cfg.alpha == 1.0 or cfg.k_prop == 0 or not cfg.enabled:
        return h0.copy()
    lead = h0.shape[:-2]
    c = h0.shape[-1]
    x0 = h0.reshape(lead + (T, P, c))
    d = frame_degrees(T, P, cfg.use_intra, cfg.use_temp, cfg.stride).astype(h0.dtype)
    inv_d = (1.0 / d)[:, None, None]
    s = cfg.stride
    if cfg.use_temp and T > s:
        w = (1.0 / np.sqrt(d[s:] * d[:-s]))[:, None, None]
    keep = 1.0 - cfg.alpha
    anchor = cfg.alpha * x0
    h = x0
    for _ in range(cfg.k_prop):
        if cfg.use_intra:
            agg = h.sum(axis=-2, keepdims=True) * inv_d
            agg = np.broadcast_to(agg, h.shape).copy()
        else:
            agg = h * inv_d
        if cfg.use_temp and T > s:
            agg[..., s:, :, :] += h[..., :-s, :, :] * w
            agg[..., :-s, :, :] += h[..., s:, :, :] * w
        agg *= keep
        agg += anchor
        h = agg
    return h.reshape(h0.shape)


def propagate(h0, T, P, cfg):
    """Differentiable wrapper around :func:`appnp_structured`.

    The map ``h0 -> H`` is a polynomial in the symmetric operator ``A``, so
    it is self-adjoint and the backward pass is the same propagation
    applied to the incoming gradient.
    """
    if cfg.alpha == 1.0 or cfg.k_prop == 0 or not cfg.enabled:
        return h0
    out = appnp_structured(h0.data, T, P, cfg)
    return custom_op(out, (h0,), lambda g: (appnp_structured(g, T, P, cfg),))


def appnp_closed_form(h0, g, alpha, max_nodes=2048):
    """Fixed point ``alpha * (I - (1 - alpha) A)^-1 H0`` by a dense solve."""
    h0 = np.asarray(h0, dtype=np.float64)
    if alpha == 1.0:
        return h0.copy()
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    n = g.n_nodes
    if n > max_nodes:
        raise CapacityError(f"dense solve capped at {max_nodes} nodes, graph has {n}")
    a = normalized_adjacency_dense(g)
    return alpha * np.linalg.solve(np.eye(n) - (1.0 - alpha) * a, h0)


@dataclass
class OversmoothingProfile:
    orthogonal_residual: np.ndarray   # ||(I - u u^T) A^k h0||, pure diffusion
    diffusion_distance: np.ndarray    # ||A^k h0 - h0||
    teleport_distance: np.ndarray     # ||H^(k) - h0|| under alpha
    teleport_bound: float             # 2 (1 - alpha) ||h0||


def oversmoothing_profile(h0, g, k_max, alpha=0.0):
    """Track collapse toward the dominant eigenvector ``u ~ sqrt(d)``.

    Frobenius norms throughout.  ``alpha = 0`` disables the teleport
    comparison (its distances then equal the diffusion ones).
    """
    h0 = np.asarray(h0, dtype=np.float64).reshape(g.n_nodes, -1)
    a = normalized_adjacency_dense(g)
    u = np.sqrt(g.degree.astype(np.float64))
    u /= np.linalg.norm(u)
    resid, dist, tele = [], [], []
    x, h = h0, h0
    for k in range(k_max + 1):
        if k:
            x = a @ x
            h = (1.0 - alpha) * (a @ h) + alpha * h0
        resid.append(np.linalg.norm(x - np.outer(u, u @ x)))
        dist.append(np.linalg.norm(x - h0))
        tele.append(np.linalg.norm(h - h0))
    return OversmoothingProfile(
        np.array(resid), np.array(dist), np.array(tele),
        2.0 * (1.0 - alpha) * float(np.linalg.norm(h0)),
    )


def export_edges(g):
    """Edge list text: ``type t p t' p'`` per line, then a ``degree`` line."""
    P = g.p_sites
    lines = []
    for kind, edges in (("intra", g.edge_intra), ("temporal", g.edge_temp)):
        for i, j in edges:
            lines.append(f"{kind} {i // P} {i % P} {j // P} {j % P}")
    lines.append("degree " + " ".join(str(int(d)) for d in g.degree))
    return "\n".join(lines) + "\n"


def parse_edges(text):
    """Inverse of :func:`export_edges`: ``(edges_by_type, degree)``."""
    edges = {"intra": [], "temporal": []}
    degree = None
    for line in text.splitlines():
        if not line.strip():
            continue
        head, *rest = line.split()
        if head == "degree":
            degree = np.array([int(v) for v in rest], dtype=np.int64)
        elif head in edges:
            t, p, t2, p2 = (int(v) for v in rest)
            edges[head].append(((t, p), (t2, p2)))
        else:
            raise ValueError(f"unknown edge type {head!r}")
    return edges, degree
