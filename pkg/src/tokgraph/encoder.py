"""Learnable space-time positional encoding and a pre-norm Transformer encoder.

Attention is global: all ``N = T * P`` tokens attend to each other under a
single softmax.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .backbone import TokenGrid


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    activation: str = "gelu"
    dropout: float = 0.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("encoder layers must be >= 0")
        if self.heads < 1 or self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.ffn_dim < 1:
            raise ValueError("ffn_dim must be positive")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.dropout != 0.0:
            raise NotImplementedError("dropout is reserved and must be 0")

    @property
    def head_dim(self):
        return self.model_dim // self.heads


@dataclass
class EncoderLayerParams:
    wq: ad.Tensor   # (heads, C, d_h)
    wk: ad.Tensor
    wv: ad.Tensor
    wo: ad.Tensor   # (C, C)
    ln1_gain: ad.Tensor
    ln1_bias: ad.Tensor
    ln2_gain: ad.Tensor
    ln2_bias: ad.Tensor
    w1: ad.Tensor   # (C, ffn)
    b1: ad.Tensor
    w2: ad.Tensor   # (ffn, C)
    b2: ad.Tensor

    def named(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @classmethod
    def init(cls, cfg, rng, requires_grad=True):
        c, f, h, dh = cfg.model_dim, cfg.ffn_dim, cfg.heads, cfg.head_dim

        def uni(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=requires_grad)

        def const(value, n):
            return ad.Tensor(np.full(n, value, dtype=np.float64), requires_grad=requires_grad)

        return cls(
            wq=uni((h, c, dh), c), wk=uni((h, c, dh), c), wv=uni((h, c, dh), c),
            wo=uni((c, c), c),
            ln1_gain=const(1.0, c), ln1_bias=const(0.0, c),
            ln2_gain=const(1.0, c), ln2_bias=const(0.0, c),
            w1=uni((c, f), c), b1=const(0.0, f),
            w2=uni((f, c), f), b2=const(0.0, c),
        )


def add_positional_encoding(grid, pe):
    """``z_{t,p} = x_{t,p} + e_{t,p}``; ``pe`` is ``(T, P, C)``."""
    feats = grid.features
    want = (grid.t_frames, grid.p_sites, grid.channels)
    if tuple(pe.shape) != want:
        raise ValueError(f"positional table {pe.shape} does not match grid {want}")
    table = pe.reshape((grid.t_frames, grid.h_cells, grid.w_cells, grid.channels))
    return TokenGrid(feats + table)


def _fused(w):
    h, c, dh = w.shape
    return w.transpose(1, 0, 2).reshape(c, h * dh)


def _split_heads(x, heads):
    *lead, n, c = x.shape
    lead = tuple(lead)
    k = len(lead)
    x = x.reshape(lead + (n, heads, c // heads))
    return x.transpose(tuple(range(k)) + (k + 1, k, k + 2))


def _merge_heads(x):
    *lead, h, n, dh = x.shape
    lead = tuple(lead)
    k = len(lead)
    x = x.transpose(tuple(range(k)) + (k + 1, k, k + 2))
    return x.reshape(lead + (n, h * dh))


def multi_head_attention(tokens, p):
    """Softmax attention per head, heads concatenated, then ``W_o``.

    Per-head projections are evaluated as one fused ``C x C`` matmul.
    """
    heads = p.wq.shape[0]
    q = _split_heads(tokens @ _fused(p.wq), heads)
    k = _split_heads(tokens @ _fused(p.wk), heads)
    v = _split_heads(tokens @ _fused(p.wv), heads)
    return _merge_heads(ad.attention(q, k, v)) @ p.wo


def multi_head_attention_per_head(tokens, p):
    """Unfused reference built from primitive ops, one head at a time."""
    heads = p.wq.shape[0]
    dh = p.wq.shape[2]
    outs = []
    for h in range(heads):
        q = tokens @ p.wq[h]
        k = tokens @ p.wk[h]
        v = tokens @ p.wv[h]
        nd = k.ndim
        kt = k.transpose(tuple(range(nd - 2)) + (nd - 1, nd - 2))
        a = ad.softmax_lastdim((q @ kt) * (1.0 / np.sqrt(dh)))
        outs.append(a @ v)
    cat = outs[0] if heads == 1 else _concat_last(outs)
    return cat @ p.wo


def _concat_last(parts):
    data = np.concatenate([t.data for t in parts], axis=-1)
    sizes = np.cumsum([t.shape[-1] for t in parts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=-1))

    return ad.custom_op(data, parts, back)


def mlp(x, p, activation="gelu"):
    act = ad.gelu if activation == "gelu" else ad.relu
    return act(x @ p.w1 + p.b1) @ p.w2 + p.b2


def encoder_layer(tokens, p, activation="gelu", eps=1e-5):
    """``U = Z + MHA(LN(Z))``, then ``Z' = U + MLP(LN(U))``."""
    u = tokens + multi_head_attention(ad.layer_norm(tokens, p.ln1_gain, p.ln1_bias, eps), p)
    return u + mlp(ad.layer_norm(u, p.ln2_gain, p.ln2_bias, eps), p, activation)


def encode(grid, pe, layers, activation="gelu", eps=1e-5):
    """Positional encoding, ``len(layers)`` encoder layers, reshape to the grid.

    With no layers and ``pe=None`` the grid passes through untouched.
    """
    if pe is None and not layers:
        return grid
    if pe is not None:
        grid = add_positional_encoding(grid, pe)
    z = grid.tokens()
    for p in layers:
        z = encoder_layer(z, p, activation, eps)
    return TokenGrid.from_tokens(z, grid.t_frames, grid.h_cells, grid.w_cells)
