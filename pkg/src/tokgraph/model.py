"""The full pipeline: patch backbone -> positional encoding -> encoder ->
graph propagation -> pooled linear classifier."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backbone import patch_embed, token_mlp
from .encoder import EncoderLayerParams, encode
from .graph import propagate
from .head import ClassifierParams, classify, pool
from .rng import stream

STAGES = ("backbone", "encoder", "graph")


@dataclass
class ParamReport:
    counts: OrderedDict

    @property
    def total(self):
        return sum(self.counts.values())

    def to_text(self):
        lines = [f"{k}={v}" for k, v in self.counts.items()]
        lines.append(f"total={self.total}")
        return "\n".join(lines) + "\n"


class TokenGraphModel:
    """Parameters and forward pass for one :class:`RunConfig`.

    Parameters live in ``self.params`` (an ordered name -> Tensor map);
    the names are the checkpoint keys.
    """

    def __init__(self, cfg, params=None, fault=False):
        self.cfg = cfg
        self.fault = fault
        self.enc_cfg = cfg.encoder()
        self.prop_cfg = cfg.propagation()
        self.t_frames, self.h_cells, self.w_cells = cfg.grid
        self.params = params if params is not None else init_params(cfg)
        self._bind()

    def _bind(self):
        p = self.params
        self.backbone_layers = [(p[f"backbone.mlp{i}.weight"], p[f"backbone.mlp{i}.bias"])
                                for i in range(self.cfg.model.backbone_depth)]
        self.pe = p.get("encoder.pos_embed")
        self.layers = []
        for i in range(self.enc_cfg.layers):
            pre = f"encoder.layer{i}."
            self.layers.append(EncoderLayerParams(**{
                name: p[pre + name] for name in EncoderLayerParams.__dataclass_fields__
            }))
        self.classifier = ClassifierParams(p["classifier.weight"], p["classifier.bias"])

    def parameters(self):
        return list(self.params.values())

    def stages(self, clips):
        """Token features after each stage, as ``(..., N, C)`` tensors."""
        grid = patch_embed(clips, self.cfg.model.patch,
                           self.params["backbone.patch.weight"], self.params["backbone.patch.bias"])
        grid = token_mlp(grid, self.backbone_layers)
        out = {"backbone": grid.tokens()}
        if self.cfg.ablation.use_te:
            grid = encode(grid, self.pe, self.layers, self.enc_cfg.activation, self.enc_cfg.ln_eps)
        out["encoder"] = grid.tokens()
        P = self.h_cells * self.w_cells
        out["graph"] = propagate(out["encoder"], self.t_frames, P, self.prop_cfg)
        return out

    def forward(self, clips):
        h = self.stages(clips)["graph"]
        pooled = pool(h)
        if self.fault:
            pooled = ad.flip_grad(pooled)
        return classify(pooled, self.classifier)

    __call__ = forward

    def pooled_features(self, clips, stage):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}; choose from {STAGES}")
        return pool(self.stages(clips)[stage]).data

    def param_report(self):
        return param_report(self.cfg, self.params)


def init_params(cfg, seed=None):
    """Deterministic initialisation from the ``init`` stream of ``seed``.

    Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), positional table ~ N(0, 0.02^2),
    biases 0, LayerNorm gains 1.
    """
    rng = stream(cfg.seed if seed is None else seed, "init")
    m, s = cfg.model, cfg.data.synth
    ph, pw = m.patch
    c = m.channels
    fan = ph * pw * s.channels
    params = OrderedDict()

    def uni(shape, fan_in):
        b = 1.0 / np.sqrt(fan_in)
        return ad.Tensor(rng.uniform(-b, b, size=shape), requires_grad=True)

    def zeros(n):
        return ad.Tensor(np.zeros(n), requires_grad=True)

    params["backbone.patch.weight"] = uni((fan, c), fan)
    params["backbone.patch.bias"] = zeros(c)
    for i in range(m.backbone_depth):
        params[f"backbone.mlp{i}.weight"] = uni((c, c), c)
        params[f"backbone.mlp{i}.bias"] = zeros(c)
    enc = cfg.encoder()
    if cfg.ablation.use_te:
        T, H, W = cfg.grid
        params["encoder.pos_embed"] = ad.Tensor(rng.normal(0.0, 0.02, size=(T, H * W, c)),
                                                requires_grad=True)
        for i in range(enc.layers):
            layer = EncoderLayerParams.init(enc, rng)
            for name, t in layer.named():
                params[f"encoder.layer{i}.{name}"] = t
    cls = ClassifierParams.init(s.num_classes, c, rng)
    params["classifier.weight"] = cls.weight
    params["classifier.bias"] = cls.bias
    return params


_GROUPS = (("backbone.", "backbone"), ("encoder.pos_embed", "positional_encoding"),
           ("encoder.", "encoder"), ("classifier.", "classifier"))


def module_of(name):
    for prefix, group in _GROUPS:
        if name.startswith(prefix):
            return group
    raise KeyError(f"parameter {name!r} belongs to no module")


def param_report(cfg, params=None):
    """Learnable parameter counts per module.  The graph stage has none."""
    params = init_params(cfg) if params is None else params
    counts = OrderedDict((name, 0) for name in
                         ("backbone", "positional_encoding", "encoder", "graph", "classifier"))
    for name, t in params.items():
        counts[module_of(name)] += int(t.data.size)
    return ParamReport(counts)

