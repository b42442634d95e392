"""
Training, evaluation and feature dumps
======================================

A small run of the full pipeline: patch embedding, positional table,
transformer encoder, graph propagation, mean pooling and a linear head.
Writes its artifacts under ``runs/demo``.
"""

# %%
import logging

import numpy as np

from tokgraph import harness
from tokgraph.synth import generate_dataset

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = harness.acceptance_config(epochs=8, out_dir="runs/demo")
cfg = cfg.replace(**{"data.synth.train_per_class": 20, "data.synth.test_per_class": 10})
data = generate_dataset(cfg.data.synth)
res = harness.train(cfg, data)
print("best epoch", res.best_epoch)

# %%
report = harness.evaluate(res.checkpoint, data["test"])
print(report.to_text())

# %%
# Pooled features per stage; the classes pull apart once the encoder has run.
for stage in ("backbone", "encoder", "graph"):
    feats = harness.dump_features(res.model, data["test"], stage)
    print(f"{stage:9s} centroid separation {harness.centroid_separation(feats, data['test'].labels):.3f}")

# %%
print(res.model.param_report().to_text())
