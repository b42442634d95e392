"""
Ablation rows and the MLP width sweep
=====================================

Five configurations switch the encoder and the two edge types on and off.
The width sweep retrains with different encoder MLP sizes. Runs here are a
few epochs on a few clips, enough to show the mechanics but not the
accuracy ordering; the acceptance tests train the rows properly.
"""

# %%
from tokgraph import harness
from tokgraph.config import ABLATION_ROWS
from tokgraph.model import param_report
from tokgraph.synth import generate_dataset

cfg = harness.acceptance_config(epochs=4, out_dir="runs/demo_ablation")
cfg = cfg.replace(**{"data.synth.train_per_class": 12, "data.synth.test_per_class": 8})
data = generate_dataset(cfg.data.synth)

for row, ab in ABLATION_ROWS.items():
    sub = harness._replace(cfg, ablation=ab)
    print(f"{row:11s} encoder layers {sub.encoder().layers}  intra {ab.use_if_fc!s:5s} temporal {ab.use_tat!s:5s}"
          f"  params {param_report(sub).total}")

# %%
results = harness.ablate(cfg, data, seeds=[0])
for row, reps in results.items():
    print(f"{row:11s} top1 {reps[0].top1:.3f}  mca {reps[0].mca:.3f}")

# %%
# Each extra unit of MLP width costs 2C + 1 parameters per layer.
for w in (256, 512, 1024, 2048):
    print(w, param_report(cfg.replace(**{"model.ffn_dim": w})).counts["encoder"])
sweep = harness.sweep_ffn(cfg.replace(**{"optim.epochs": 2}), [64, 256], data, "runs/demo_sweep")
print({w: round(r[0].top1, 3) for w, r in sweep.items()})
