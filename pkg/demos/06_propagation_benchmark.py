"""
Dense versus structured propagation timing
==========================================

The dense operator costs O(N^2 C) per step, the structured kernel O(N C).
"""

# %%
from tokgraph import harness

ps = [16, 32, 64, 128]
rows = harness.bench([(32, p, 256) for p in ps], k_prop=10, repeats=2)
for r in rows:
    print(f"P={r['P']:4d} dense {r['dense_s']:.4f}s structured {r['structured_s']:.4f}s ({r['speedup']:.0f}x)")
print("fitted exponents: dense", round(harness.scaling_exponent(ps, [r["dense_s"] for r in rows]), 2),
      "structured", round(harness.scaling_exponent(ps, [r["structured_s"] for r in rows]), 2))

# %%
(big,) = harness.bench([(64, 49, 256)], k_prop=10, repeats=2)
print(f"T=64 P=49 C=256: {big['speedup']:.1f}x faster")
