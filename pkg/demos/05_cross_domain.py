"""Few-shot cross-domain transfer with ablations, at a reduced size.

The acceptance suite runs the full-size version of this scenario
(300 pre-training epochs, 5 seeds).
"""

# %%
from dataclasses import replace

from hetmoe.experiment import pretrain_pool, run_ablations, run_cross_domain
from hetmoe.scenarios import cross_domain_config, cross_domain_pair

source, target = cross_domain_pair()
cfg = cross_domain_config(epochs=100)
cfg = replace(cfg, seeds=[0, 1, 2])
pool, _ = pretrain_pool(source, cfg.pretrain)
print("pool", pool.provenance, pool.digest()[:16])

# %%
report = run_cross_domain(None, target, cfg, pool=pool)
print(report.to_text())

# %%
for name, rep in run_ablations(None, target, cfg, pool=pool).items():
    agg = rep.aggregate()
    print(f"{name:<11} Macro-F1 {agg['macro_mean']:.4f} +- {agg['macro_std']:.4f}")

# %%
# The frozen pool is untouched by every fine-tuning run.
print("digest unchanged:", pool.digest() == report.pool_digest)
