"""Dual masked reconstruction pre-training and expert-pool export."""

# %%
from hetmoe.hetgraph import build_views, generate_synthetic, svd_align
from hetmoe.pretrain import PretrainConfig, export_expert_pool, run_pretraining
from hetmoe.scenarios import PRETRAIN_SOURCE

g = generate_synthetic(PRETRAIN_SOURCE, seed=1)
cfg = PretrainConfig(F=32, d=32, epochs=60, lr=5e-3)
x, _ = svd_align(g.raw_features, cfg.F)
views = build_views(g, x)


def show(diag):
    if diag.epoch % 10 == 0:
        wf = ", ".join(f"{w:.2f}" for w in diag.w_feat)
        print(f"epoch {diag.epoch:>3}  L_pre {diag.loss:.4f}  feature weights [{wf}]  masked {diag.masked_fraction[0]:.2f}")


state, history = run_pretraining(views, cfg, callback=show)
print(f"loss {history[0].loss:.4f} -> {history[-1].loss:.4f}")

# %%
# Every per-view encoder layer becomes a frozen expert: pool[layer][view].
pool = export_expert_pool(state)
print(pool.num_layers, "layers x", pool.num_experts, "experts, provenance", pool.provenance)
print("digest", pool.digest()[:16])
