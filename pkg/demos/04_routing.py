"""Structure-aware routing with load balancing."""

# %%
import numpy as np

from hetmoe.experts import RouterConfig, RouterState, balance_and_route

# Two experts with equal scores; expert 1 has already taken all the load.
state = RouterState(np.array([10.0, 0.0]))
d = balance_and_route([0.9, 0.9], state, RouterConfig(lambda_balance=0.5))
print("gamma", d.gamma, "damped scores", d.balanced, "weights", d.weights)

# %%
# Constant scores over 50 epochs: balancing narrows the load gap.
for lam in (0.0, 0.5, 1.0, 2.0):
    st = RouterState.zeros(2)
    for _ in range(50):
        balance_and_route([0.8, 0.6], st, RouterConfig(lambda_balance=lam))
    print(f"lambda {lam:<4} load ratio m1/m2 = {st.load[0] / st.load[1]:.4f}")

# %%
# Routing an aligned target view through a pre-trained pool, layer by layer.
from hetmoe.experiment import aligned_views, pretrain_pool
from hetmoe.hetgraph import generate_synthetic
from hetmoe.pretrain import PretrainConfig
from hetmoe.experts import run_expert_pipeline
from hetmoe.scenarios import SELECTIVITY_SOURCE, selectivity_target

pool, _ = pretrain_pool(generate_synthetic(SELECTIVITY_SOURCE, 1), PretrainConfig(F=32, d=32, epochs=80, lr=5e-3))
view = aligned_views(selectivity_target(0), pool.in_dim)[0]
state = RouterState.zeros(pool.num_experts)
h, decisions = run_expert_pipeline(pool, view, view.features, state, RouterConfig(), seed=0)
for dec in decisions:
    print(f"layer {dec.layer}: scores {np.round(dec.scores, 4)} weights {np.round(dec.weights, 4)} ({pool.provenance})")
