"""The six driving scenarios, their observations and a do-nothing policy."""

# %%
import numpy as np

from safedqn.cmdp import rollout
from safedqn.traffic import SCENARIOS, TrafficEnv

for tag in SCENARIOS:
    env = TrafficEnv(tag)
    print(f"{tag:14s} lanes={len(env.graph.lanes):2d} route={len(env.graph.route)} "
          f"entry points={len(env.graph.entry_points)}")

# %% Observation layout: ego (5), 8 nearest vehicles (5 each), 5 waypoints (4 each), lane options (2)
env = TrafficEnv("left_turn")
obs = env.reset(seed=0)
print("observation dim", obs.shape[0], "range", obs.min().round(3), obs.max().round(3))
print("ego block", obs[env.layout.ego_slice].round(3))
print("nearest vehicle", obs[env.layout.vehicle_slice(0)].round(3))

# %% Actions: 0 no-op, 1 left, 2 right, 3..8 target speeds
print("target speeds", env.sim.target_speeds)

# %% Standing still is safe on the merge map, and earns nothing
env = TrafficEnv("highway_merge")
outcomes = [rollout(env, lambda o: 3, 500, seed) for seed in range(5)]
print("standstill:", [(e.outcome, round(e.total_return, 2)) for e in outcomes])

# %% A uniformly random driver on the left turn
env = TrafficEnv("left_turn")
rng = np.random.default_rng(0)
eps = [rollout(env, lambda o: int(rng.integers(9)), 500, seed) for seed in range(20)]
print("random driver outcomes:", {o: sum(e.outcome == o for e in eps) for o in {e.outcome for e in eps}})
