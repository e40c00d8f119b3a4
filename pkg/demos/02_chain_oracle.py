"""SafeDQN on a tiny chain CMDP, checked against value iteration.

The chain has four live states and a goal. Stepping right earns a little
reward, jumping two states earns more but risks a crash, and the last state
carries a small hazard. Q should learn the reward-greedy values, Q_C the
cost of the safest continuation.
"""

# %%
import numpy as np

from safedqn import nn
from safedqn.agent import AgentConfig, SafeDQNAgent, run_training
from safedqn.cmdp import ChainCMDP

env = ChainCMDP()
gamma = 0.9

# %% Value iteration on the known model: max-bootstrap for Q, min-bootstrap for Q_C
table = env.transition_table()
q = np.zeros((4, 3))
qc = np.zeros((4, 3))
for _ in range(500):
    q_new, qc_new = np.zeros_like(q), np.zeros_like(qc)
    for (s, a), rows in table.items():
        for p, nxt, r, c, terminal in rows:
            q_new[s, a] += p * (r + (0 if terminal else gamma * q[nxt].max()))
            qc_new[s, a] += p * (c + (0 if terminal else gamma * qc[nxt].min()))
    q, qc = q_new, qc_new
print("Q* =\n", q.round(4))
print("Q_C* =\n", qc.round(4))

# %% A linear (tabular) SafeDQN under a uniformly random behaviour policy
cfg = AgentConfig(hidden=(), gamma=gamma, n_step=1, learning_rate=3e-4, batch_size=64,
                  fully_random_steps=10**9, target_update_interval=500, learning_starts=100)
agent = SafeDQNAgent(4, 3, cfg, seed=0)
run_training(agent, env, 60_000, seed=0)

eye = np.eye(4)
print("max |Q - Q*|   =", np.abs(nn.forward(agent.q_net, eye) - q).max().round(4))
print("max |Q_C - Q_C*| =", np.abs(nn.forward(agent.qc_net, eye) - qc).max().round(4))
# more steps tighten this further; the acceptance suite runs 200k
