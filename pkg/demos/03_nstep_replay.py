"""n-step windows from the replay buffer, including episode boundaries."""

# %%
import numpy as np

from safedqn.cmdp import Transition
from safedqn.replay import ReplayBuffer


def tr(r, c=0.0, done=False):
    return Transition(np.zeros(1), 0, r, c, np.zeros(1), done, False)


buf = ReplayBuffer(capacity=16, obs_dim=1)
for r in (1.0, 1.0, 1.0, 1.0):
    buf.push(tr(r))

# %% Three steps of reward 1 at gamma 0.99: 1 + 0.99 + 0.9801
b = buf.nstep_at([0], n=3, gamma=0.99)
print("n-step reward", b.n_step_reward[0], "bootstrap discount", b.bootstrap_discount[0])

# %% A crash two steps in cuts the window short and removes the bootstrap
buf.push(tr(0.5))
buf.push(tr(-100.0, c=1.0, done=True))
b = buf.nstep_at([4], n=8, gamma=0.99)
print("effective n", b.effective_n[0], "terminal", b.terminal[0],
      "reward", b.n_step_reward[0], "cost", b.n_step_cost[0])

# %% Windows that would run past the newest, unfinished episode are never sampled
buf.push(tr(0.0))
buf.push(tr(0.0))
print("stored", len(buf), "valid 8-step starts", buf.valid_count(8))
