"""Ring replay buffer with n-step reward and cost targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import Transition


@dataclass
class NStepBatch:
    """A sampled minibatch; every field has one row per sample.

    ``n_step_reward[i] = sum_k gamma**k * r[t+k]`` over ``effective_n[i]`` steps,
    likewise for cost. ``terminal[i]`` means the window ended in a terminal
    state and no bootstrap term applies.
    """

    obs: np.ndarray
    action: np.ndarray
    n_step_reward: np.ndarray
    n_step_cost: np.ndarray
    bootstrap_obs: np.ndarray
    bootstrap_discount: np.ndarray
    terminal: np.ndarray
    effective_n: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.action)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, action_count: int | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.action_count = action_count
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.cost = np.zeros(capacity)
        self.terminated = np.zeros(capacity, dtype=bool)
        self.truncated = np.zeros(capacity, dtype=bool)
        self.cursor = 0  # next write slot
        self.size = 0
        self._open_len = 0  # transitions of the unfinished episode at the tail

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        obs = np.asarray(tr.obs, dtype=np.float64)
        nxt = np.asarray(tr.next_obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,) or nxt.shape != (self.obs_dim,):
            raise ValueError(
                f"transition observations have shapes {obs.shape}/{nxt.shape}, buffer expects ({self.obs_dim},)"
            )
        if self.action_count is not None and not 0 <= int(tr.action) < self.action_count:
            raise ValueError(f"action {tr.action} outside [0, {self.action_count})")
        i = self.cursor
        self.obs[i] = obs
        self.next_obs[i] = nxt
        self.action[i] = int(tr.action)
        self.reward[i] = tr.reward
        self.cost[i] = tr.cost
        self.terminated[i] = bool(tr.terminated)
        self.truncated[i] = bool(tr.truncated)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        if tr.terminated or tr.truncated:
            self._open_len = 0
        else:
            self._open_len = min(self._open_len + 1, self.capacity)

    def get(self, i: int) -> Transition:
        """The transition stored ``i`` slots after the oldest one."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        j = self._physical(np.array([i]))[0]
        return Transition(self.obs[j].copy(), int(self.action[j]), float(self.reward[j]),
                          float(self.cost[j]), self.next_obs[j].copy(),
                          bool(self.terminated[j]), bool(self.truncated[j]))

    def _physical(self, logical: np.ndarray) -> np.ndarray:
        start = self.cursor - self.size
        return (logical + start) % self.capacity

    def valid_count(self, n: int) -> int:
        """Number of window starts whose n-step window is complete."""
        return self.size - min(self._open_len, n - 1)

    def sample_nstep(self, batch: int, n: int, gamma: float, rng: np.random.Generator) -> NStepBatch:
        if n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        valid = self.valid_count(n)
        if valid <= 0:
            raise ValueError("replay buffer holds no complete n-step window")
        logical = rng.integers(0, valid, size=batch)
        return self.nstep_at(logical, n, gamma)

    def nstep_at(self, logical, n: int, gamma: float) -> NStepBatch:
        """n-step views for explicit logical indices (0 = oldest stored)."""
        logical = np.asarray(logical, dtype=np.int64)
        b = len(logical)
        powers = [gamma**k for k in range(n + 1)]
        acc_r = np.zeros(b)
        acc_c = np.zeros(b)
        m = np.zeros(b, dtype=np.int64)
        last = self._physical(logical)
        open_ = np.ones(b, dtype=bool)
        for k in range(n):
            idx = self._physical(np.minimum(logical + k, self.size - 1))
            live = open_ & (logical + k < self.size)
            if not live.any():
                break
            acc_r[live] = acc_r[live] + powers[k] * self.reward[idx[live]]
            acc_c[live] = acc_c[live] + powers[k] * self.cost[idx[live]]
            m[live] += 1
            last[live] = idx[live]
            ended = self.terminated[idx] | self.truncated[idx]
            open_ &= ~(live & ended)
            open_ &= live
        first = self._physical(logical)
        return NStepBatch(
            obs=self.obs[first],
            action=self.action[first],
            n_step_reward=acc_r,
            n_step_cost=acc_c,
            bootstrap_obs=self.next_obs[last],
            bootstrap_discount=np.array([powers[k] for k in m]),
            terminal=self.terminated[last].copy(),
            effective_n=m,
            index=logical,
        )
