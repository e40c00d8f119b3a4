"""Constrained-MDP environment contract, rollouts and seeded randomness."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

GOAL = "goal"
CRASH = "crash"
OFF_ROUTE = "off_route"
TIMEOUT = "timeout"
RUNNING = "running"
INFO_TAGS = (GOAL, CRASH, OFF_ROUTE, TIMEOUT, RUNNING)


class ActionError(ValueError):
    """An action index outside the environment's action range."""


@dataclass
class StepOutcome:
    next_obs: np.ndarray
    reward: float
    cost: float
    terminated: bool
    truncated: bool
    info: str = RUNNING

    def __post_init__(self):
        if self.info not in INFO_TAGS:
            raise ValueError(f"unknown info tag {self.info!r}")
        if (self.cost == 1.0) != (self.info == CRASH):
            raise ValueError("cost must be 1 exactly on crash steps")
        if self.terminated and self.truncated:
            raise ValueError("a step cannot be both terminated and truncated")


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    cost: float
    next_obs: np.ndarray
    terminated: bool
    truncated: bool

    def to_record(self) -> dict:
        return {
            "obs": [float(v) for v in self.obs],
            "action": int(self.action),
            "reward": float(self.reward),
            "cost": float(self.cost),
            "next_obs": [float(v) for v in self.next_obs],
            "terminated": bool(self.terminated),
            "truncated": bool(self.truncated),
        }


class Env(Protocol):
    observation_dim: int
    action_count: int

    def reset(self, seed: int) -> np.ndarray: ...

    def step(self, action: int) -> StepOutcome: ...


@dataclass
class Episode:
    transitions: list[Transition] = field(default_factory=list)
    infos: list[str] = field(default_factory=list)
    total_return: float = 0.0
    total_cost: float = 0.0

    def __len__(self):
        return len(self.transitions)

    @property
    def outcome(self) -> str:
        return self.infos[-1] if self.infos else RUNNING

    @property
    def crashed(self) -> bool:
        return CRASH in self.infos

    def write_jsonl(self, path) -> None:
        """One transition per line."""
        with open(path, "w") as fh:
            for tr, info in zip(self.transitions, self.infos):
                rec = tr.to_record()
                rec["info"] = info
                fh.write(json.dumps(rec) + "\n")


def check_action(action, action_count: int) -> int:
    a = int(action)
    if a != action or not 0 <= a < action_count:
        raise ActionError(f"action {action!r} outside [0, {action_count})")
    return a


def rollout(env: Env, policy: Callable[[np.ndarray], int], max_steps: int, seed: int) -> Episode:
    """Run one episode; stops at termination, truncation or ``max_steps``."""
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    obs = env.reset(seed)
    ep = Episode()
    for _ in range(max_steps):
        action = check_action(policy(obs), env.action_count)
        out = env.step(action)
        ep.transitions.append(
            Transition(obs, action, out.reward, out.cost, out.next_obs, out.terminated, out.truncated)
        )
        ep.infos.append(out.info)
        ep.total_return += out.reward
        ep.total_cost += out.cost
        obs = out.next_obs
        if out.terminated or out.truncated:
            break
    return ep


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode())


def derive_seed(root: int, *path) -> int:
    """Deterministic 63-bit seed for a named position under ``root``.

    Path items may be strings or ints; equal paths give equal seeds.
    """
    key = tuple(_name_key(p) if isinstance(p, str) else int(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def named_streams(seed: int, names) -> dict[str, np.random.Generator]:
    """Independent generators, one per name, keyed only by (seed, name).

    Adding a name never changes the draws of another stream.
    """
    return {
        name: np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(_name_key(name),))))
        for name in names
    }


class ChainCMDP:
    """Five-state chain with stochastic crash risk; used as a tabular oracle.

    States 0..3 are live, reaching position 4 is the goal. One-hot observations.
    Actions: 0 stay, 1 step right, 2 jump right by two.

    ``transition_table()`` exposes the full model for value iteration.
    """

    n_states = 4
    action_count = 3
    observation_dim = 4

    def __init__(self, step_reward=0.1, jump_reward=0.3, goal_reward=1.0, crash_reward=-1.0,
                 jump_crash=0.25, hazard_state=3, hazard_crash=0.1, time_limit=30):
        self.step_reward = step_reward
        self.jump_reward = jump_reward
        self.goal_reward = goal_reward
        self.crash_reward = crash_reward
        self.jump_crash = jump_crash
        self.hazard_state = hazard_state
        self.hazard_crash = hazard_crash
        self.time_limit = time_limit
        self.state = 0
        self.t = 0
        self._rng = np.random.default_rng(0)

    def _obs(self, s):
        o = np.zeros(self.observation_dim)
        if s < self.n_states:
            o[s] = 1.0
        return o

    def crash_prob(self, s, a) -> float:
        p = self.jump_crash if a == 2 else 0.0
        if s == self.hazard_state:
            p = max(p, self.hazard_crash)
        return p

    def transition_table(self):
        """List of (prob, next_state_or_None, reward, cost, terminal) per (s, a)."""
        table = {}
        for s in range(self.n_states):
            for a in range(self.action_count):
                p_crash = self.crash_prob(s, a)
                rows = []
                if p_crash > 0:
                    rows.append((p_crash, None, self.crash_reward, 1.0, True))
                nxt = s + (0, 1, 2)[a]
                base = (0.0, self.step_reward, self.jump_reward)[a]
                if nxt >= self.n_states:
                    rows.append((1.0 - p_crash, None, base + self.goal_reward, 0.0, True))
                else:
                    rows.append((1.0 - p_crash, nxt, base, 0.0, False))
                table[s, a] = rows
        return table

    def reset(self, seed):
        self._rng = np.random.default_rng(seed)
        self.state = 0
        self.t = 0
        return self._obs(0)

    def step(self, action):
        a = check_action(action, self.action_count)
        rows = self.transition_table()[self.state, a]
        u = self._rng.random()
        acc = 0.0
        chosen = rows[-1]
        for row in rows:
            acc += row[0]
            if u < acc:
                chosen = row
                break
        _, nxt, reward, cost, terminal = chosen
        self.t += 1
        if terminal:
            info = CRASH if cost == 1.0 else GOAL
            return StepOutcome(self._obs(self.n_states), reward, cost, True, False, info)
        self.state = nxt
        truncated = self.t >= self.time_limit
        return StepOutcome(self._obs(nxt), reward, cost, False, truncated, TIMEOUT if truncated else RUNNING)
