"""SafeDQN and the reward-shaped DQN baseline.

SafeDQN keeps two estimators: a utility network ``Q`` trained on rewards
with a max-bootstrap and a risk network ``Q_C`` trained on constraint costs
with a min-bootstrap. Actions are chosen greedily on ``Q - lambda * Q_C``
and ``lambda`` follows the mean episode cost of recent episodes.
"""

from __future__ import annotations

import dataclasses
import io
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .cmdp import Env, Episode, Transition, derive_seed, named_streams, rollout
from .replay import NStepBatch, ReplayBuffer

log = logging.getLogger(__name__)

ALGORITHMS = ("safedqn", "safedqn_alt", "dqn_shaped")


@dataclass
class AgentConfig:
    algorithm: str = "safedqn"
    gamma: float = 0.99
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    hidden: tuple = (256, 256)
    train_frequency: int = 4
    batch_size: int = 32
    gradient_steps: int = 1
    tau: float = 1.0
    target_update_interval: int = 10_000
    n_step: int = 8
    learning_starts: int = 1_000
    buffer_capacity: int = 100_000
    loss: str = "mse"
    # exploration
    fully_random_steps: int = 50_000
    initial_epsilon: float = 1.0
    epsilon_decay_steps: int = 200_000
    final_epsilon: float = 0.05
    # lagrangian
    cost_threshold: float = 0.001
    initial_lambda: float = 100.0
    lambda_lr: float = 1.0
    lambda_update_frequency: int = 2_000
    lambda_window: int = 100
    # baseline only
    shaping_lambda: float = 100.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self) -> list[str]:
        """Human-readable problems with this config; empty when valid."""
        errs = []
        if self.algorithm not in ALGORITHMS:
            errs.append(f"algorithm: must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0.0 < self.gamma <= 1.0:
            errs.append("gamma: must lie in (0, 1]")
        if not self.learning_rate > 0:
            errs.append("learning_rate: must be positive")
        if self.optimizer not in ("adam", "sgd"):
            errs.append("optimizer: must be 'adam' or 'sgd'")
        if self.loss not in ("mse", "huber"):
            errs.append("loss: must be 'mse' or 'huber'")
        if not 0.0 <= self.tau <= 1.0:
            errs.append("tau: must lie in [0, 1]")
        for name in ("train_frequency", "batch_size", "gradient_steps", "target_update_interval",
                     "n_step", "buffer_capacity", "lambda_update_frequency", "lambda_window"):
            if getattr(self, name) < 1:
                errs.append(f"{name}: must be >= 1")
        for name in ("learning_starts", "fully_random_steps", "epsilon_decay_steps"):
            if getattr(self, name) < 0:
                errs.append(f"{name}: must be >= 0")
        for name in ("initial_epsilon", "final_epsilon"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                errs.append(f"{name}: must lie in [0, 1]")
        if self.initial_lambda < 0 or self.shaping_lambda < 0:
            errs.append("initial_lambda/shaping_lambda: must be >= 0")
        if any(h < 1 for h in self.hidden):
            errs.append("hidden: layer widths must be >= 1")
        return errs


@dataclass
class EpsilonSchedule:
    fully_random_steps: int = 50_000
    initial_epsilon: float = 1.0
    decay_steps: int = 200_000
    final_epsilon: float = 0.05

    def __call__(self, t: int) -> float:
        if t < self.fully_random_steps:
            return 1.0
        k = t - self.fully_random_steps
        if self.decay_steps == 0 or k >= self.decay_steps:
            return self.final_epsilon
        frac = k / self.decay_steps
        return self.initial_epsilon + frac * (self.final_epsilon - self.initial_epsilon)


class SafeDQNAgent:
    """Utility + risk estimators with a learned trade-off.

    With ``algorithm="dqn_shaped"`` there is no risk network, ``lambda`` stays 0
    and stored rewards are shaped as ``r - shaping_lambda * c``.
    """

    def __init__(self, obs_dim: int, action_count: int, config: AgentConfig | None = None, seed: int = 0):
        self.config = config = config or AgentConfig()
        errs = config.validate()
        if errs:
            raise ValueError("invalid agent config: " + "; ".join(errs))
        self.obs_dim = obs_dim
        self.action_count = action_count
        sizes = [obs_dim, *config.hidden, action_count]
        init = named_streams(seed, ["q_init", "qc_init"])
        self.q_net = nn.Network.create(sizes, rng=init["q_init"])
        self.q_target = self.q_net.copy()
        self.q_opt = nn.OptimizerState.for_network(self.q_net, config.optimizer, config.learning_rate)
        self.qc_net = self.qc_target = self.qc_opt = None
        if self.has_risk:
            self.qc_net = nn.Network.create(sizes, rng=init["qc_init"])
            self.qc_target = self.qc_net.copy()
            self.qc_opt = nn.OptimizerState.for_network(self.qc_net, config.optimizer, config.learning_rate)
        self.lam = float(config.initial_lambda) if self.has_risk else 0.0
        self.epsilon_schedule = EpsilonSchedule(
            config.fully_random_steps, config.initial_epsilon, config.epsilon_decay_steps, config.final_epsilon
        )
        self.env_steps = 0
        self.gradient_updates = 0
        self.cost_window: deque[float] = deque(maxlen=config.lambda_window)
        self.extra: dict = {}

    @property
    def algorithm(self) -> str:
        return self.config.algorithm

    @property
    def has_risk(self) -> bool:
        return self.config.algorithm != "dqn_shaped"

    @property
    def epsilon(self) -> float:
        return self.epsilon_schedule(self.env_steps)

    # acting

    def lagrangian_q(self, obs) -> np.ndarray:
        q = nn.forward(self.q_net, obs)
        if not self.has_risk or self.lam == 0.0:
            return q
        return q - self.lam * nn.forward(self.qc_net, obs)

    def select_action(self, obs, rng: np.random.Generator | None = None, training: bool = False,
                      epsilon: float | None = None) -> int:
        if training:
            eps = self.epsilon if epsilon is None else epsilon
            if eps > 0.0 and rng.random() < eps:
                return int(rng.integers(self.action_count))
        return int(np.argmax(self.lagrangian_q(obs)))

    def policy(self) -> Callable[[np.ndarray], int]:
        """Greedy evaluation policy."""
        return lambda obs: self.select_action(obs)

    def store(self, buffer: ReplayBuffer, tr: Transition) -> None:
        if not self.has_risk and self.config.shaping_lambda:
            tr = dataclasses.replace(tr, reward=tr.reward - self.config.shaping_lambda * tr.cost)
        buffer.push(tr)

    # learning

    def compute_targets(self, batch: NStepBatch) -> tuple[np.ndarray, np.ndarray | None]:
        live = ~batch.terminal
        q_next = nn.forward(self.q_target, batch.bootstrap_obs).max(axis=1)
        q_t = batch.n_step_reward.copy()
        q_t[live] += batch.bootstrap_discount[live] * q_next[live]
        if not self.has_risk:
            return q_t, None
        qc_next = nn.forward(self.qc_target, batch.bootstrap_obs).min(axis=1)
        qc_t = batch.n_step_cost.copy()
        qc_t[live] += batch.bootstrap_discount[live] * qc_next[live]
        return q_t, qc_t

    def compute_targets_alt(self, batch: NStepBatch) -> tuple[np.ndarray, np.ndarray]:
        live = ~batch.terminal
        q_next = nn.forward(self.q_target, batch.bootstrap_obs)
        qc_next = nn.forward(self.qc_target, batch.bootstrap_obs)
        a_star = np.argmax(q_next - self.lam * qc_next, axis=1)
        rows = np.arange(len(a_star))
        q_t = batch.n_step_reward.copy()
        qc_t = batch.n_step_cost.copy()
        q_t[live] += batch.bootstrap_discount[live] * q_next[rows, a_star][live]
        qc_t[live] += batch.bootstrap_discount[live] * qc_next[rows, a_star][live]
        return q_t, qc_t

    def _fit(self, net, opt, obs, actions, targets) -> float:
        pred = nn.forward(net, obs)
        rows = np.arange(len(actions))
        td = pred[rows, actions] - targets
        b = len(actions)
        if self.config.loss == "huber":
            a = np.abs(td)
            loss = float(np.mean(np.where(a <= 1.0, 0.5 * td * td, a - 0.5)))
            dtd = np.clip(td, -1.0, 1.0) / b
        else:
            loss = float(np.mean(td * td))
            dtd = 2.0 * td / b
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite Bellman loss ({loss}); aborting update")
        out_grad = np.zeros_like(pred)
        out_grad[rows, actions] = dtd
        nn.apply_gradients(net, nn.backward(net, obs, out_grad), opt)
        return loss

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator) -> tuple[float, float]:
        """One minibatch update of both estimators on a shared batch."""
        cfg = self.config
        batch = buffer.sample_nstep(cfg.batch_size, cfg.n_step, cfg.gamma, rng)
        if self.algorithm == "safedqn_alt":
            q_t, qc_t = self.compute_targets_alt(batch)
        else:
            q_t, qc_t = self.compute_targets(batch)
        q_loss = self._fit(self.q_net, self.q_opt, batch.obs, batch.action, q_t)
        qc_loss = float("nan")
        if self.has_risk:
            qc_loss = self._fit(self.qc_net, self.qc_opt, batch.obs, batch.action, qc_t)
        self.gradient_updates += 1
        return q_loss, qc_loss

    def update_targets(self) -> None:
        nn.polyak_blend(self.q_target, self.q_net, self.config.tau)
        if self.has_risk:
            nn.polyak_blend(self.qc_target, self.qc_net, self.config.tau)

    def record_episode_cost(self, episode_cost: float) -> None:
        self.cost_window.append(float(episode_cost))

    def update_lambda(self) -> float:
        """lambda <- max(0, lambda + alpha * mean(C_n - theta)) over the cost window."""
        if not self.has_risk or not self.cost_window:
            return self.lam
        violation = sum(c - self.config.cost_threshold for c in self.cost_window) / len(self.cost_window)
        self.lam = max(0.0, self.lam + self.config.lambda_lr * violation)
        return self.lam

    # persistence

    def save(self, path, extra: dict | None = None) -> None:
        arrays = {
            "q_net": np.frombuffer(nn.serialize(self.q_net), dtype=np.uint8),
            "q_target": np.frombuffer(nn.serialize(self.q_target), dtype=np.uint8),
        }
        if self.has_risk:
            arrays["qc_net"] = np.frombuffer(nn.serialize(self.qc_net), dtype=np.uint8)
            arrays["qc_target"] = np.frombuffer(nn.serialize(self.qc_target), dtype=np.uint8)
        for tag, opt in (("q_opt", self.q_opt), ("qc_opt", self.qc_opt)):
            if opt is None:
                continue
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"{tag}_m{i}"] = m
                arrays[f"{tag}_v{i}"] = v
        meta = {
            "format": 1,
            "obs_dim": self.obs_dim,
            "action_count": self.action_count,
            "config": dataclasses.asdict(self.config),
            "lambda": self.lam,
            "env_steps": self.env_steps,
            "gradient_updates": self.gradient_updates,
            "cost_window": list(self.cost_window),
            "opt_steps": {"q_opt": self.q_opt.step, "qc_opt": self.qc_opt.step if self.qc_opt else 0},
            "extra": extra or {},
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "SafeDQNAgent":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            cfg = AgentConfig(**meta["config"])
            agent = cls(meta["obs_dim"], meta["action_count"], cfg)
            sizes = [meta["obs_dim"], *cfg.hidden, meta["action_count"]]
            agent.q_net = nn.deserialize(z["q_net"].tobytes(), expect_sizes=sizes)
            agent.q_target = nn.deserialize(z["q_target"].tobytes(), expect_sizes=sizes)
            if agent.has_risk:
                agent.qc_net = nn.deserialize(z["qc_net"].tobytes(), expect_sizes=sizes)
                agent.qc_target = nn.deserialize(z["qc_target"].tobytes(), expect_sizes=sizes)
            for tag in ("q_opt", "qc_opt"):
                opt = getattr(agent, tag)
                if opt is None:
                    continue
                opt.step = meta["opt_steps"][tag]
                if opt.rule == "adam":
                    opt.m = [z[f"{tag}_m{i}"].copy() for i in range(len(opt.m))]
                    opt.v = [z[f"{tag}_v{i}"].copy() for i in range(len(opt.v))]
        agent.lam = meta["lambda"]
        agent.env_steps = meta["env_steps"]
        agent.gradient_updates = meta["gradient_updates"]
        agent.cost_window.extend(meta["cost_window"])
        agent.extra = meta.get("extra", {})
        return agent


METRIC_COLUMNS = ("step", "episode", "return", "episode_cost", "lambda", "epsilon", "q_loss", "qc_loss")


@dataclass
class MetricLog:
    """Per-episode training metrics; optionally mirrored to an append-only CSV."""

    path: str | None = None
    rows: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.path is not None:
            with open(self.path, "w") as fh:
                fh.write(",".join(METRIC_COLUMNS) + "\n")

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(",".join(_fmt(row[c]) for c in METRIC_COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class TrainingResult:
    agent: SafeDQNAgent
    buffer: ReplayBuffer
    log: MetricLog
    episodes: int


def run_training(agent: SafeDQNAgent, env: Env, total_steps: int, seed: int,
                 log: MetricLog | None = None, buffer: ReplayBuffer | None = None,
                 on_step: Callable[[int], None] | None = None) -> TrainingResult:
    """The SafeDQN loop: act, store, train, refresh targets, adapt lambda.

    All randomness derives from ``seed``. ``on_step(env_steps)`` is called after
    every environment step (used for periodic evaluation).
    """
    cfg = agent.config
    log = log if log is not None else MetricLog()
    buffer = buffer or ReplayBuffer(cfg.buffer_capacity, env.observation_dim, env.action_count)
    streams = named_streams(seed, ["explore", "replay"])
    explore, replay_rng = streams["explore"], streams["replay"]

    episode = 0
    obs = env.reset(derive_seed(seed, "train_episode", episode))
    ep_return = ep_cost = 0.0
    q_loss = qc_loss = float("nan")
    for _ in range(total_steps):
        action = agent.select_action(obs, explore, training=True)
        out = env.step(action)
        agent.store(buffer, Transition(obs, action, out.reward, out.cost, out.next_obs,
                                       out.terminated, out.truncated))
        agent.env_steps += 1
        ep_return += out.reward
        ep_cost += out.cost
        obs = out.next_obs
        t = agent.env_steps

        if t >= cfg.learning_starts and t % cfg.train_frequency == 0 and buffer.valid_count(cfg.n_step) > 0:
            for _ in range(cfg.gradient_steps):
                q_loss, qc_loss = agent.train_step(buffer, replay_rng)
        if t % cfg.target_update_interval == 0:
            agent.update_targets()

        if out.terminated or out.truncated:
            agent.record_episode_cost(ep_cost)
            log.append({
                "step": t, "episode": episode, "return": float(ep_return), "episode_cost": float(ep_cost),
                "lambda": float(agent.lam), "epsilon": float(agent.epsilon),
                "q_loss": float(q_loss), "qc_loss": float(qc_loss),
            })
            episode += 1
            obs = env.reset(derive_seed(seed, "train_episode", episode))
            ep_return = ep_cost = 0.0

        if agent.has_risk and t % cfg.lambda_update_frequency == 0:
            agent.update_lambda()
        if on_step is not None:
            on_step(t)
    return TrainingResult(agent, buffer, log, episode)


@dataclass
class EvalSummary:
    episodes: list[Episode]
    seeds: list[int]

    @property
    def mean_return(self) -> float:
        return float(np.mean([e.total_return for e in self.episodes]))

    @property
    def crash_rate(self) -> float:
        """Percentage of episodes that ended in a collision."""
        return 100.0 * sum(e.crashed for e in self.episodes) / len(self.episodes)

    def rows(self) -> list[dict]:
        return [
            {"episode": i, "seed": s, "return": e.total_return, "cost": e.total_cost, "length": len(e),
             "outcome": e.outcome}
            for i, (s, e) in enumerate(zip(self.seeds, self.episodes))
        ]


def evaluate(policy: Callable[[np.ndarray], int], env: Env, episodes: int, seed: int,
             max_steps: int = 10_000, tag: str = "eval") -> EvalSummary:
    """Run ``episodes`` episodes of ``policy`` on seeds derived from ``seed``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = [derive_seed(seed, tag, i) for i in range(episodes)]
    return EvalSummary([rollout(env, policy, max_steps, s) for s in seeds], seeds)
