"""Train SafeDQN and the reward-shaped baseline on the left turn.

Usage: python demos/05_train_left_turn.py [steps]

The default 30k steps finishes in about a minute per agent and is far from
converged; the acceptance experiment uses 300k steps and three seeds.
"""

# %%
import sys

from safedqn.agent import AgentConfig, SafeDQNAgent, evaluate, run_training
from safedqn.analysis import cost_recall_precision
from safedqn.traffic import TrafficEnv

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 30_000
desk = {"fully_random_steps": steps // 15, "epsilon_decay_steps": steps // 2}

# %%
for algorithm in ("safedqn", "dqn_shaped"):
    env = TrafficEnv("left_turn")
    agent = SafeDQNAgent(env.observation_dim, env.action_count, AgentConfig(algorithm=algorithm, **desk), seed=0)
    result = run_training(agent, env, steps, seed=0)
    summary = evaluate(agent.policy(), TrafficEnv("left_turn"), 50, seed=1, max_steps=500)
    line = (f"{algorithm:10s} episodes={result.episodes} eval return={summary.mean_return:7.1f} "
            f"crash rate={summary.crash_rate:4.0f}%")
    if agent.has_risk:
        rep = cost_recall_precision(agent.qc_net, result.buffer, 0.5)
        line += f" lambda={agent.lam:.2f} cost recall={rep.cost_recall}"
    print(line)
