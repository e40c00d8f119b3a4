"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the summary section at
the end lists every criterion) or as a script: ``python tests/test_acceptance.py``.
Criteria 7 and 8 train six agents for 300k steps each and dominate runtime.
"""

from __future__ import annotations

import math
import time
from functools import lru_cache

import numpy as np
import pytest

from safedqn import cli, nn
from safedqn.agent import AgentConfig, SafeDQNAgent, evaluate, run_training
from safedqn.analysis import classify_scores, cost_recall_precision, integrated_gradients
from safedqn.cmdp import CRASH, ChainCMDP, Transition, derive_seed
from safedqn.config import RunConfig
from safedqn.replay import ReplayBuffer
from safedqn.traffic import SCENARIOS, TrafficEnv

# Desk-scale settings for the behavioural experiment (criteria 7 and 8). Agent
# defaults stay in place except for the exploration horizon, which is shortened
# in proportion to the 300k-step budget.
BEHAVIOUR_STEPS = 300_000
BEHAVIOUR_SEEDS = (0, 1, 2)
BEHAVIOUR_OVERRIDES = {"fully_random_steps": 20_000, "epsilon_decay_steps": 150_000}
EVAL_EPISODES = 100


# ---------------------------------------------------------------- 1. gradients

def _fd_rel_error(net, x, g, h=1e-5):
    """Max relative error of analytic parameter and input gradients vs central differences."""
    bundle = nn.backward(net, x, g, want_input_grad=True)
    f = lambda: float(np.sum(nn.forward(net, x) * g))
    worst = 0.0

    def rel(a, n):
        return abs(a - n) / max(1e-6, abs(a) + abs(n))

    for p, gp in zip(net.params(), bundle.params):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            worst = max(worst, rel(gp[idx], (up - down) / (2 * h)))
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        num = (float(np.sum(nn.forward(net, xp) * g)) - float(np.sum(nn.forward(net, xm) * g))) / (2 * h)
        worst = max(worst, rel(bundle.input_grad[i], num))
    return worst


def test_criterion_1_gradient_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        sizes = [int(rng.integers(1, 3)), int(rng.integers(1, 65)), int(rng.integers(1, 65)), int(rng.integers(1, 9))]
        net = nn.Network.create(sizes, rng=rng)
        for layer in net.layers:
            layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
        x = rng.normal(size=sizes[0])
        g = rng.normal(size=sizes[-1])
        worst = max(worst, _fd_rel_error(net, x, g))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 60
    verdict(1, ok, f"100 nets up to 2x64x64x8, max rel err {worst:.2e} (<= 1e-4), {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 2. tabular chain

def chain_value_iteration(env: ChainCMDP, gamma: float, sweeps: int = 2000):
    """Fixed points of Q (max bootstrap) and Q_C (min bootstrap) from the known model."""
    table = env.transition_table()
    q = np.zeros((env.n_states, env.action_count))
    qc = np.zeros_like(q)
    for _ in range(sweeps):
        q_new, qc_new = np.zeros_like(q), np.zeros_like(qc)
        for (s, a), rows in table.items():
            for p, nxt, r, c, terminal in rows:
                q_new[s, a] += p * (r + (0.0 if terminal else gamma * q[nxt].max()))
                qc_new[s, a] += p * (c + (0.0 if terminal else gamma * qc[nxt].min()))
        q, qc = q_new, qc_new
    return q, qc


def test_criterion_2_tabular_cmdp_oracle(verdict):
    t0 = time.perf_counter()
    env = ChainCMDP()
    gamma = 0.9
    q_star, qc_star = chain_value_iteration(env, gamma)
    cfg = AgentConfig(hidden=(), gamma=gamma, n_step=1, learning_rate=3e-4, batch_size=64,
                      fully_random_steps=10**9, target_update_interval=500, learning_starts=100,
                      lambda_update_frequency=10**9)
    agent = SafeDQNAgent(env.observation_dim, env.action_count, cfg, seed=0)
    run_training(agent, env, 200_000, seed=0)
    eye = np.eye(env.observation_dim)
    err_q = np.max(np.abs(nn.forward(agent.q_net, eye) - q_star))
    err_qc = np.max(np.abs(nn.forward(agent.qc_net, eye) - qc_star))
    elapsed = time.perf_counter() - t0
    ok = err_q <= 0.05 and err_qc <= 0.05 and elapsed < 300
    verdict(2, ok, f"5-state chain, 200k steps: max |Q-Q*| {err_q:.4f}, max |Qc-Qc*| {err_qc:.4f} "
                   f"(<= 0.05), {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------- 3. n-step

def test_criterion_3_nstep_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = checked = 0
    for _ in range(1000):
        n, gamma = int(rng.integers(1, 11)), float(rng.uniform(0.5, 1.0))
        capacity = int(rng.integers(8, 200))
        trans = []
        for _ in range(int(rng.integers(1, 6))):  # a few scripted episodes back to back
            length = int(rng.integers(1, 40))
            for k in range(length):
                last = k == length - 1
                crash = last and rng.random() < 0.5
                trans.append(Transition(np.zeros(1), 0, -100.0 if crash else float(rng.normal()),
                                        1.0 if crash else 0.0, np.zeros(1), last and (crash or rng.random() < 0.5),
                                        last and not crash and rng.random() < 0.5))
        buf = ReplayBuffer(capacity, 1)
        for tr in trans:
            buf.push(tr)
        kept = trans[-buf.size:]
        if buf.valid_count(n) <= 0:
            continue
        b = buf.sample_nstep(32, n, gamma, rng)
        for i, start in enumerate(b.index):
            r = c = 0.0
            for k in range(n):
                if start + k >= len(kept):
                    break
                t = kept[start + k]
                r += gamma**k * t.reward
                c += gamma**k * t.cost
                if t.terminated or t.truncated:
                    break
            checked += 1
            mismatches += (b.n_step_reward[i] != r) or (b.n_step_cost[i] != c)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10
    verdict(3, ok, f"1000 scripted trials, {checked} windows, {mismatches} inexact sums, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 4. lambda

def test_criterion_4_lambda_dynamics(verdict):
    def agent(lam0, alpha=1.0):
        return SafeDQNAgent(1, 2, AgentConfig(hidden=(), initial_lambda=lam0, lambda_lr=alpha), seed=0)

    def reference(lam, window, alpha=1.0, theta=0.001):
        return max(0.0, lam + alpha * (sum(c - theta for c in window) / len(window)))

    a = agent(100.0)
    window, seq, ref, lam = [], [], [], 100.0
    for batch in ([1, 0, 0, 0], [1], [0, 0, 0]):  # the window grows between updates
        for c in batch:
            a.record_episode_cost(c)
            window.append(float(c))
        seq.append(a.update_lambda())
        lam = reference(lam, window)
        ref.append(lam)
    first = seq[0]
    hand = [100.249, 100.249 + 0.399, 100.249 + 0.399 + 0.249]
    exact = seq == ref
    close = all(abs(v - h) < 1e-12 for v, h in zip(seq, hand))

    clean = agent(0.0105)
    clean.record_episode_cost(0.0)
    steps = [clean.update_lambda() for _ in range(12)]
    decay_ok = all(abs((x - y) - 0.001) < 1e-15 for x, y in zip([0.0105] + steps[:9], steps[:10]))
    clamp_ok = steps[10:] == [0.0, 0.0]

    rng = np.random.default_rng(0)
    never_negative = True
    for _ in range(2000):
        b = agent(float(rng.uniform(0, 2)), float(rng.uniform(0.01, 5)))
        for c in rng.random(int(rng.integers(1, 10))) < 0.2:
            b.record_episode_cost(float(c))
        for _ in range(5):
            never_negative &= b.update_lambda() >= 0.0
    ok = exact and close and decay_ok and clamp_ok and never_negative
    verdict(4, ok, f"[1,0,0,0] -> {first!r}; sequence {[round(v, 6) for v in seq]} exact={exact} hand={close}; clean decay by 0.001={decay_ok}; "
                   f"clamp={clamp_ok}; lambda>=0 over 10k updates={never_negative}")
    assert ok


# ------------------------------------------------------------ 5. IG completeness

def test_criterion_5_ig_completeness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    linear_exact = True
    for _ in range(50):
        d = int(rng.integers(1, 20))
        w = rng.normal(size=(1, d))
        net = nn.Network([nn.Layer(w, rng.normal(size=1), nn.IDENTITY)])
        x = rng.normal(size=d)
        rep = integrated_gradients(net, x, steps=int(rng.integers(1, 257)))
        linear_exact &= bool(np.allclose(rep.attributions, w[0] * x, rtol=0, atol=1e-13))

    within = monotone = 0
    relu_within = relu_monotone = 0
    n_nets = 100
    for _ in range(n_nets):
        sizes = [int(rng.integers(2, 68)), int(rng.integers(4, 65)), int(rng.integers(4, 65)), int(rng.integers(1, 10))]
        x = rng.uniform(-1, 1, size=sizes[0])
        for act in (nn.TANH, nn.RELU):
            net = nn.Network.create(sizes, rng=rng, hidden_activation=act)
            for layer in net.layers:
                layer.bias[:] = rng.normal(scale=0.2, size=layer.bias.shape)
            reps = [integrated_gradients(net, x, steps=m) for m in (8, 64, 256)]
            res = [r.completeness_residual for r in reps]
            ok_1 = res[2] <= 0.01 * abs(reps[2].value - reps[2].baseline_value)
            ok_m = res[0] >= res[1] >= res[2]
            if act == nn.TANH:
                within += ok_1
                monotone += ok_m
            else:
                relu_within += ok_1
                relu_monotone += ok_m
    elapsed = time.perf_counter() - t0
    ok = linear_exact and within == n_nets and monotone == n_nets and elapsed < 60
    verdict(5, ok, f"linear exact={linear_exact}; smooth random nets: residual<=1% {within}/{n_nets}, "
                   f"monotone over M=8,64,256 {monotone}/{n_nets} (rectifier nets, informational: "
                   f"{relu_within}/{n_nets} and {relu_monotone}/{n_nets}); {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 6. metric oracle

def test_criterion_6_metric_oracle(verdict):
    rng = np.random.default_rng(5)
    bad = undefined_recall = undefined_precision = 0
    for k in range(1000):
        n = int(rng.integers(0, 40))
        scores = rng.random(n)
        labels = (rng.random(n) < rng.choice([0.0, 0.3, 1.0])).astype(float)
        t = float(rng.choice([0.5, rng.uniform(0.01, 1.0), 1.0]))
        rep = classify_scores(scores, labels, t)
        tp = sum(1 for s, c in zip(scores, labels) if c == 1 and s > t)
        fn = sum(1 for s, c in zip(scores, labels) if c == 1 and not s > t)
        fp = sum(1 for s, c in zip(scores, labels) if c == 0 and s > t)
        recall = tp / (tp + fn) if tp + fn else None
        precision = tp / (tp + fp) if tp + fp else None
        undefined_recall += recall is None
        undefined_precision += precision is None
        bad += (rep.cost_recall, rep.cost_precision) != (recall, precision)
    ok = bad == 0 and undefined_recall > 0 and undefined_precision > 0
    verdict(6, ok, f"1000 synthetic sets, {bad} mismatches; undefined recall in {undefined_recall}, "
                   f"undefined precision in {undefined_precision}")
    assert ok


# ------------------------------------------------------------ 7 & 8. behaviour

@lru_cache(maxsize=None)
def behaviour_run(algorithm: str, seed: int):
    env = TrafficEnv("left_turn")
    cfg = AgentConfig(algorithm=algorithm, **BEHAVIOUR_OVERRIDES)
    agent = SafeDQNAgent(env.observation_dim, env.action_count, cfg, seed=derive_seed(seed, "agent_init"))
    result = run_training(agent, env, BEHAVIOUR_STEPS, seed=derive_seed(seed, "train"))
    summary = evaluate(agent.policy(), TrafficEnv("left_turn"), EVAL_EPISODES, derive_seed(seed, "final_eval"),
                       max_steps=500)
    recall = None
    if agent.has_risk:
        recall = cost_recall_precision(agent.qc_net, result.buffer, 0.5)
    return summary, recall, agent.lam


@pytest.mark.slow
def test_criterion_7_scaled_safety_pattern(verdict):
    t0 = time.perf_counter()
    wins, rows = 0, []
    for seed in BEHAVIOUR_SEEDS:
        safe, _, lam = behaviour_run("safedqn", seed)
        shaped, _, _ = behaviour_run("dqn_shaped", seed)
        win = safe.crash_rate <= 5.0 and safe.crash_rate < shaped.crash_rate
        wins += win
        rows.append(f"seed {seed}: SafeDQN C={safe.crash_rate:.0f}% R={safe.mean_return:.1f} lambda={lam:.1f} | "
                    f"shaped DQN C={shaped.crash_rate:.0f}% R={shaped.mean_return:.1f}")
    elapsed = time.perf_counter() - t0
    ok = wins >= 2
    verdict(7, ok, f"{wins}/3 seeds with SafeDQN C<=5% and below shaped DQN; " + "; ".join(rows)
            + f"; {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_8_risk_estimator_recall(verdict):
    recalls = []
    for seed in BEHAVIOUR_SEEDS:
        _, rep, _ = behaviour_run("safedqn", seed)
        recalls.append(rep)
    good = sum(1 for r in recalls if r.cost_recall is not None and r.cost_recall >= 0.8)
    detail = ", ".join(
        f"seed {s}: recall {'undefined' if r.cost_recall is None else f'{r.cost_recall:.3f}'}"
        f" (precision {'undefined' if r.cost_precision is None else f'{r.cost_precision:.3f}'}, {r.tp + r.fn} crashes)"
        for s, r in zip(BEHAVIOUR_SEEDS, recalls))
    ok = good >= 2
    verdict(8, ok, f"{good}/3 seeds with cost recall >= 0.8 at t=0.5 on the final buffer; {detail}")
    assert ok


# ------------------------------------------------------------ 9. determinism

def test_criterion_9_determinism(verdict, tmp_path):
    cfg = RunConfig(scenario="highway_merge", total_steps=3000, hidden=(32, 32), learning_starts=200,
                    fully_random_steps=500, epsilon_decay_steps=1500, eval_every=1000, eval_episodes=3,
                    time_limit=200, target_update_interval=500, lambda_update_frequency=500, seed=17)
    same = []
    for algorithm in ("safedqn", "safedqn_alt", "dqn_shaped"):
        runs = []
        for k in range(2):
            out = tmp_path / f"{algorithm}_{k}"
            cli.cmd_train(cfg.override(algorithm=algorithm, out=str(out)))
            cli.cmd_eval(out / "latest.npz", episodes=4, seed=2, out=str(out / "eval"))
            runs.append(out)
        for name in ("metrics.csv", "eval.csv", "eval/episodes.csv"):
            same.append((runs[0] / name).read_bytes() == (runs[1] / name).read_bytes())
    ok = all(same)
    verdict(9, ok, f"train+eval repeated for 3 algorithms: {sum(same)}/{len(same)} metric CSVs byte-identical")
    assert ok


# ------------------------------------------------------------ 10. env invariants

def _distance_to_lane(lane, x, y):
    best = math.inf
    for (x0, y0), (x1, y1) in zip(lane.points[:-1], lane.points[1:]):
        dx, dy = x1 - x0, y1 - y0
        u = max(0.0, min(1.0, ((x - x0) * dx + (y - y0) * dy) / (dx * dx + dy * dy)))
        best = min(best, math.hypot(x0 + u * dx - x, y0 + u * dy - y))
    return best


def test_criterion_10_environment_invariants(verdict):
    t0 = time.perf_counter()
    total = 1_000_000
    per_tag = total // len(SCENARIOS)
    rng = np.random.default_rng(99)
    violations = {"obs": 0, "dense_reward": 0, "cost": 0, "off_graph": 0}
    steps = 0
    for tag in SCENARIOS:
        env = TrafficEnv(tag)
        lane_width = env.params.lane_width
        done, episode = True, 0
        for _ in range(per_tag + (total - per_tag * len(SCENARIOS) if tag == SCENARIOS[-1] else 0)):
            if done:
                obs = env.reset(derive_seed(99, tag, episode))
                episode += 1
                violations["obs"] += not (np.all(obs >= -1.0) and np.all(obs <= 1.0))
            out = env.step(int(rng.integers(env.action_count)))
            steps += 1
            done = out.terminated or out.truncated
            obs = out.next_obs
            violations["obs"] += not (np.all(obs >= -1.0) and np.all(obs <= 1.0))
            dense = out.reward - {"crash": -100.0, "off_route": -100.0, "goal": 100.0}.get(out.info, 0.0)
            violations["dense_reward"] += not (0.0 <= dense <= 1.0)
            violations["cost"] += out.cost not in (0.0, 1.0) or ((out.cost == 1.0) != (out.info == CRASH))
            ego = env.world.ego
            lane = env.graph.lanes[ego.lane]
            on_graph = 0.0 <= ego.offset <= lane.length and _distance_to_lane(lane, ego.x, ego.y) <= lane_width
            violations["off_graph"] += not on_graph
    elapsed = time.perf_counter() - t0
    ok = steps == total and not any(violations.values())
    verdict(10, ok, f"{steps} random steps over {len(SCENARIOS)} scenarios, violations {violations}, {elapsed:.0f}s")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
