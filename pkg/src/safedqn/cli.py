"""Command line: ``safedqn train | eval | explain``.

Errors are printed as one line ``error: <category>: <message>`` with a
non-zero exit code (config 2, checkpoint 3, usage 4, runtime 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass

from . import nn
from .agent import MetricLog, SafeDQNAgent, evaluate, run_training
from .analysis import (
    cost_recall_precision, integrated_gradients, write_classification_csv, write_saliency_csv,
)
from .cmdp import derive_seed, rollout
from .config import ConfigError, RunConfig
from .traffic import SCENARIOS, ScenarioParams, SimConfig, TrafficEnv

EVAL_COLUMNS = ("step", "mean_return", "crash_rate", "episodes")
EXIT_CODES = {"runtime": 1, "config": 2, "checkpoint": 3, "usage": 4}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        self.category = category
        super().__init__(message)


def make_env(cfg: RunConfig, scenario: str | None = None, record_trace=False) -> TrafficEnv:
    params = ScenarioParams.load(cfg.scenario_params) if cfg.scenario_params else ScenarioParams()
    return TrafficEnv(scenario or cfg.scenario, params, SimConfig(time_limit=cfg.time_limit),
                      record_trace=record_trace)


def _load_agent(path) -> SafeDQNAgent:
    try:
        return SafeDQNAgent.load(path)
    except FileNotFoundError as exc:
        raise CliError("checkpoint", f"checkpoint not found: {path}") from exc
    except (nn.CheckpointError, KeyError, ValueError, OSError) as exc:
        raise CliError("checkpoint", f"cannot load {path}: {exc}") from exc


def _check_agent_env(agent: SafeDQNAgent, env: TrafficEnv) -> None:
    if (agent.obs_dim, agent.action_count) != (env.observation_dim, env.action_count):
        raise CliError(
            "checkpoint",
            f"architecture mismatch: checkpoint expects obs {agent.obs_dim}/actions {agent.action_count}, "
            f"scenario gives {env.observation_dim}/{env.action_count}",
        )


@dataclass
class TrainOutput:
    run_dir: str
    agent: SafeDQNAgent
    result: object
    evals: list[dict]


def cmd_train(cfg: RunConfig) -> TrainOutput:
    """Train and periodically evaluate; writes metrics, evals, config and checkpoints to ``cfg.out``."""
    cfg.check()
    os.makedirs(cfg.out, exist_ok=True)
    cfg.dump(os.path.join(cfg.out, "config.json"))
    with open(os.path.join(cfg.out, "config.sha256"), "w") as fh:
        fh.write(cfg.digest() + "\n")

    env = make_env(cfg)
    eval_env = make_env(cfg)
    agent = SafeDQNAgent(env.observation_dim, env.action_count, cfg.agent_config(),
                         seed=derive_seed(cfg.seed, "agent_init"))
    extra = {"scenario": cfg.scenario, "time_limit": cfg.time_limit, "config_sha256": cfg.digest()}
    log = MetricLog(os.path.join(cfg.out, "metrics.csv"))
    eval_path = os.path.join(cfg.out, "eval.csv")
    with open(eval_path, "w") as fh:
        fh.write(",".join(EVAL_COLUMNS) + "\n")
    evals: list[dict] = []
    best = [float("-inf")]

    def on_step(t):
        if cfg.eval_episodes == 0 or t % cfg.eval_every:
            return
        summary = evaluate(agent.policy(), eval_env, cfg.eval_episodes,
                           derive_seed(cfg.seed, "eval_round", t), max_steps=cfg.time_limit)
        row = {"step": t, "mean_return": summary.mean_return, "crash_rate": summary.crash_rate,
               "episodes": cfg.eval_episodes}
        evals.append(row)
        with open(eval_path, "a") as fh:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row.values()) + "\n")
        if summary.mean_return > best[0]:
            best[0] = summary.mean_return
            agent.save(os.path.join(cfg.out, "best.npz"), extra)

    result = run_training(agent, env, cfg.total_steps, derive_seed(cfg.seed, "train"), log, on_step=on_step)
    agent.save(os.path.join(cfg.out, "latest.npz"), extra)
    return TrainOutput(cfg.out, agent, result, evals)


def cmd_eval(checkpoint, scenario=None, episodes=100, seed=0, out=None, time_limit=None):
    """Greedy evaluation; returns the summary dict (crash rate in percent)."""
    if episodes < 1:
        raise CliError("usage", "episodes must be >= 1")
    agent = _load_agent(checkpoint)
    scenario = scenario or agent.extra.get("scenario")
    time_limit = time_limit or int(agent.extra.get("time_limit", 500))
    if scenario not in SCENARIOS:
        raise CliError("config", f"scenario: unknown tag {scenario!r}")
    env = TrafficEnv(scenario, sim=SimConfig(time_limit=time_limit))
    _check_agent_env(agent, env)
    summary = evaluate(agent.policy(), env, episodes, derive_seed(seed, "cmd_eval"), max_steps=time_limit)
    result = {"scenario": scenario, "episodes": episodes, "mean_return": summary.mean_return,
              "crash_rate": summary.crash_rate, "seed": seed}
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "episodes.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["episode", "seed", "return", "cost", "length", "outcome"])
            w.writeheader()
            for row in summary.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
    return result


def cmd_explain(checkpoint, scenario=None, seed=0, step_range=None, out=None, threshold_t=0.5,
                ig_steps=64, time_limit=None):
    """Greedy rollout with per-step per-car IG saliency and a cost classification report."""
    agent = _load_agent(checkpoint)
    if not agent.has_risk:
        raise CliError("checkpoint", f"{agent.algorithm} checkpoint has no risk estimator to explain")
    scenario = scenario or agent.extra.get("scenario")
    time_limit = time_limit or int(agent.extra.get("time_limit", 500))
    if scenario not in SCENARIOS:
        raise CliError("config", f"scenario: unknown tag {scenario!r}")
    env = TrafficEnv(scenario, sim=SimConfig(time_limit=time_limit), record_trace=True)
    _check_agent_env(agent, env)
    ep = rollout(env, agent.policy(), time_limit, derive_seed(seed, "cmd_explain"))

    n = len(ep)
    lo, hi = step_range if step_range is not None else (0, n)
    clipped = 0
    if lo < 0:
        lo, clipped = 0, clipped + 1
    if hi > n:
        hi, clipped = n, clipped + 1
    if lo > hi:
        lo, clipped = hi, clipped + 1

    rows = []
    for t in range(lo, hi):
        rep = integrated_gradients(agent.qc_net, ep.transitions[t].obs, steps=ig_steps, layout=env.layout)
        rows.extend((t, slot, sal) for slot, sal in enumerate(rep.per_car))
    report = cost_recall_precision(agent.qc_net, ep.transitions, threshold_t)
    summary = {
        "scenario": scenario, "episode_length": n, "outcome": ep.outcome, "steps_explained": [lo, hi],
        "clipped_warnings": clipped, "threshold": report.threshold, "cost_recall": report.cost_recall,
        "cost_precision": report.cost_precision, "ig_steps": ig_steps,
    }
    if out:
        os.makedirs(out, exist_ok=True)
        write_saliency_csv(os.path.join(out, "saliency.csv"), rows)
        write_classification_csv(os.path.join(out, "classification.csv"), {os.path.basename(checkpoint): report})
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        with open(os.path.join(out, "trace.jsonl"), "w") as fh:
            for rec in env.trace:
                fh.write(json.dumps(rec) + "\n")
    return summary, rows, report


def _parse_range(text):
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("step range must look like START:END") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safedqn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--scenario")
    t.add_argument("--algo")
    t.add_argument("--steps", type=int)
    t.add_argument("--out")
    t.add_argument("--threshold-t", type=float)
    t.add_argument("--ig-steps", type=int)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set lambda_lr=2")

    e = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")

    x = sub.add_parser("explain", help="integrated-gradients risk saliency for a rollout")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--scenario")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--steps", type=_parse_range, metavar="START:END")
    x.add_argument("--out")
    x.add_argument("--threshold-t", type=float, default=0.5)
    x.add_argument("--ig-steps", type=int, default=64)
    return p


def _train_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed, "scenario": args.scenario, "algorithm": args.algo,
                 "total_steps": args.steps, "out": args.out, "threshold_t": args.threshold_t,
                 "ig_steps": args.ig_steps}
    for item in args.set:
        if "=" not in item:
            raise ConfigError([f"--set {item!r}: expected KEY=VALUE"])
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return cfg.override(**overrides).check()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            out = cmd_train(_train_config(args))
            last = out.evals[-1] if out.evals else {}
            print(json.dumps({"run_dir": out.run_dir, "episodes": out.result.episodes, "last_eval": last}))
        elif args.command == "eval":
            print(json.dumps(cmd_eval(args.checkpoint, args.scenario, args.episodes, args.seed, args.out)))
        else:
            if args.threshold_t <= 0 or args.ig_steps < 1:
                raise CliError("usage", "--threshold-t must be positive and --ig-steps >= 1")
            summary, _, _ = cmd_explain(args.checkpoint, args.scenario, args.seed, args.steps, args.out,
                                        args.threshold_t, args.ig_steps)
            print(json.dumps(summary))
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]
    except Exception as exc:  # noqa: BLE001
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES["runtime"]
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
