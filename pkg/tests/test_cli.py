import json

import numpy as np
import pytest

from safedqn import cli
from safedqn.agent import AgentConfig, SafeDQNAgent
from safedqn.config import ConfigError, RunConfig

FAST = ["--set", "hidden=16", "--set", "learning_starts=100", "--set", "fully_random_steps=200",
        "--set", "epsilon_decay_steps=400", "--set", "eval_every=600", "--set", "eval_episodes=2",
        "--set", "time_limit=60", "--set", "target_update_interval=200", "--set", "lambda_update_frequency=200"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "a"
    rc = cli.main(["train", "--scenario", "left_turn", "--steps", "1200", "--seed", "3", "--out", str(out), *FAST])
    assert rc == 0
    return out


def test_config_defaults_and_round_trip(tmp_path):
    cfg = RunConfig()
    assert cfg.agent_config() == AgentConfig()
    cfg = cfg.override(seed=4, lambda_lr="2.5", hidden="32,32")
    cfg.dump(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg and back.digest() == cfg.digest()
    assert back.hidden == (32, 32) and back.lambda_lr == 2.5


def test_config_errors_listed_together(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"scenario": "moon", "gamma": 3, "colour": "red"}))
    with pytest.raises(ConfigError) as exc:
        RunConfig.load(tmp_path / "bad.json")
    msg = str(exc.value)
    assert "scenario" in msg and "gamma" in msg and "colour" in msg
    assert len(exc.value.problems) == 3


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"metrics.csv", "eval.csv", "config.json", "config.sha256", "latest.npz", "best.npz"} <= names
    header = (trained / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,episode,return,episode_cost,lambda,epsilon,q_loss,qc_loss"
    cfg = RunConfig.load(trained / "config.json")
    assert cfg.digest() == (trained / "config.sha256").read_text().strip()
    assert SafeDQNAgent.load(trained / "latest.npz").extra["config_sha256"] == cfg.digest()


def test_train_and_eval_deterministic(trained, tmp_path):
    again = tmp_path / "b"
    assert cli.main(["train", "--config", str(trained / "config.json"), "--out", str(again)]) == 0
    for name in ("metrics.csv", "eval.csv"):
        assert (trained / name).read_bytes() == (again / name).read_bytes()
    e1, e2 = tmp_path / "e1", tmp_path / "e2"
    for e in (e1, e2):
        assert cli.main(["eval", "--checkpoint", str(trained / "latest.npz"), "--episodes", "3",
                         "--out", str(e)]) == 0
    assert (e1 / "episodes.csv").read_bytes() == (e2 / "episodes.csv").read_bytes()


def test_eval_summary(trained):
    res = cli.cmd_eval(trained / "latest.npz", episodes=4, seed=1)
    assert res["scenario"] == "left_turn" and res["episodes"] == 4
    assert res["crash_rate"] in {0.0, 25.0, 50.0, 75.0, 100.0}


def test_eval_rejects_zero_episodes(trained, capsys):
    assert cli.main(["eval", "--checkpoint", str(trained / "latest.npz"), "--episodes", "0"]) != 0
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: usage:") and "\n" not in err


def test_architecture_mismatch(trained, tmp_path):
    ag = SafeDQNAgent(10, 9, AgentConfig(hidden=(4,)))
    ag.save(tmp_path / "odd.npz", {"scenario": "left_turn"})
    with pytest.raises(cli.CliError, match="mismatch"):
        cli.cmd_eval(tmp_path / "odd.npz", episodes=1)


def test_missing_or_corrupt_checkpoint(tmp_path, capsys):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.npz")]) == cli.EXIT_CODES["checkpoint"]
    (tmp_path / "junk.npz").write_bytes(b"junk")
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "junk.npz")]) == cli.EXIT_CODES["checkpoint"]
    lines = capsys.readouterr().err.strip().splitlines()
    assert all(line.startswith("error: checkpoint:") for line in lines)


def test_unknown_scenario_is_config_error(tmp_path, capsys):
    assert cli.main(["train", "--scenario", "moon", "--out", str(tmp_path)]) == cli.EXIT_CODES["config"]
    assert "scenario" in capsys.readouterr().err


def test_explain_outputs_and_clipping(trained, tmp_path):
    out = tmp_path / "x"
    summary, rows, report = cli.cmd_explain(trained / "latest.npz", seed=0, step_range=(-5, 10_000), out=out,
                                            threshold_t=0.25, ig_steps=8)
    assert summary["clipped_warnings"] == 2
    assert summary["steps_explained"] == [0, summary["episode_length"]]
    assert summary["threshold"] == 0.25 == report.threshold
    assert len(rows) == 8 * summary["episode_length"]
    cls = (out / "classification.csv").read_text().splitlines()
    assert cls[1].split(",")[1] == "0.25"
    assert (out / "saliency.csv").read_text().startswith("step,car_slot,saliency")


def test_explain_rejects_shaped_baseline(tmp_path, capsys):
    env = cli.make_env(RunConfig())
    ag = SafeDQNAgent(env.observation_dim, env.action_count, AgentConfig(algorithm="dqn_shaped", hidden=(4,)))
    ag.save(tmp_path / "dqn.npz", {"scenario": "left_turn"})
    assert cli.main(["explain", "--checkpoint", str(tmp_path / "dqn.npz")]) != 0
    assert "no risk estimator" in capsys.readouterr().err


def test_explain_empty_scene_has_zero_saliency(tmp_path, monkeypatch):
    env = cli.make_env(RunConfig())
    ag = SafeDQNAgent(env.observation_dim, env.action_count, AgentConfig(hidden=(8,)), seed=1)
    ag.save(tmp_path / "a.npz", {"scenario": "highway_drive", "time_limit": 20})
    quiet = cli.SimConfig(traffic=False, time_limit=20)
    monkeypatch.setattr(cli, "SimConfig", lambda **kw: quiet)
    _, rows, _ = cli.cmd_explain(tmp_path / "a.npz", ig_steps=4)
    assert rows and all(sal == 0.0 for _, _, sal in rows)


def test_standstill_checkpoint_on_merge_is_safe(tmp_path):
    # an agent whose greedy action is always TargetSpeed_0
    env = cli.make_env(RunConfig(scenario="highway_merge"))
    ag = SafeDQNAgent(env.observation_dim, env.action_count, AgentConfig(hidden=()), seed=0)
    ag.q_net.layers[0].weight[:] = 0.0
    ag.q_net.layers[0].bias[:] = np.eye(env.action_count)[3]
    ag.qc_net.layers[0].weight[:] = 0.0
    ag.save(tmp_path / "still.npz", {"scenario": "highway_merge"})
    res = cli.cmd_eval(tmp_path / "still.npz", episodes=5)
    assert res["crash_rate"] == 0.0 and abs(res["mean_return"]) < 1e-9
