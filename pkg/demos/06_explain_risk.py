"""Which cars does the risk estimator attend to? Integrated gradients per car.

Trains a short SafeDQN run through the command-line entry points, then
explains one greedy rollout.
"""

# %%
import csv
import tempfile
from collections import defaultdict
from pathlib import Path

from safedqn import cli
from safedqn.config import RunConfig

out = Path(tempfile.mkdtemp()) / "run"
cfg = RunConfig(scenario="left_turn", total_steps=20_000, eval_every=10_000, eval_episodes=5,
                fully_random_steps=2_000, epsilon_decay_steps=10_000, out=str(out))
cli.cmd_train(cfg)
print("run directory:", sorted(p.name for p in out.iterdir()))

# %% Per-step, per-car saliency of the summed risk estimate over a greedy rollout
summary, rows, report = cli.cmd_explain(out / "latest.npz", seed=0, out=str(out / "explain"), ig_steps=32)
print("rollout:", summary["outcome"], "after", summary["episode_length"], "steps")
print("classification at t =", report.threshold, "->", report.as_row())

# %% Which slot carries the most risk mass over the episode?
totals = defaultdict(float)
with open(out / "explain" / "saliency.csv") as fh:
    for row in csv.DictReader(fh):
        totals[int(row["car_slot"])] += abs(float(row["saliency"]))
for slot, mass in sorted(totals.items()):
    print(f"slot {slot} (k-th nearest car): {mass:8.3f}")
