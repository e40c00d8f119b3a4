"""Risk-estimator diagnostics: cost recall/precision and integrated gradients."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .replay import ReplayBuffer
from .traffic.world import ObservationLayout


@dataclass
class RiskClassificationReport:
    """Confusion counts of ``Q_C(s, a) > t`` against the immediate cost label.

    ``cost_recall`` / ``cost_precision`` are ``None`` when their denominator is 0.
    """

    threshold: float
    tp: int  # c = 1, Q_C > t
    fn: int  # c = 1, Q_C <= t
    fp: int  # c = 0, Q_C > t
    tn: int  # c = 0, Q_C <= t

    @property
    def cost_recall(self) -> float | None:
        denom = self.tp + self.fn
        return self.tp / denom if denom else None

    @property
    def cost_precision(self) -> float | None:
        denom = self.tp + self.fp
        return self.tp / denom if denom else None

    def as_row(self) -> dict:
        return {
            "threshold": self.threshold, "tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn,
            "cost_recall": "" if self.cost_recall is None else self.cost_recall,
            "cost_precision": "" if self.cost_precision is None else self.cost_precision,
        }


def classify_scores(scores, costs, threshold: float) -> RiskClassificationReport:
    scores = np.asarray(scores, dtype=np.float64)
    label = np.asarray(costs, dtype=np.float64) == 1.0
    high = scores > threshold
    return RiskClassificationReport(
        float(threshold),
        tp=int(np.sum(label & high)),
        fn=int(np.sum(label & ~high)),
        fp=int(np.sum(~label & high)),
        tn=int(np.sum(~label & ~high)),
    )


def cost_recall_precision(qc_net: nn.Network, transitions, threshold: float = 0.5,
                          batch: int = 4096) -> RiskClassificationReport:
    """Score every (obs, action) with the risk network and classify at ``threshold``.

    ``transitions`` is a :class:`ReplayBuffer` (scored in full) or a sequence of
    objects with ``obs``, ``action`` and ``cost``.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if isinstance(transitions, ReplayBuffer):
        order = (np.arange(transitions.size) + transitions.cursor - transitions.size) % transitions.capacity
        obs = transitions.obs[order]
        actions = transitions.action[order]
        costs = transitions.cost[order]
    else:
        transitions = list(transitions)
        if not transitions:
            return RiskClassificationReport(float(threshold), 0, 0, 0, 0)
        obs = np.array([t.obs for t in transitions], dtype=np.float64)
        actions = np.array([t.action for t in transitions], dtype=np.int64)
        costs = np.array([t.cost for t in transitions], dtype=np.float64)
    scores = np.empty(len(actions))
    for start in range(0, len(actions), batch):
        q = nn.forward(qc_net, obs[start : start + batch])
        scores[start : start + batch] = q[np.arange(len(q)), actions[start : start + batch]]
    return classify_scores(scores, costs, threshold)


@dataclass
class AttributionReport:
    attributions: np.ndarray
    value: float  # F(x)
    baseline_value: float  # F(x0)
    steps: int
    per_car: list[float] = field(default_factory=list)
    ego: float = 0.0

    @property
    def completeness_residual(self) -> float:
        return abs(float(self.attributions.sum()) - (self.value - self.baseline_value))


def integrated_gradients(net: nn.Network, x, baseline=None, steps: int = 64, output: int | None = None,
                         layout: ObservationLayout | None = None) -> AttributionReport:
    """Midpoint-rule integrated gradients of ``F = sum_a net(x)[a]``.

    ``output`` selects a single action's estimate instead of the sum. The
    baseline defaults to the zero vector.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    x0 = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if x.shape != x0.shape or x.shape != (net.input_dim,):
        raise ValueError("input and baseline must both have the network's input length")
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    path = x0[None, :] + alphas[:, None] * (x - x0)[None, :]
    w = np.zeros((steps, net.output_dim))
    if output is None:
        w[:] = 1.0
    else:
        w[:, output] = 1.0
    grads = nn.backward(net, path, w, want_input_grad=True).input_grad
    attr = (x - x0) * grads.mean(axis=0)

    def F(v):
        out = nn.forward(net, v)
        return float(out.sum() if output is None else out[output])

    report = AttributionReport(attr, F(x), F(x0), steps)
    if layout is not None:
        report.per_car = [s for _, s in per_car_saliency(report, layout)]
        report.ego = float(attr[layout.ego_slice].sum())
    return report


def per_car_saliency(report, layout: ObservationLayout) -> list[tuple[int, float]]:
    """Sum of each vehicle block's attributions, one entry per slot."""
    attr = report.attributions if isinstance(report, AttributionReport) else np.asarray(report)
    if attr.shape != (layout.dim,):
        raise ValueError(f"attribution length {attr.shape} does not match layout dim {layout.dim}")
    return [(k, float(sum(attr[layout.vehicle_slice(k)].tolist()))) for k in range(layout.k_vehicles)]


def write_classification_csv(path, reports: dict[str, RiskClassificationReport]) -> None:
    cols = ["checkpoint", "threshold", "tp", "fn", "fp", "tn", "cost_recall", "cost_precision"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for name, rep in reports.items():
            w.writerow({"checkpoint": name, **rep.as_row()})


def write_saliency_csv(path, rows) -> None:
    """``rows`` of (step, car_slot, saliency)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "car_slot", "saliency"])
        for step, slot, sal in rows:
            w.writerow([step, slot, repr(float(sal))])
