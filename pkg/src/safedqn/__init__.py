"""SafeDQN: constrained deep Q-learning with a learned risk estimator.

Pure numpy. The main entry points are :class:`SafeDQNAgent`,
:func:`run_training`, :class:`TrafficEnv` and the analysis helpers.
"""

from .agent import AgentConfig, EvalSummary, SafeDQNAgent, evaluate, run_training
from .analysis import cost_recall_precision, integrated_gradients
from .cmdp import ChainCMDP, StepOutcome, Transition, rollout
from .replay import ReplayBuffer
from .traffic import SCENARIOS, TrafficEnv

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "ChainCMDP", "EvalSummary", "ReplayBuffer", "SCENARIOS", "SafeDQNAgent",
    "StepOutcome", "TrafficEnv", "Transition", "cost_recall_precision", "evaluate",
    "integrated_gradients", "rollout", "run_training",
]
