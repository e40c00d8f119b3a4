"""Run configuration: a flat key/value JSON document.

Every :class:`AgentConfig` field is a top-level key next to the run-level
keys below. Unknown keys are rejected; all problems are reported at once.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .agent import AgentConfig
from .traffic.scenarios import SCENARIOS


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class RunConfig(AgentConfig):
    scenario: str = "left_turn"
    seed: int = 0
    total_steps: int = 2_000_000
    eval_every: int = 10_000
    eval_episodes: int = 100
    out: str = "runs/default"
    threshold_t: float = 0.5
    ig_steps: int = 64
    time_limit: int = 500
    scenario_params: str | None = None  # optional path to a scenario parameter JSON file

    def agent_config(self) -> AgentConfig:
        names = {f.name for f in dataclasses.fields(AgentConfig)}
        return AgentConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def validate(self) -> list[str]:
        errs = super().validate()
        if self.scenario not in SCENARIOS:
            errs.append(f"scenario: unknown tag {self.scenario!r}; expected one of {SCENARIOS}")
        for name in ("total_steps", "eval_every", "ig_steps", "time_limit"):
            if getattr(self, name) < 1:
                errs.append(f"{name}: must be >= 1")
        if self.eval_episodes < 0:
            errs.append("eval_episodes: must be >= 0")
        if not self.threshold_t > 0:
            errs.append("threshold_t: must be positive")
        return errs

    def check(self) -> "RunConfig":
        errs = self.validate()
        if errs:
            raise ConfigError(errs)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.canonical_json() + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        errs = [f"{k}: unknown configuration key" for k in d if k not in fields]
        kwargs = {}
        for k, v in d.items():
            if k not in fields:
                continue
            default = getattr(cls, k, None) if k != "hidden" else ()
            try:
                kwargs[k] = _coerce(v, default, k)
            except (TypeError, ValueError) as exc:
                errs.append(f"{k}: {exc}")
        cfg = cls(**kwargs)
        errs += cfg.validate()
        if errs:
            raise ConfigError(errs)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config file {path}: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigError([f"config file {path}: top level must be an object"])
        return cls.from_dict(data)

    def override(self, **values) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in values.items() if v is not None})
        return RunConfig.from_dict(d)


def _coerce(value, default, name):
    """Convert ``value`` (possibly a string from the command line) to the field's type."""
    if name == "hidden":
        if isinstance(value, str):
            value = [int(v) for v in value.replace(",", " ").split()] if value.strip() else []
        return tuple(int(v) for v in value)
    if name == "scenario_params":
        return None if value in (None, "", "none") else str(value)
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes")
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(float(value)) if isinstance(value, str) else int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)
