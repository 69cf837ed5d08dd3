"""Engine configuration: validated hyperparameters with environment profiles.

Two built-in profiles carry the published defaults: ``text-game`` (discount
0.5, 10 neighbors, similarity threshold 0.95, exploration rate 0.65, bonus 5,
step limit 60) and ``web`` (discount 0.1, threshold 0.8, exploration rate
0.05, step limit 10, plus the cross-task retrieval knobs). The logit-update
strength ``beta`` has no published default and must always be given
explicitly.

Config files are JSON objects with exactly these field names; command-line
flags override file values.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

PROFILES = ("text-game", "web")


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


@dataclass
class EngineConfig:
    beta: float                          # logit-update strength (no default; see module doc)
    gamma: float = 0.5                   # return discount
    k_neighbors: int = 10                # retrieval neighborhood size
    similarity_threshold: float = 0.95   # minimum retrieval similarity
    exploration_rate: float = 0.65       # chance an unseen action gets the optimistic value
    exploration_bonus: float = 5.0       # optimistic bonus scale (divided by |neighborhood|)
    epsilon: float = 1e-8                # advantage normalization stabilizer
    n_candidates: int = 3                # proposer candidate count
    temperature: float = 0.8             # proposer sampling temperature
    step_limit: int = 60                 # per-episode step cap
    episodes: int = 50                   # sequential episodes per experiment
    seed: int = 0                        # root seed for all generator streams
    history_length: int = 3              # actions kept in the history text
    terminal_bonus: float = 0.0          # extra final reward on success
    memory_scope: str = "global"         # "global" or "per-task"
    memory_capacity: int | None = None   # None = unbounded, else FIFO cap
    state_weight: float = 0.75           # state share of retrieval similarity
    history_weight: float = 0.25         # history share of retrieval similarity
    task_similarity_threshold: float | None = None   # cross-task gate (web profile)
    cross_task_history_weight: float = 0.7
    cross_task_task_weight: float = 0.3
    action_rules: list = field(default_factory=list)  # [[pattern, replacement], ...]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.beta, (int, float)) or not math.isfinite(self.beta):
            raise ConfigError(f"beta must be a finite number, got {self.beta!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ConfigError(f"similarity_threshold must lie in [0, 1], "
                              f"got {self.similarity_threshold}")
        if not 0.0 <= self.exploration_rate <= 1.0:
            raise ConfigError(f"exploration_rate must lie in [0, 1], "
                              f"got {self.exploration_rate}")
        if self.exploration_bonus < 0.0:
            raise ConfigError(f"exploration_bonus must be >= 0, got {self.exploration_bonus}")
        if self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.n_candidates < 1:
            raise ConfigError(f"n_candidates must be >= 1, got {self.n_candidates}")
        if self.temperature < 0.0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.step_limit < 1:
            raise ConfigError(f"step_limit must be >= 1, got {self.step_limit}")
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        if self.history_length < 0:
            raise ConfigError(f"history_length must be >= 0, got {self.history_length}")
        if self.memory_scope not in ("global", "per-task"):
            raise ConfigError(f"memory_scope must be 'global' or 'per-task', "
                              f"got {self.memory_scope!r}")
        if self.memory_capacity is not None and self.memory_capacity < 1:
            raise ConfigError(f"memory_capacity must be None or >= 1, "
                              f"got {self.memory_capacity}")
        for name in ("state_weight", "history_weight",
                     "cross_task_history_weight", "cross_task_task_weight"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.task_similarity_threshold is not None \
                and not 0.0 <= self.task_similarity_threshold <= 1.0:
            raise ConfigError(f"task_similarity_threshold must lie in [0, 1], "
                              f"got {self.task_similarity_threshold}")
        for rule in self.action_rules:
            if (not isinstance(rule, (list, tuple)) or len(rule) != 2
                    or not all(isinstance(p, str) for p in rule)):
                raise ConfigError(f"action rule must be [pattern, replacement], got {rule!r}")

    # -- profiles -----------------------------------------------------------

    @classmethod
    def text_game_profile(cls, beta: float, **overrides) -> "EngineConfig":
        """Defaults for score-based text games."""
        base = dict(gamma=0.5, k_neighbors=10, similarity_threshold=0.95,
                    exploration_rate=0.65, exploration_bonus=5.0,
                    temperature=0.8, n_candidates=3, step_limit=60, episodes=50)
        base.update(overrides)
        return cls(beta=beta, **base)

    @classmethod
    def web_profile(cls, beta: float, **overrides) -> "EngineConfig":
        """Defaults for success-based web navigation tasks."""
        base = dict(gamma=0.1, k_neighbors=10, similarity_threshold=0.8,
                    exploration_rate=0.05, exploration_bonus=5.0,
                    temperature=0.8, n_candidates=3, step_limit=10, episodes=50,
                    seed=0, task_similarity_threshold=0.27,
                    cross_task_history_weight=0.7, cross_task_task_weight=0.3)
        base.update(overrides)
        return cls(beta=beta, **base)

    @classmethod
    def profile(cls, name: str, beta: float, **overrides) -> "EngineConfig":
        if name == "text-game":
            return cls.text_game_profile(beta, **overrides)
        if name == "web":
            return cls.web_profile(beta, **overrides)
        raise ConfigError(f"unknown profile {name!r}; choose from {PROFILES}")

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "EngineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "beta" not in raw:
            raise ConfigError("config must set beta explicitly (it has no default)")
        return cls(**raw)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, **overrides) -> "EngineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        raw.update(overrides)
        return cls.from_dict(raw)
