"""Desk-scale environments with exact ground truth.

``tabular`` holds a small stochastic MDP family (the substrate for the
convergence experiments), ``textgame`` a deterministic key-door micro-game
driven by a declarative config, and ``abstraction`` the observation-to-state
mapping shared by both.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Observation:
    """What an environment shows the agent after each step."""

    text: str
    score: float
    done: bool
    valid_actions: list[str] = field(default_factory=list)


from memsteer.envs.tabular import TabularMDP, mdp_step  # noqa: E402
from memsteer.envs.textgame import TextMicroGame  # noqa: E402

__all__ = ["Observation", "TabularMDP", "TextMicroGame", "mdp_step"]
