"""Retrieval-based value and advantage estimation.

Given a neighborhood of similar past experiences, the state value is the mean
stored return, a candidate action's value is the mean over the subset sharing
that action, and actions with no historical evidence get an optimistic value
(state value plus a bonus that shrinks as the neighborhood grows) with
probability ``exploration_rate``, else a neutral zero. Advantages center the
action values on the state value and are rescaled into [-1, 1] before they
touch any logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from memsteer.memory import ActionNormalizer, IDENTITY_NORMALIZER, Neighborhood, filter_by_action

KNOWN = "known"
EXPLORED = "explored"
NEUTRAL = "neutral"


class EmptyNeighborhoodError(ValueError):
    """No retrieved evidence: there is no estimate, fall back to the base policy."""


@dataclass(frozen=True)
class ActionValue:
    q: float
    count: int
    source: str  # known | explored | neutral


@dataclass
class ValueEstimate:
    v: float
    per_action: dict[str, ActionValue]
    neighborhood_size: int


@dataclass
class AdvantageVector:
    raw: dict[str, float]
    normalized: dict[str, float]
    epsilon: float


def state_value(neighborhood: Neighborhood) -> float:
    """Mean return across the neighborhood."""
    if not neighborhood.entries:
        raise EmptyNeighborhoodError("cannot estimate a state value from an empty neighborhood")
    returns = neighborhood.returns()
    return sum(returns) / len(returns)


def action_value(neighborhood: Neighborhood, action: str, v: float,
                 exploration_rate: float, exploration_bonus: float,
                 rng: np.random.Generator,
                 normalizer: ActionNormalizer = IDENTITY_NORMALIZER) -> ActionValue:
    """Value of one candidate action.

    Seen actions average the returns of their subset. Unseen actions draw
    once from ``rng``: with probability ``exploration_rate`` they get the
    optimistic value ``v + exploration_bonus / |neighborhood|``, otherwise a
    neutral zero.
    """
    if not 0.0 <= exploration_rate <= 1.0:
        raise ValueError("exploration_rate must lie in [0, 1]")
    if exploration_bonus < 0.0:
        raise ValueError("exploration_bonus must be >= 0")
    if not neighborhood.entries:
        raise EmptyNeighborhoodError("cannot estimate an action value from an empty neighborhood")
    subset = filter_by_action(neighborhood, action, normalizer)
    if subset.entries:
        returns = subset.returns()
        return ActionValue(q=sum(returns) / len(returns), count=len(returns), source=KNOWN)
    if rng.random() < exploration_rate:
        return ActionValue(q=v + exploration_bonus / len(neighborhood), count=0, source=EXPLORED)
    return ActionValue(q=0.0, count=0, source=NEUTRAL)


def estimate_candidates(neighborhood: Neighborhood, actions: Iterable[str],
                        exploration_rate: float, exploration_bonus: float,
                        rng: np.random.Generator,
                        normalizer: ActionNormalizer = IDENTITY_NORMALIZER) -> ValueEstimate:
    """Per-candidate action values around the neighborhood's state value.

    One independent exploration draw is taken per unseen action, in candidate
    order, so results are reproducible given the generator state.
    """
    v = state_value(neighborhood)
    per_action: dict[str, ActionValue] = {}
    for action in actions:
        if action in per_action:
            continue
        per_action[action] = action_value(neighborhood, action, v, exploration_rate,
                                          exploration_bonus, rng, normalizer)
    if not per_action:
        raise ValueError("no candidate actions to estimate")
    return ValueEstimate(v=v, per_action=per_action,
                         neighborhood_size=len(neighborhood))


def advantages(estimate: ValueEstimate) -> dict[str, float]:
    """Center each action value against the state baseline."""
    return {action: av.q - estimate.v for action, av in estimate.per_action.items()}


def normalize_advantages(raw: Mapping[str, float], epsilon: float = 1e-8) -> dict[str, float]:
    """Rescale by the largest magnitude (plus epsilon) so values lie in [-1, 1].

    All-zero input stays all zero; the scaling is positive, so argmax order
    is preserved.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0")
    if not raw:
        return {}
    peak = max(abs(value) for value in raw.values())
    denom = peak + epsilon
    return {action: value / denom for action, value in raw.items()}


def advantage_vector(estimate: ValueEstimate, epsilon: float = 1e-8) -> AdvantageVector:
    raw = advantages(estimate)
    return AdvantageVector(raw=raw, normalized=normalize_advantages(raw, epsilon),
                           epsilon=epsilon)
