"""Candidate construction and the KL-constrained logit update.

The decision distribution is softmax(z + beta * normalized advantage), which
is the exact maximizer of expected advantage minus (1/beta) times the KL
divergence from the base policy — verified numerically against the grid
oracle in memsteer.oracle. Memory can inject actions the proposer missed;
those start from a neutral zero logit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from memsteer.memory import ActionNormalizer, IDENTITY_NORMALIZER, Neighborhood

PROPOSER = "proposer"
MEMORY_ONLY = "memory_only"


@dataclass
class Candidate:
    action: str
    base_logit: float
    origin: str = PROPOSER  # proposer | memory_only
    normalized_advantage: float | None = None
    updated_logit: float | None = None

    def effective_logit(self) -> float:
        return self.base_logit if self.updated_logit is None else self.updated_logit


@dataclass
class Decision:
    """Everything needed to replay one sampled choice."""

    candidates: list[Candidate]
    distribution: np.ndarray
    chosen: int
    beta: float
    rng_state: dict = field(default_factory=dict, repr=False)

    @property
    def action(self) -> str:
        return self.candidates[self.chosen].action


def augment_candidates(proposed: Sequence[tuple[str, float]],
                       neighborhood: Neighborhood | Iterable[str] | None,
                       normalizer: ActionNormalizer = IDENTITY_NORMALIZER) -> list[Candidate]:
    """Union of proposer candidates and neighborhood actions.

    Keyed by normalized action text. Proposer duplicates are merged keeping
    the maximum base logit; actions found only in memory are appended with a
    neutral zero logit and never override a proposer logit.
    """
    memory_actions: list[str]
    if neighborhood is None:
        memory_actions = []
    elif isinstance(neighborhood, Neighborhood):
        memory_actions = neighborhood.actions()
    else:
        memory_actions = list(neighborhood)
    if not proposed and not memory_actions:
        raise ValueError("no candidates: proposer and memory are both empty")

    out: list[Candidate] = []
    index: dict[str, int] = {}
    for action, logit in proposed:
        key = normalizer(action)
        if key in index:
            cand = out[index[key]]
            cand.base_logit = max(cand.base_logit, float(logit))
        else:
            index[key] = len(out)
            out.append(Candidate(action=action, base_logit=float(logit), origin=PROPOSER))
    for action in memory_actions:
        key = normalizer(action)
        if key not in index:
            index[key] = len(out)
            out.append(Candidate(action=action, base_logit=0.0, origin=MEMORY_ONLY))
    return out


def logit_update(candidates: Sequence[Candidate], beta: float) -> Sequence[Candidate]:
    """Additive update z' = z + beta * normalized advantage, in place."""
    for cand in candidates:
        if cand.normalized_advantage is None:
            raise ValueError(f"candidate {cand.action!r} has no advantage")
        cand.updated_logit = cand.base_logit + beta * cand.normalized_advantage
    return candidates


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max subtraction, no clipping)."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_sample(candidates: Sequence[Candidate], rng: np.random.Generator,
                   beta: float = 0.0) -> Decision:
    """Sample one candidate from the softmax of the effective logits."""
    if not candidates:
        raise ValueError("cannot sample from an empty candidate list")
    logits = np.array([c.effective_logit() for c in candidates], dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError(f"non-finite logit among {logits.tolist()}")
    rng_state = rng.bit_generator.state
    distribution = softmax(logits)
    u = rng.random()
    chosen = int(np.searchsorted(np.cumsum(distribution), u, side="right"))
    chosen = min(chosen, len(candidates) - 1)
    return Decision(candidates=list(candidates), distribution=distribution,
                    chosen=chosen, beta=beta, rng_state=rng_state)


def kl_objective(pi_prime: np.ndarray, pi_theta: np.ndarray,
                 advantages: np.ndarray, beta: float) -> float:
    """Expected advantage under pi_prime minus (1/beta) * KL(pi_prime || pi_theta).

    Terms with pi_prime = 0 contribute nothing (0 * log 0 == 0); a positive
    pi_prime mass where pi_theta is zero makes the divergence undefined and
    raises.
    """
    p = np.asarray(pi_prime, dtype=np.float64)
    q = np.asarray(pi_theta, dtype=np.float64)
    a = np.asarray(advantages, dtype=np.float64)
    if p.shape != q.shape or p.shape != a.shape:
        raise ValueError("distribution/advantage shapes disagree")
    if beta <= 0.0:
        raise ValueError("beta must be > 0")
    if np.any((q == 0.0) & (p > 0.0)):
        raise ValueError("KL divergence undefined: pi_prime puts mass where pi_theta is zero")
    support = p > 0.0
    gain = float(np.dot(p, a))
    kl = float(np.sum(p[support] * np.log(p[support] / q[support])))
    return gain - kl / beta


def base_distribution(candidates: Sequence[Candidate]) -> np.ndarray:
    """Softmax of the base logits (the unmodified proposer policy)."""
    return softmax(np.array([c.base_logit for c in candidates], dtype=np.float64))


def check_distribution(dist: np.ndarray, tol: float = 1e-12) -> None:
    if abs(float(dist.sum()) - 1.0) > tol:
        raise AssertionError(f"distribution sums to {dist.sum()!r}")
