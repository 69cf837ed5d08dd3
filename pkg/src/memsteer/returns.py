"""Per-step rewards and discounted returns for completed trajectories.

Two evaluator implementations produce step rewards: one reads the
simulator's per-step score deltas directly (exact, used at desk scale), the
other sends the transcript to a chat-completion endpoint and parses a
structured per-step score list (integers clamped to [-3, 3]). Returns are
then the standard discounted tail sums, computed by backward recursion.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

from memsteer.memory import StateKey

log = logging.getLogger(__name__)

SCORE_MIN, SCORE_MAX = -3, 3

STEP_SCORING_INSTRUCTION = (
    "You are scoring each step of a completed agent episode. For every step, "
    "judge whether the action helped or hurt progress toward the task and how "
    "certain you are, then assign an integer score from -3 (clearly harmful, "
    "certain) through 0 (no effect or unclear) to +3 (clearly helpful, certain). "
    'Respond with JSON only: {"steps": [{"step": <index from 0>, '
    '"action": <the action>, "score": <integer>}]} with exactly one item per step.'
)


@dataclass(frozen=True)
class TrajectoryStep:
    state: StateKey
    action: str
    observation: str = ""
    score_delta: float | None = None


@dataclass
class Trajectory:
    """Ordered step records for one episode; rewards are attached post hoc."""

    steps: list[TrajectoryStep]
    rewards: list[float] | None = None
    task_id: str = ""
    episode_index: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    def validate(self) -> None:
        if self.rewards is not None:
            if len(self.rewards) != len(self.steps):
                raise ValueError(
                    f"{len(self.rewards)} rewards for {len(self.steps)} steps")
            for r in self.rewards:
                if not math.isfinite(r):
                    raise ValueError(f"non-finite reward {r!r}")


@dataclass(frozen=True)
class ReturnSeries:
    """Discounted tail sums, one per step: values[t] = r[t] + gamma * values[t+1]."""

    values: tuple[float, ...]
    gamma: float


def discounted_returns(rewards: Sequence[float], gamma: float) -> ReturnSeries:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if len(rewards) == 0:
        raise ValueError("cannot compute returns of an empty reward list")
    values = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        r = rewards[t]
        if not math.isfinite(r):
            raise ValueError(f"non-finite reward at step {t}: {r!r}")
        acc = r + gamma * acc
        values[t] = acc
    return ReturnSeries(values=tuple(values), gamma=gamma)


@dataclass
class EvaluationOutcome:
    rewards: list[float]
    used_fallback: bool = False
    raw_payload: object = None


class EvaluatorError(RuntimeError):
    """Evaluator response missing, malformed, or inconsistent with the episode."""

    def __init__(self, message: str, payload: object = None):
        super().__init__(message)
        self.payload = payload


class EnvironmentTruthEvaluator:
    """Uses the simulator's per-step score deltas as rewards, unclamped.

    An optional terminal bonus is added to the last step's reward when the
    episode ended in success.
    """

    def __init__(self, terminal_bonus: float = 0.0):
        self.terminal_bonus = terminal_bonus

    def evaluate(self, trajectory: Trajectory, success: bool = False) -> EvaluationOutcome:
        if not trajectory.steps:
            raise ValueError("cannot evaluate an empty trajectory")
        rewards = []
        for i, step in enumerate(trajectory.steps):
            if step.score_delta is None:
                raise EvaluatorError(f"step {i} has no score delta")
            rewards.append(float(step.score_delta))
        if success and self.terminal_bonus:
            rewards[-1] += self.terminal_bonus
        return EvaluationOutcome(rewards=rewards, used_fallback=False)


def build_scoring_request(trajectory: Trajectory, model: str,
                          temperature: float = 0.0) -> dict:
    """Chat-completion request carrying the transcript and the scoring guide."""
    lines = []
    for i, step in enumerate(trajectory.steps):
        lines.append(f"Step {i}: state: {step.state.text}")
        lines.append(f"Step {i}: action: {step.action}")
        if step.observation:
            lines.append(f"Step {i}: result: {step.observation}")
    transcript = "\n".join(lines)
    return {
        "model": model,
        "temperature": temperature,
        "messages": [
            {"role": "system", "content": STEP_SCORING_INSTRUCTION},
            {"role": "user", "content": f"Episode transcript:\n{transcript}"},
        ],
    }


def parse_step_scores(payload: dict, n_steps: int) -> list[float]:
    """Extract per-step scores from a chat response; clamp into [-3, 3].

    The message content must be JSON of the shape
    ``{"steps": [{"step": i, "action": ..., "score": s}, ...]}`` with exactly
    one item per step.
    """
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EvaluatorError(f"response has no message content: {exc!r}",
                             payload=payload) from exc
    try:
        body = json.loads(content)
        items = body["steps"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise EvaluatorError(f"unparseable score payload: {exc!r}",
                             payload=payload) from exc
    if not isinstance(items, list) or len(items) != n_steps:
        got = len(items) if isinstance(items, list) else type(items).__name__
        raise EvaluatorError(f"expected {n_steps} step scores, got {got}",
                             payload=payload)
    scores = [None] * n_steps
    for item in items:
        try:
            idx = int(item["step"])
            score = item["score"]
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluatorError(f"malformed step item {item!r}", payload=payload) from exc
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not math.isfinite(score):
            raise EvaluatorError(f"non-numeric score in {item!r}", payload=payload)
        if not 0 <= idx < n_steps or scores[idx] is not None:
            raise EvaluatorError(f"bad or duplicate step index {idx}", payload=payload)
        scores[idx] = float(min(SCORE_MAX, max(SCORE_MIN, score)))
    return scores


class RemoteEvaluator:
    """Scores a transcript over the chat-completion wire protocol.

    Retries up to ``max_retries`` extra attempts on transport or parse
    failures; when ``fallback_to_zero`` is set a run never aborts on
    evaluator failure, it just stores zero rewards and flags the outcome.
    """

    def __init__(self, client, model: str, max_retries: int = 2,
                 fallback_to_zero: bool = True, temperature: float = 0.0):
        self.client = client
        self.model = model
        self.max_retries = max_retries
        self.fallback_to_zero = fallback_to_zero
        self.temperature = temperature

    def evaluate(self, trajectory: Trajectory, success: bool = False) -> EvaluationOutcome:
        if not trajectory.steps:
            raise ValueError("cannot evaluate an empty trajectory")
        request = build_scoring_request(trajectory, self.model, self.temperature)
        last_error: Exception | None = None
        for attempt in range(1 + self.max_retries):
            try:
                payload = self.client.complete(request)
                rewards = parse_step_scores(payload, len(trajectory.steps))
                return EvaluationOutcome(rewards=rewards, used_fallback=False,
                                         raw_payload=payload)
            except (EvaluatorError, OSError, ValueError) as exc:
                last_error = exc
                log.warning("evaluator attempt %d/%d failed: %s",
                            attempt + 1, 1 + self.max_retries, exc)
        if self.fallback_to_zero:
            log.warning("evaluator failed after retries; storing zero rewards")
            return EvaluationOutcome(rewards=[0.0] * len(trajectory.steps),
                                     used_fallback=True, raw_payload=None)
        raise EvaluatorError(f"evaluator failed after {1 + self.max_retries} attempts: "
                             f"{last_error}", payload=getattr(last_error, "payload", None))
