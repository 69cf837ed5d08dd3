"""Base-policy proposers: scripted tables and remote chat endpoints.

A proposer turns (state, history, valid actions) into candidate actions with
logits. Scripted proposers make experiments exactly reproducible; the two
remote variants cover endpoints that expose token log-probabilities and
endpoints that only verbalize a 0-100 confidence per candidate.

Wire protocol (chat completion): requests are JSON objects
``{"model", "messages", "temperature", "logprobs"?, "top_logprobs"?}``;
responses must carry the assistant text at ``choices[0].message.content`` and
— for the token-logit path — per-token alternatives at
``choices[0].logprobs.content[0].top_logprobs`` as ``{"token", "logprob"}``
pairs. Recorded request/response fixtures replay offline via
``FixtureChatClient``; deterministic tests never touch the network.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import requests

from memsteer.memory import ActionNormalizer, IDENTITY_NORMALIZER

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProposerRequest:
    state_text: str
    history_text: str = ""
    valid_actions: list[str] | None = None
    n_candidates: int = 3

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.valid_actions is not None and not self.valid_actions:
            raise ValueError("valid_actions, when given, must be non-empty")


@dataclass
class ProposerResponse:
    candidates: list[tuple[str, float]]
    raw_payload: object = None

    def __post_init__(self):
        if not self.candidates:
            raise ProposerError("proposer returned no candidates")
        for action, logit in self.candidates:
            if not math.isfinite(logit):
                raise ProposerError(f"non-finite logit for {action!r}")


class ProposerError(RuntimeError):
    """Proposal failed or violated its contract; carries the raw payload."""

    def __init__(self, message: str, payload: object = None):
        super().__init__(message)
        self.payload = payload


class Proposer(Protocol):
    def propose(self, request: ProposerRequest) -> ProposerResponse: ...


def enforce_valid_actions(candidates: Sequence[tuple[str, float]],
                          valid_actions: Sequence[str] | None,
                          normalizer: ActionNormalizer = IDENTITY_NORMALIZER,
                          payload: object = None) -> list[tuple[str, float]]:
    """Hard filter: drop candidates outside the valid set; error if none survive."""
    if valid_actions is None:
        return list(candidates)
    allowed = {normalizer(a) for a in valid_actions}
    kept = [(a, z) for a, z in candidates if normalizer(a) in allowed]
    if not kept:
        raise ProposerError(
            f"all proposed actions fell outside the valid set {list(valid_actions)!r}",
            payload=payload)
    return kept


def top_candidates(distribution: Mapping[str, float], n: int) -> list[tuple[str, float]]:
    """Up to n (action, log prob) pairs, highest probability first.

    Ties keep mapping insertion order; zero-probability actions are never
    proposed (their logit would be -inf).
    """
    items = [(a, p) for a, p in distribution.items() if p > 0.0]
    items.sort(key=lambda ap: -ap[1])
    return [(a, math.log(p)) for a, p in items[:n]]


class TabularProposer:
    """Deterministic stand-in for the frozen policy: a state -> distribution table."""

    def __init__(self, table: Mapping[str, Mapping[str, float]],
                 normalizer: ActionNormalizer = IDENTITY_NORMALIZER):
        self.table = table
        self.normalizer = normalizer

    def propose(self, request: ProposerRequest) -> ProposerResponse:
        row = self.table.get(request.state_text)
        if row is None:
            raise ProposerError(f"state {request.state_text!r} not in the policy table")
        candidates = top_candidates(row, request.n_candidates)
        candidates = enforce_valid_actions(candidates, request.valid_actions,
                                           self.normalizer, payload=row)
        return ProposerResponse(candidates=candidates, raw_payload=row)


class CallablePolicyProposer:
    """Scripted policy: a function mapping the request to an action distribution."""

    def __init__(self, policy_fn: Callable[[ProposerRequest], Mapping[str, float]],
                 normalizer: ActionNormalizer = IDENTITY_NORMALIZER):
        self.policy_fn = policy_fn
        self.normalizer = normalizer

    def propose(self, request: ProposerRequest) -> ProposerResponse:
        distribution = self.policy_fn(request)
        candidates = top_candidates(distribution, request.n_candidates)
        candidates = enforce_valid_actions(candidates, request.valid_actions,
                                           self.normalizer, payload=dict(distribution))
        return ProposerResponse(candidates=candidates, raw_payload=dict(distribution))


def uniform_policy(request: ProposerRequest) -> dict[str, float]:
    """Uniform over the valid actions (cold-start baseline policy)."""
    if not request.valid_actions:
        raise ProposerError("uniform policy needs valid_actions on the request")
    p = 1.0 / len(request.valid_actions)
    return {action: p for action in request.valid_actions}


# -- chat clients -------------------------------------------------------------


class ChatClient(Protocol):
    def complete(self, payload: dict) -> dict: ...


class HttpChatClient:
    """Blocking chat-completion client with timeout and bounded retry."""

    def __init__(self, url: str, api_key: str | None = None, timeout: float = 30.0,
                 max_attempts: int = 3, retry_delay: float = 0.5):
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.retry_delay = retry_delay

    def complete(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                response = requests.post(self.url, json=payload, headers=headers,
                                         timeout=self.timeout)
                response.raise_for_status()
                return response.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                log.warning("chat request attempt %d/%d failed: %s",
                            attempt + 1, self.max_attempts, exc)
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.retry_delay)
        raise ProposerError(f"chat endpoint failed after {self.max_attempts} attempts: {last}")


class FixtureChatClient:
    """Replays recorded request -> response exchanges, in order.

    Fixture files are JSON lists of ``{"request": {...}, "response": {...}}``.
    When a recorded request carries "model" or "messages" they must match the
    live payload, which catches prompt drift in tests.
    """

    def __init__(self, exchanges: Sequence[dict] | str, strict: bool = True):
        if isinstance(exchanges, str):
            with open(exchanges, "r", encoding="utf-8") as fh:
                exchanges = json.load(fh)
        self.exchanges = list(exchanges)
        self.strict = strict
        self.cursor = 0

    @property
    def remaining(self) -> int:
        return len(self.exchanges) - self.cursor

    def complete(self, payload: dict) -> dict:
        if self.cursor >= len(self.exchanges):
            raise ProposerError("fixture exhausted: no recorded response left")
        exchange = self.exchanges[self.cursor]
        self.cursor += 1
        recorded = exchange.get("request", {})
        if self.strict:
            for key in ("model", "messages"):
                if key in recorded and recorded[key] != payload.get(key):
                    raise ProposerError(
                        f"fixture request mismatch on {key!r} at exchange {self.cursor - 1}",
                        payload=payload)
        return exchange["response"]


# -- remote proposers ----------------------------------------------------------


def _message_content(payload: dict) -> str:
    try:
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProposerError(f"response has no message content: {exc!r}",
                            payload=payload) from exc


def _parse_json_content(payload: dict) -> dict:
    content = _message_content(payload)
    try:
        body = json.loads(content)
    except json.JSONDecodeError as exc:
        raise ProposerError(f"response content is not JSON: {exc.msg}",
                            payload=payload) from exc
    if not isinstance(body, dict):
        raise ProposerError("response content is not a JSON object", payload=payload)
    return body


def generation_messages(request: ProposerRequest) -> list[dict]:
    lines = [f"State: {request.state_text}"]
    if request.history_text:
        lines.append(f"Recent actions: {request.history_text}")
    if request.valid_actions is not None:
        lines.append("Valid actions (choose only from these): "
                     + "; ".join(request.valid_actions))
    lines.append(f"Propose up to {request.n_candidates} distinct promising actions.")
    return [
        {"role": "system", "content":
            "You control an agent in an interactive environment. Respond with "
            'JSON only: {"options": ["<action>", ...]} listing your candidate '
            "actions, best first."},
        {"role": "user", "content": "\n".join(lines)},
    ]


def index_messages(actions: Sequence[str]) -> list[dict]:
    numbered = "\n".join(f"{i + 1}. {a}" for i, a in enumerate(actions))
    return [
        {"role": "system", "content":
            "Pick the best action. Answer with the index digit only."},
        {"role": "user", "content": f"Candidate actions:\n{numbered}\nBest index:"},
    ]


def verbalized_messages(request: ProposerRequest) -> list[dict]:
    lines = [f"State: {request.state_text}"]
    if request.history_text:
        lines.append(f"Recent actions: {request.history_text}")
    if request.valid_actions is not None:
        lines.append("Valid actions (choose only from these): "
                     + "; ".join(request.valid_actions))
    lines.append(f"Propose up to {request.n_candidates} distinct actions with an "
                 "integer confidence 0-100 each; confidences must sum to 100.")
    return [
        {"role": "system", "content":
            "You control an agent in an interactive environment. Respond with "
            'JSON only: {"options": [{"action": "<action>", "confidence": '
            "<integer 0-100>}, ...]}."},
        {"role": "user", "content": "\n".join(lines)},
    ]


class TokenLogitProposer:
    """Derives logits from the endpoint's token log-probabilities.

    One call generates candidate actions; a second call asks the model to
    answer with the best candidate's index while requesting log-probabilities,
    and the logit of candidate i is the log-probability of the token "i+1" at
    the answer position. Index tokens absent from the returned alternatives
    fall back to ``log(floor_prob)``.
    """

    def __init__(self, client: ChatClient, model: str, temperature: float = 0.8,
                 floor_prob: float = 1e-6, top_logprobs: int = 8,
                 normalizer: ActionNormalizer = IDENTITY_NORMALIZER):
        self.client = client
        self.model = model
        self.temperature = temperature
        self.floor_prob = floor_prob
        self.top_logprobs = top_logprobs
        self.normalizer = normalizer

    def _generate_actions(self, request: ProposerRequest) -> tuple[list[str], dict]:
        payload = self.client.complete({
            "model": self.model,
            "temperature": self.temperature,
            "messages": generation_messages(request),
        })
        body = _parse_json_content(payload)
        options = body.get("options")
        if not isinstance(options, list) or not all(isinstance(o, str) for o in options):
            raise ProposerError('expected {"options": [<action strings>]}', payload=payload)
        seen: dict[str, str] = {}
        for option in options:
            seen.setdefault(self.normalizer(option), option)
        return list(seen.values())[: request.n_candidates], payload

    def propose(self, request: ProposerRequest) -> ProposerResponse:
        actions, payload = self._generate_actions(request)
        if request.valid_actions is not None:
            allowed = {self.normalizer(a) for a in request.valid_actions}
            kept = [a for a in actions if self.normalizer(a) in allowed]
            if not kept:  # retry the generation once, then give up
                actions, payload = self._generate_actions(request)
                kept = [a for a in actions if self.normalizer(a) in allowed]
                if not kept:
                    raise ProposerError("no valid action proposed after retry",
                                        payload=payload)
            actions = kept
        logit_payload = self.client.complete({
            "model": self.model,
            "temperature": 0.0,
            "messages": index_messages(actions),
            "logprobs": True,
            "top_logprobs": max(self.top_logprobs, len(actions)),
        })
        try:
            alternatives = logit_payload["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProposerError(f"response carries no token log-probabilities: {exc!r}",
                                payload=logit_payload) from exc
        by_token = {}
        for alt in alternatives:
            try:
                by_token.setdefault(alt["token"], float(alt["logprob"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ProposerError(f"malformed logprob entry {alt!r}",
                                    payload=logit_payload) from exc
        floor = math.log(self.floor_prob)
        candidates = [(action, by_token.get(str(i + 1), floor))
                      for i, action in enumerate(actions)]
        return ProposerResponse(candidates=candidates, raw_payload=logit_payload)


def confidence_logits(confidences: Sequence[int], floor: float = 1.0) -> list[float]:
    """log of the floored, renormalized confidences.

    The minimal map whose softmax recovers the verbalized distribution; the
    floor keeps zero confidences finite.
    """
    floored = [max(float(c), floor) for c in confidences]
    total = sum(floored)
    return [math.log(c / total) for c in floored]


class VerbalizedProposer:
    """Derives logits from verbalized 0-100 confidences (for endpoints
    that hide log-probabilities)."""

    def __init__(self, client: ChatClient, model: str, temperature: float = 0.8,
                 confidence_floor: float = 1.0,
                 normalizer: ActionNormalizer = IDENTITY_NORMALIZER):
        self.client = client
        self.model = model
        self.temperature = temperature
        self.confidence_floor = confidence_floor
        self.normalizer = normalizer

    def _ask(self, request: ProposerRequest) -> tuple[list[tuple[str, int]], dict]:
        payload = self.client.complete({
            "model": self.model,
            "temperature": self.temperature,
            "messages": verbalized_messages(request),
        })
        body = _parse_json_content(payload)
        options = body.get("options")
        if not isinstance(options, list) or not options:
            raise ProposerError('expected {"options": [{"action", "confidence"}]}',
                                payload=payload)
        parsed: list[tuple[str, int]] = []
        seen: set[str] = set()
        for item in options:
            try:
                action = item["action"]
                confidence = item["confidence"]
            except (KeyError, TypeError) as exc:
                raise ProposerError(f"malformed option {item!r}", payload=payload) from exc
            if isinstance(confidence, bool) or not isinstance(confidence, int):
                raise ProposerError(f"confidence must be an integer, got {confidence!r}",
                                    payload=payload)
            if not 0 <= confidence <= 100:
                raise ProposerError(f"confidence {confidence} outside [0, 100]",
                                    payload=payload)
            key = self.normalizer(action)
            if key not in seen:  # duplicate actions keep their first confidence
                seen.add(key)
                parsed.append((action, confidence))
        return parsed[: request.n_candidates], payload

    def propose(self, request: ProposerRequest) -> ProposerResponse:
        parsed, payload = self._ask(request)
        if request.valid_actions is not None:
            allowed = {self.normalizer(a) for a in request.valid_actions}
            kept = [(a, c) for a, c in parsed if self.normalizer(a) in allowed]
            if not kept:
                parsed, payload = self._ask(request)
                kept = [(a, c) for a, c in parsed if self.normalizer(a) in allowed]
                if not kept:
                    raise ProposerError("no valid action proposed after retry",
                                        payload=payload)
            parsed = kept
        logits = confidence_logits([c for _, c in parsed], self.confidence_floor)
        candidates = [(action, z) for (action, _), z in zip(parsed, logits)]
        return ProposerResponse(candidates=candidates, raw_payload=payload)
