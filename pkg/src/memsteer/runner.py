"""End-to-end orchestration: episode loop, memory updates, experiments.

Per decision step the engine abstracts the observation, retrieves a
neighborhood, asks the frozen proposer for candidates, augments them with
remembered actions, estimates advantages, shifts the logits, and samples.
Memory is read-only during an episode and updated only from completed
episodes. Three modes: ``memsteer`` (the full engine), ``static`` (no
retrieval, base policy only), and ``greedy-memory`` (an ablation that picks
the argmax known action value when one exists).

One root seed fans out into independent per-episode streams (policy sampling,
exploration draws, environment noise), so identical (config, seed, fixtures)
reproduce identical metrics and memory files byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from memsteer.config import EngineConfig
from memsteer.envs.abstraction import abstract_state
from memsteer.envs.tabular import TabularMDP
from memsteer.estimator import KNOWN, advantage_vector, estimate_candidates, state_value
from memsteer.memory import (ActionNormalizer, MemoryEntry, MemoryStore, TaskFilter,
                             append_records)
from memsteer.oracle import closed_form_kl_policy, episode_returns, exact_policy_values, rollout
from memsteer.policy import Candidate, Decision, augment_candidates, logit_update, softmax_sample
from memsteer.proposer import Proposer, ProposerError, ProposerRequest
from memsteer.returns import (EnvironmentTruthEvaluator, EvaluationOutcome, Trajectory,
                              TrajectoryStep, discounted_returns)

log = logging.getLogger(__name__)

MODES = ("memsteer", "static", "greedy-memory")


def seed_streams(root_seed: int, episode_index: int) -> dict[str, np.random.Generator]:
    """Independent generator streams for one episode of one experiment."""
    children = np.random.SeedSequence([root_seed, episode_index]).spawn(3)
    return {
        "policy": np.random.default_rng(children[0]),
        "estimator": np.random.default_rng(children[1]),
        "env": np.random.default_rng(children[2]),
    }


@dataclass
class EpisodeRecord:
    episode_index: int
    trajectory: Trajectory
    decisions: list[Decision]
    final_score: float
    success: bool
    truncated: bool = False
    aborted: bool = False
    abort_reason: str = ""
    evaluator_fallback: bool = False
    memory_size_at_start: int = 0
    rewards: list[float] | None = None
    returns: tuple[float, ...] | None = None

    @property
    def steps(self) -> int:
        return len(self.trajectory.steps)


@dataclass
class MetricsReport:
    """Score-based metrics of one sequential experiment."""

    scores: list[float]
    successes: list[bool]

    @property
    def avg_score(self) -> float:
        return sum(self.scores) / len(self.scores)

    @property
    def final_score(self) -> float:
        return self.scores[-1]

    @property
    def avg_success(self) -> float:
        return sum(self.successes) / len(self.successes)

    @property
    def final_success(self) -> float:
        return float(self.successes[-1])

    def running_avg(self) -> list[float]:
        """Learning-curve series: mean score over episodes 1..i."""
        out, acc = [], 0.0
        for i, s in enumerate(self.scores, start=1):
            acc += s
            out.append(acc / i)
        return out

    @staticmethod
    def matrix_metrics(score_matrix: np.ndarray) -> tuple[float, float]:
        """(Avg, Final) of a tasks-by-episodes score matrix: Avg is the mean
        over every attempt, Final the mean of the last episode column."""
        matrix = np.asarray(score_matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.size == 0:
            raise ValueError("score matrix must be 2-D and non-empty")
        return float(matrix.mean()), float(matrix[:, -1].mean())


def run_episode(env, proposer: Proposer, memory: MemoryStore, config: EngineConfig,
                streams: dict[str, np.random.Generator], mode: str = "memsteer",
                episode_index: int = 0, normalizer: ActionNormalizer | None = None,
                task_filter=None, task_id: str = "") -> EpisodeRecord:
    """Play one episode; memory is read-only throughout."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    normalizer = normalizer or ActionNormalizer(config.action_rules)
    obs = env.reset()
    history: list[str] = []
    steps: list[TrajectoryStep] = []
    decisions: list[Decision] = []
    prev_score = obs.score
    truncated = False
    memory_size_at_start = len(memory)

    for _ in range(config.step_limit):
        if obs.done:
            break
        state = abstract_state(obs, history, config.history_length)
        neighborhood = None
        if mode != "static":
            neighborhood = memory.retrieve(state, config.k_neighbors,
                                           config.similarity_threshold,
                                           task_filter=task_filter)
        request = ProposerRequest(
            state_text=state.text, history_text=state.history,
            valid_actions=list(obs.valid_actions) if obs.valid_actions else None,
            n_candidates=config.n_candidates)
        try:
            response = proposer.propose(request)
        except ProposerError as exc:
            log.warning("episode %d aborted: %s", episode_index, exc)
            return EpisodeRecord(
                episode_index=episode_index,
                trajectory=Trajectory(steps=steps, task_id=task_id,
                                      episode_index=episode_index),
                decisions=decisions, final_score=float(obs.score), success=False,
                aborted=True, abort_reason=str(exc),
                memory_size_at_start=memory_size_at_start)

        memory_actions: list[str] = []
        if neighborhood:
            memory_actions = neighborhood.actions()
            if request.valid_actions is not None:
                allowed = {normalizer(a) for a in request.valid_actions}
                memory_actions = [a for a in memory_actions if normalizer(a) in allowed]
        candidates = augment_candidates(response.candidates, memory_actions, normalizer)

        decision = _decide(candidates, neighborhood, config, streams, mode, normalizer)
        decisions.append(decision)
        action = decision.action
        next_obs = env.step(action)
        steps.append(TrajectoryStep(state=state, action=action,
                                    observation=next_obs.text,
                                    score_delta=float(next_obs.score) - float(prev_score)))
        history.append(action)
        prev_score = next_obs.score
        obs = next_obs
    else:
        truncated = not obs.done

    success = bool(obs.done and not truncated and getattr(env, "success", False))
    return EpisodeRecord(
        episode_index=episode_index,
        trajectory=Trajectory(steps=steps, task_id=task_id,
                              episode_index=episode_index),
        decisions=decisions, final_score=float(obs.score), success=success,
        truncated=truncated, memory_size_at_start=memory_size_at_start)


def _decide(candidates: list[Candidate], neighborhood, config: EngineConfig,
            streams: dict[str, np.random.Generator], mode: str,
            normalizer: ActionNormalizer) -> Decision:
    actions = [c.action for c in candidates]
    if mode == "static":
        for cand in candidates:
            cand.normalized_advantage = 0.0
        return softmax_sample(candidates, streams["policy"], beta=0.0)

    estimate = None
    if neighborhood:
        estimate = estimate_candidates(
            neighborhood, actions,
            exploration_rate=0.0 if mode == "greedy-memory" else config.exploration_rate,
            exploration_bonus=config.exploration_bonus,
            rng=streams["estimator"], normalizer=normalizer)

    if mode == "greedy-memory":
        if estimate is not None:
            known = [(i, estimate.per_action[c.action])
                     for i, c in enumerate(candidates)
                     if estimate.per_action[c.action].source == KNOWN]
            if known:
                chosen = max(known, key=lambda iv: iv[1].q)[0]
                distribution = np.zeros(len(candidates))
                distribution[chosen] = 1.0
                return Decision(candidates=candidates, distribution=distribution,
                                chosen=chosen, beta=0.0,
                                rng_state=streams["policy"].bit_generator.state)
        for cand in candidates:
            cand.normalized_advantage = 0.0
        return softmax_sample(candidates, streams["policy"], beta=0.0)

    # full engine: advantage-shifted logits (zero shift when memory is silent)
    if estimate is not None:
        vector = advantage_vector(estimate, config.epsilon)
        for cand in candidates:
            cand.normalized_advantage = vector.normalized[cand.action]
    else:
        for cand in candidates:
            cand.normalized_advantage = 0.0
    logit_update(candidates, config.beta)
    return softmax_sample(candidates, streams["policy"], beta=config.beta)


def update_memory(record: EpisodeRecord, memory: MemoryStore, evaluator,
                  gamma: float) -> list[MemoryEntry]:
    """Evaluate a completed episode and store one triplet per step."""
    if record.aborted:
        return []
    if not record.trajectory.steps:
        return []
    outcome: EvaluationOutcome = evaluator.evaluate(record.trajectory,
                                                    success=record.success)
    record.rewards = list(outcome.rewards)
    record.evaluator_fallback = outcome.used_fallback
    series = discounted_returns(outcome.rewards, gamma)
    record.returns = series.values
    entries = []
    for t, step in enumerate(record.trajectory.steps):
        entries.append(memory.add(step.state, step.action, series.values[t],
                                  episode=record.episode_index, step=t))
    return entries


def run_experiment(config: EngineConfig, env_factory, proposer_factory,
                   mode: str = "memsteer", evaluator=None, out_dir=None,
                   memory: MemoryStore | None = None,
                   ) -> tuple[MetricsReport, MemoryStore, list[EpisodeRecord]]:
    """Sequential episodes sharing one evolving memory (static mode never
    touches it). Writes metrics.csv, summary.json, records.jsonl and
    memory.jsonl under ``out_dir`` when given.

    ``env_factory(rng)`` builds a fresh environment per episode;
    ``proposer_factory(env)`` binds the proposer to it.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    evaluator = evaluator or EnvironmentTruthEvaluator(terminal_bonus=config.terminal_bonus)
    memory = memory if memory is not None else MemoryStore(
        capacity=config.memory_capacity, state_weight=config.state_weight,
        history_weight=config.history_weight)
    normalizer = ActionNormalizer(config.action_rules)
    records: list[EpisodeRecord] = []
    bank_path = Path(out_dir) / "memory.jsonl" if out_dir is not None else None
    if bank_path is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        bank_path.write_text("", encoding="utf-8")

    for episode in range(config.episodes):
        streams = seed_streams(config.seed, episode)
        env = env_factory(streams["env"])
        proposer = proposer_factory(env)
        record = run_episode(env, proposer, memory, config, streams, mode=mode,
                             episode_index=episode, normalizer=normalizer)
        if mode != "static":
            new_entries = update_memory(record, memory, evaluator, config.gamma)
            if bank_path is not None and new_entries:
                append_records(bank_path, new_entries)
        records.append(record)

    report = MetricsReport(scores=[r.final_score for r in records],
                           successes=[r.success for r in records])
    if out_dir is not None:
        write_outputs(Path(out_dir), config, mode, report, records, memory)
    return report, memory, records


def run_task_suite(config: EngineConfig, tasks: dict, mode: str = "memsteer",
                   evaluator=None, task_texts: dict | None = None,
                   ) -> tuple[dict, np.ndarray, dict]:
    """Sequential multi-task protocol: every task runs ``config.episodes``
    episodes in turn.

    ``tasks`` maps task id -> (env_factory, proposer_factory). With
    ``memory_scope == "global"`` all tasks share one evolving store (and, when
    ``task_similarity_threshold`` is set and a task has an entry in
    ``task_texts``, retrieval is gated by the cross-task filter); with
    ``"per-task"`` each task owns an isolated store. Returns per-task reports,
    the tasks-by-episodes score matrix, and the stores used.
    """
    task_texts = task_texts or {}
    stores: dict[str, MemoryStore] = {}
    shared = MemoryStore(capacity=config.memory_capacity,
                         state_weight=config.state_weight,
                         history_weight=config.history_weight)
    evaluator = evaluator or EnvironmentTruthEvaluator(terminal_bonus=config.terminal_bonus)
    normalizer = ActionNormalizer(config.action_rules)
    reports: dict[str, MetricsReport] = {}
    matrix = np.zeros((len(tasks), config.episodes))
    for row, (task_id, (env_factory, proposer_factory)) in enumerate(tasks.items()):
        if config.memory_scope == "per-task":
            memory = stores.setdefault(task_id, MemoryStore(
                capacity=config.memory_capacity, state_weight=config.state_weight,
                history_weight=config.history_weight))
        else:
            memory = stores.setdefault("global", shared)
        task_filter = None
        if config.memory_scope == "global" and config.task_similarity_threshold is not None \
                and task_id in task_texts:
            task_filter = TaskFilter(task_text=task_texts[task_id],
                                     threshold=config.task_similarity_threshold,
                                     history_weight=config.cross_task_history_weight,
                                     task_weight=config.cross_task_task_weight)
        records = []
        for episode in range(config.episodes):
            streams = seed_streams(config.seed, row * config.episodes + episode)
            env = env_factory(streams["env"])
            proposer = proposer_factory(env)
            record = run_episode(env, proposer, memory, config, streams, mode=mode,
                                 episode_index=episode, normalizer=normalizer,
                                 task_filter=task_filter, task_id=task_id)
            if mode != "static":
                update_memory(record, memory, evaluator, config.gamma)
            records.append(record)
        reports[task_id] = MetricsReport(scores=[r.final_score for r in records],
                                         successes=[r.success for r in records])
        matrix[row] = [r.final_score for r in records]
    return reports, matrix, stores


# -- output files --------------------------------------------------------------


def write_outputs(out_dir: Path, config: EngineConfig, mode: str,
                  report: MetricsReport, records: Sequence[EpisodeRecord],
                  memory: MemoryStore) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "metrics.csv", records, memory_growth(records))
    summary = {
        "mode": mode,
        "config": config.to_dict(),
        "episodes": len(records),
        "avg_score": report.avg_score,
        "final_score": report.final_score,
        "avg_success": report.avg_success,
        "final_success": report.final_success,
        "memory_entries": len(memory),
        "learning_curve": report.running_avg(),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out_dir / "records.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(episode_record_to_dict(record), ensure_ascii=False))
            fh.write("\n")


def memory_growth(records: Sequence[EpisodeRecord]) -> list[int]:
    sizes, total = [], 0
    for record in records:
        if not record.aborted:
            total += record.steps
        sizes.append(total)
    return sizes


def write_metrics_csv(path, records: Sequence[EpisodeRecord],
                      memory_sizes: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "score", "success", "steps", "aborted", "memory_size"])
        for record, size in zip(records, memory_sizes):
            writer.writerow([record.episode_index, record.final_score,
                             int(record.success), record.steps,
                             int(record.aborted), size])


def episode_record_to_dict(record: EpisodeRecord) -> dict:
    return {
        "episode": record.episode_index,
        "score": record.final_score,
        "success": record.success,
        "truncated": record.truncated,
        "aborted": record.aborted,
        "abort_reason": record.abort_reason,
        "evaluator_fallback": record.evaluator_fallback,
        "memory_size_at_start": record.memory_size_at_start,
        "rewards": record.rewards,
        "returns": list(record.returns) if record.returns is not None else None,
        "steps": [
            {
                "state_text": step.state.text,
                "history_text": step.state.history,
                "action": step.action,
                "observation": step.observation,
                "score_delta": step.score_delta,
            }
            for step in record.trajectory.steps
        ],
        "decisions": [
            {
                "candidates": [
                    {
                        "action": c.action,
                        "base_logit": c.base_logit,
                        "origin": c.origin,
                        "normalized_advantage": c.normalized_advantage,
                        "updated_logit": c.updated_logit,
                    }
                    for c in decision.candidates
                ],
                "distribution": decision.distribution.tolist(),
                "chosen": decision.chosen,
                "beta": decision.beta,
            }
            for decision in record.decisions
        ],
    }


def replay_episode(config: EngineConfig, env_factory, proposer_factory, mode: str,
                   recorded: dict, bank_path=None) -> tuple[dict, bool]:
    """Re-run one recorded episode from its seed and memory snapshot.

    The memory snapshot is the first ``memory_size_at_start`` lines of the
    bank file. Returns the freshly computed record dict and whether it matches
    the recorded one exactly.
    """
    episode = recorded["episode"]
    memory = MemoryStore(capacity=config.memory_capacity,
                         state_weight=config.state_weight,
                         history_weight=config.history_weight)
    if bank_path is not None and recorded["memory_size_at_start"] > 0:
        loaded = MemoryStore.load(bank_path)
        for entry in loaded.entries[: recorded["memory_size_at_start"]]:
            memory.insert(entry)
    streams = seed_streams(config.seed, episode)
    env = env_factory(streams["env"])
    proposer = proposer_factory(env)
    record = run_episode(env, proposer, memory, config, streams, mode=mode,
                         episode_index=episode)
    fresh = episode_record_to_dict(record)
    comparable = {k: v for k, v in fresh.items()
                  if k not in ("rewards", "returns", "evaluator_fallback")}
    recorded_comparable = {k: v for k, v in recorded.items()
                           if k not in ("rewards", "returns", "evaluator_fallback")}
    return fresh, comparable == recorded_comparable


# -- consistency experiments ----------------------------------------------------


@dataclass
class ConsistencyPoint:
    """Estimation error at one (memory size, seed, probe state)."""

    n_entries: int
    seed: int
    probe_state: int
    neighborhood_size: int
    v_error: float
    q_error: float
    a_error: float
    tv: float


def default_k(n: int) -> int:
    """Neighborhood schedule k = ceil(sqrt(N)): grows without bound, k/N -> 0."""
    return int(math.ceil(math.sqrt(n)))


def fill_memory_from_rollouts(mdp: TabularMDP, policy_of_episode, gamma: float,
                              n_entries: int, rng: np.random.Generator,
                              store: MemoryStore) -> None:
    """Roll episodes until the store holds ``n_entries`` triplets.

    ``policy_of_episode(i)`` may drift across episodes; returns are realized
    discounted tails, i.e. unbiased but noisy action-value samples.
    """
    episode = 0
    while len(store) < n_entries:
        policy = policy_of_episode(episode)
        states, actions, rewards = rollout(mdp, policy, rng)
        returns = episode_returns(rewards, gamma)
        for t, (s, a, g) in enumerate(zip(states, actions, returns)):
            if len(store) >= n_entries:
                break
            store.add(mdp.state_key(s), mdp.action_name(a), g,
                      episode=episode, step=t)
        episode += 1


def run_consistency_experiment(mdp: TabularMDP, policy, gamma: float,
                               memory_sizes: Sequence[int], seeds: Sequence[int],
                               beta: float, k_of: Callable[[int], int] = default_k,
                               threshold: float = 0.95,
                               probe_states: Sequence[int] | None = None,
                               policy_schedule: Callable[[int], np.ndarray] | None = None,
                               ) -> list[ConsistencyPoint]:
    """Error curves of the retrieval estimates against the exact oracle.

    Memory is filled with Monte Carlo returns (optionally under a drifting
    policy schedule), estimates are read back through the real retrieval
    path, and compared with dynamic-programming values of the query-time
    policy. ``tv`` is the total-variation gap between the KL-tilted policies
    built from estimated vs exact advantages.
    """
    policy = np.asarray(policy, dtype=np.float64)
    exact = exact_policy_values(mdp, policy, gamma)
    if probe_states is None:
        probe_states = [s for s in range(mdp.n_states) if not mdp.terminal[s]]
    schedule = policy_schedule or (lambda episode: policy)
    points: list[ConsistencyPoint] = []
    for n in memory_sizes:
        k = k_of(n)
        if k > n:
            raise ValueError(f"k={k} exceeds memory size {n}")
        for seed in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
            estimator_rng = np.random.default_rng(np.random.SeedSequence([seed, n, 1]))
            store = MemoryStore()
            fill_memory_from_rollouts(mdp, schedule, gamma, n, rng, store)
            for s in probe_states:
                neighborhood = store.retrieve(mdp.state_key(s), k, threshold)
                if not neighborhood:
                    continue
                v_hat = state_value(neighborhood)
                estimate = estimate_candidates(
                    neighborhood, [mdp.action_name(a) for a in range(mdp.n_actions)],
                    exploration_rate=0.0, exploration_bonus=0.0, rng=estimator_rng)
                q_hat = np.array([estimate.per_action[mdp.action_name(a)].q
                                  for a in range(mdp.n_actions)])
                known = np.array([estimate.per_action[mdp.action_name(a)].source == KNOWN
                                  for a in range(mdp.n_actions)])
                a_hat = q_hat - v_hat
                pi_star = closed_form_kl_policy(policy[s], exact.a[s], beta)
                pi_hat = closed_form_kl_policy(policy[s], a_hat, beta)
                points.append(ConsistencyPoint(
                    n_entries=n, seed=seed, probe_state=s,
                    neighborhood_size=len(neighborhood),
                    v_error=abs(v_hat - exact.v[s]),
                    q_error=float(np.max(np.abs(q_hat - exact.q[s])[known]))
                    if known.any() else float("nan"),
                    a_error=float(np.max(np.abs(a_hat - exact.a[s])[known]))
                    if known.any() else float("nan"),
                    tv=0.5 * float(np.abs(pi_hat - pi_star).sum()),
                ))
    return points


def summarize_consistency(points: Iterable[ConsistencyPoint]) -> dict[int, dict[str, float]]:
    """Median over seeds of the per-seed mean over probe states."""
    by_n_seed: dict[tuple[int, int], list[ConsistencyPoint]] = {}
    for p in points:
        by_n_seed.setdefault((p.n_entries, p.seed), []).append(p)
    per_seed: dict[int, dict[str, list[float]]] = {}
    for (n, _), group in sorted(by_n_seed.items()):
        buckets = per_seed.setdefault(n, {"v_error": [], "q_error": [], "a_error": [],
                                          "tv": []})
        buckets["v_error"].append(float(np.mean([p.v_error for p in group])))
        buckets["q_error"].append(float(np.nanmean([p.q_error for p in group])))
        buckets["a_error"].append(float(np.nanmean([p.a_error for p in group])))
        buckets["tv"].append(float(np.mean([p.tv for p in group])))
    return {n: {f"median_{name}": float(np.median(vals))
                for name, vals in buckets.items()}
            for n, buckets in per_seed.items()}


def write_consistency_csv(path, points: Sequence[ConsistencyPoint]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in dataclasses.fields(ConsistencyPoint)])
        for p in points:
            writer.writerow([getattr(p, f.name) for f in dataclasses.fields(ConsistencyPoint)])
