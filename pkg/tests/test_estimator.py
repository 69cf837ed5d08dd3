import numpy as np
import pytest

from memsteer.estimator import (EXPLORED, KNOWN, NEUTRAL, EmptyNeighborhoodError,
                                action_value, advantage_vector, advantages,
                                estimate_candidates, normalize_advantages, state_value)
from memsteer.memory import MemoryStore, Neighborhood, StateKey


def neighborhood_from(pairs):
    """pairs: (action, return) tuples stored under one shared state."""
    store = MemoryStore()
    for action, value in pairs:
        store.add(StateKey("same place"), action, value)
    return store.retrieve(StateKey("same place"), k=len(pairs), threshold=0.0)


class FixedUniform:
    """Generator stand-in yielding scripted uniform draws."""

    def __init__(self, draws):
        self.draws = list(draws)

    def random(self):
        return self.draws.pop(0)


# -- state value -------------------------------------------------------------------


def test_state_value_mean():
    assert state_value(neighborhood_from([("a", 2.0), ("b", 4.0)])) == 3.0


def test_state_value_singleton():
    assert state_value(neighborhood_from([("a", 7.0)])) == 7.0


def test_state_value_symmetric_cancellation():
    assert state_value(neighborhood_from([("a", -1.0), ("b", 1.0)])) == 0.0


def test_state_value_empty_signals_no_estimate():
    empty = Neighborhood(entries=[], query=StateKey("s"), k_requested=1, threshold=0.0)
    with pytest.raises(EmptyNeighborhoodError):
        state_value(empty)


# -- action value -------------------------------------------------------------------


def test_known_action_mean():
    neighborhood = neighborhood_from([("x", 1.0), ("x", 3.0), ("y", 10.0)])
    value = action_value(neighborhood, "x", v=0.0, exploration_rate=0.5,
                         exploration_bonus=5.0, rng=FixedUniform([0.99]))
    assert (value.q, value.count, value.source) == (2.0, 2, KNOWN)


def test_unseen_action_optimistic_branch():
    pairs = [("seen", 3.0)] * 10
    neighborhood = neighborhood_from(pairs)
    value = action_value(neighborhood, "new", v=3.0, exploration_rate=0.65,
                         exploration_bonus=5.0, rng=FixedUniform([0.1]))
    assert value.source == EXPLORED
    assert value.q == 3.0 + 5.0 / 10
    assert value.count == 0


def test_unseen_action_neutral_branch():
    neighborhood = neighborhood_from([("seen", 3.0)])
    value = action_value(neighborhood, "new", v=3.0, exploration_rate=0.65,
                         exploration_bonus=5.0, rng=FixedUniform([0.9]))
    assert (value.q, value.source) == (0.0, NEUTRAL)


def test_exploration_rate_zero_always_neutral(rng):
    neighborhood = neighborhood_from([("seen", 1.0)])
    for _ in range(50):
        value = action_value(neighborhood, "new", v=1.0, exploration_rate=0.0,
                             exploration_bonus=5.0, rng=rng)
        assert value.source == NEUTRAL


def test_exploration_rate_one_always_optimistic(rng):
    neighborhood = neighborhood_from([("seen", 1.0)])
    for _ in range(50):
        value = action_value(neighborhood, "new", v=1.0, exploration_rate=1.0,
                             exploration_bonus=5.0, rng=rng)
        assert value.source == EXPLORED


def test_bonus_strictly_decreasing_in_neighborhood_size():
    previous = float("inf")
    for size in range(1, 101):
        neighborhood = neighborhood_from([("seen", 0.0)] * size)
        value = action_value(neighborhood, "new", v=0.0, exploration_rate=1.0,
                             exploration_bonus=5.0, rng=FixedUniform([0.0]))
        assert value.q < previous
        previous = value.q


def test_one_draw_per_unseen_action():
    neighborhood = neighborhood_from([("seen", 1.0)])
    draws = FixedUniform([0.1, 0.9, 0.1])
    estimate = estimate_candidates(neighborhood, ["seen", "u1", "u2", "u3"],
                                   exploration_rate=0.5, exploration_bonus=2.0,
                                   rng=draws)
    sources = [estimate.per_action[a].source for a in ("u1", "u2", "u3")]
    assert sources == [EXPLORED, NEUTRAL, EXPLORED]
    assert not draws.draws  # exactly one draw per unseen action, none for seen


# -- advantages ---------------------------------------------------------------------


def test_advantages_center_on_state_value():
    neighborhood = neighborhood_from([("x", 2.0), ("y", 4.0)])
    estimate = estimate_candidates(neighborhood, ["x", "y"], 0.0, 0.0,
                                   rng=FixedUniform([]))
    assert advantages(estimate) == {"x": -1.0, "y": 1.0}


def test_advantages_all_equal_gives_zeros():
    neighborhood = neighborhood_from([("x", 3.0), ("y", 3.0)])
    estimate = estimate_candidates(neighborhood, ["x", "y"], 0.0, 0.0,
                                   rng=FixedUniform([]))
    assert advantages(estimate) == {"x": 0.0, "y": 0.0}


def test_neutral_action_advantage_is_minus_v():
    neighborhood = neighborhood_from([("x", 3.0)])
    estimate = estimate_candidates(neighborhood, ["x", "new"], 0.0, 0.0,
                                   rng=FixedUniform([0.5]))
    assert advantages(estimate)["new"] == -3.0


def test_count_weighted_advantages_center_to_zero(rng):
    for _ in range(50):
        size = int(rng.integers(2, 40))
        pairs = [(f"a{rng.integers(0, 4)}", float(rng.uniform(-10, 10)))
                 for _ in range(size)]
        neighborhood = neighborhood_from(pairs)
        actions = sorted({a for a, _ in pairs})
        estimate = estimate_candidates(neighborhood, actions, 0.0, 0.0,
                                       rng=FixedUniform([]))
        adv = advantages(estimate)
        weighted = sum(estimate.per_action[a].count * adv[a] for a in actions)
        assert abs(weighted) < 1e-9


# -- normalization -------------------------------------------------------------------


def test_normalize_divides_by_peak_plus_epsilon():
    normalized = normalize_advantages({"x": 2.0, "y": -4.0}, epsilon=1e-8)
    assert normalized["x"] == pytest.approx(0.5, abs=1e-8)
    assert normalized["y"] == pytest.approx(-1.0, abs=1e-8)


def test_normalize_all_zero_stays_zero():
    assert normalize_advantages({"x": 0.0, "y": 0.0}) == {"x": 0.0, "y": 0.0}


def test_normalize_single_negative():
    normalized = normalize_advantages({"x": -7.0}, epsilon=1e-8)
    assert normalized["x"] == pytest.approx(-1.0, abs=1e-8)


def test_normalize_requires_positive_epsilon():
    with pytest.raises(ValueError):
        normalize_advantages({"x": 1.0}, epsilon=0.0)


def test_normalized_values_bounded_and_argmax_preserved(rng):
    for _ in range(100):
        raw = {f"a{i}": float(rng.uniform(-50, 50)) for i in range(int(rng.integers(1, 6)))}
        normalized = normalize_advantages(raw)
        assert all(-1.0 <= v <= 1.0 for v in normalized.values())
        assert max(raw, key=raw.get) == max(normalized, key=normalized.get)
        peak = max(raw, key=lambda a: abs(raw[a]))
        if raw[peak] != 0.0:
            assert abs(normalized[peak]) == pytest.approx(1.0, abs=1e-6)


def test_advantage_vector_combines_raw_and_normalized():
    neighborhood = neighborhood_from([("x", 2.0), ("y", 4.0)])
    estimate = estimate_candidates(neighborhood, ["x", "y"], 0.0, 0.0,
                                   rng=FixedUniform([]))
    vector = advantage_vector(estimate, epsilon=1e-8)
    assert vector.raw == {"x": -1.0, "y": 1.0}
    assert vector.normalized["y"] == pytest.approx(1.0, abs=1e-7)


def test_exploration_frequency_matches_rate():
    rng = np.random.default_rng(7)
    neighborhood = neighborhood_from([("seen", 1.0)])
    hits = sum(
        action_value(neighborhood, "new", 1.0, 0.3, 1.0, rng).source == EXPLORED
        for _ in range(20000))
    assert hits / 20000 == pytest.approx(0.3, abs=0.01)
