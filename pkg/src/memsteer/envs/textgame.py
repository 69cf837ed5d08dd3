"""Deterministic text micro-game driven by a declarative config.

Config schema (JSON object; see ``envs/data/key_door.json`` for the shipped
fixture):

* ``name``: display name.
* ``max_score``: total points; must equal the sum of all event points.
* ``step_limit``: episode ends after this many steps.
* ``start_room``: room id.
* ``rooms``: map of room id -> ``{"title": str, "exits": {direction: room_id},
  "objects": [object ids initially here], "flavor": [sentences]}``. Flavor
  rotates with the visit count and is ignored by state abstraction.
* ``objects``: map of object id -> ``{"portable": bool}``. Non-portable
  objects are scenery.
* ``doors``: list of ``{"id", "title", "rooms": [a, b], "requires": object}``.
  A door blocks the exits between its two rooms until unlocked; ``unlock
  <title>`` is valid from either side while holding the required object.
* ``score_events``: list of ``{"id", "action", "room", "requires": [objects],
  "points"}``. An event fires (once per episode) when the exact action is
  taken in the room while holding the required objects (checked before the
  action's effects). Points are non-negative.

Supported actions: ``go <direction>``, ``take <object>``, ``put <object>``,
``unlock <door title>``, ``look``. The valid-action list is deterministic and
contains exactly the actions that would succeed; the episode is over (and the
list empty) once the score reaches ``max_score`` or steps hit the limit.
"""

from __future__ import annotations

import json
from collections import deque
from importlib import resources
from typing import Iterable

from memsteer.envs import Observation

__all__ = [
    "GameConfigError",
    "InvalidActionError",
    "TextMicroGame",
    "advisor_action",
    "key_door_config",
    "key_door_game",
    "load_game_config",
    "solution_path",
    "validate_game_config",
]


class GameConfigError(ValueError):
    """The game config violates the documented schema."""


class InvalidActionError(ValueError):
    """Action not currently valid; names the valid set."""

    def __init__(self, action: str, valid: Iterable[str]):
        self.action = action
        self.valid = list(valid)
        super().__init__(f"invalid action {action!r}; valid actions: {self.valid}")


def validate_game_config(config: dict) -> dict:
    for field in ("name", "max_score", "step_limit", "start_room", "rooms",
                  "objects", "doors", "score_events"):
        if field not in config:
            raise GameConfigError(f"missing config field {field!r}")
    rooms = config["rooms"]
    if config["start_room"] not in rooms:
        raise GameConfigError(f"start room {config['start_room']!r} is not a room")
    for room_id, room in rooms.items():
        for direction, dest in room.get("exits", {}).items():
            if dest not in rooms:
                raise GameConfigError(f"room {room_id!r} exit {direction!r} "
                                      f"leads to unknown room {dest!r}")
        for obj in room.get("objects", []):
            if obj not in config["objects"]:
                raise GameConfigError(f"room {room_id!r} holds unknown object {obj!r}")
    for door in config["doors"]:
        a, b = door["rooms"]
        if a not in rooms or b not in rooms:
            raise GameConfigError(f"door {door['id']!r} joins unknown rooms")
        if door["requires"] not in config["objects"]:
            raise GameConfigError(f"door {door['id']!r} requires unknown object")
    total = 0
    for event in config["score_events"]:
        if event["points"] < 0:
            raise GameConfigError(f"event {event['id']!r} has negative points")
        if event["room"] not in rooms:
            raise GameConfigError(f"event {event['id']!r} names unknown room")
        total += event["points"]
    if total != config["max_score"]:
        raise GameConfigError(f"event points sum to {total}, expected "
                              f"max_score {config['max_score']}")
    return config


def load_game_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_game_config(json.load(fh))


def key_door_config() -> dict:
    """The shipped 10-room key-door fixture (max score 100, step limit 60)."""
    data = resources.files("memsteer.envs").joinpath("data/key_door.json").read_text("utf-8")
    return validate_game_config(json.loads(data))


class TextMicroGame:
    """Pure, replayable state machine over a validated game config."""

    def __init__(self, config: dict):
        self.config = validate_game_config(config)
        self.max_score = config["max_score"]
        self.step_limit = config["step_limit"]
        self.reset()

    def reset(self) -> Observation:
        cfg = self.config
        self.room = cfg["start_room"]
        self.inventory: list[str] = []
        self.room_objects = {rid: list(room.get("objects", []))
                             for rid, room in cfg["rooms"].items()}
        self.open_doors: set[str] = set()
        self.fired: set[str] = set()
        self.score = 0
        self.steps = 0
        self.done = False
        self.visits = {rid: 0 for rid in cfg["rooms"]}
        self.visits[self.room] = 1
        return self.observe()

    @property
    def success(self) -> bool:
        return self.score >= self.max_score

    # -- world queries ---------------------------------------------------

    def _door_at(self, room_a: str, room_b: str) -> dict | None:
        for door in self.config["doors"]:
            if set(door["rooms"]) == {room_a, room_b}:
                return door
        return None

    def passable_exits(self, room: str) -> dict[str, str]:
        out = {}
        for direction, dest in self.config["rooms"][room].get("exits", {}).items():
            door = self._door_at(room, dest)
            if door is None or door["id"] in self.open_doors:
                out[direction] = dest
        return out

    def valid_actions(self) -> list[str]:
        if self.done:
            return []
        actions = [f"go {d}" for d in self.passable_exits(self.room)]
        for obj in self.room_objects[self.room]:
            if self.config["objects"][obj].get("portable", False):
                actions.append(f"take {obj}")
        for obj in self.inventory:
            actions.append(f"put {obj}")
        for direction, dest in self.config["rooms"][self.room].get("exits", {}).items():
            door = self._door_at(self.room, dest)
            if door is not None and door["id"] not in self.open_doors \
                    and door["requires"] in self.inventory:
                actions.append(f"unlock {door['title']}")
        actions.append("look")
        return actions

    def observe(self) -> Observation:
        room = self.config["rooms"][self.room]
        parts = [f"location: {room['title']}"]
        objects = self.room_objects[self.room]
        if objects:
            parts.append("you see: " + ", ".join(objects))
        for direction, dest in room.get("exits", {}).items():
            door = self._door_at(self.room, dest)
            if door is not None:
                state = "open" if door["id"] in self.open_doors else "locked"
                parts.append(f"the {door['title']} to the {direction} is {state}")
        exits = sorted(self.passable_exits(self.room))
        if exits:
            parts.append("exits: " + ", ".join(exits))
        if self.inventory:
            parts.append("carrying: " + ", ".join(self.inventory))
        flavor = room.get("flavor", [])
        if flavor:
            parts.append(flavor[(self.visits[self.room] - 1) % len(flavor)])
        return Observation(text=". ".join(parts) + ".", score=self.score,
                           done=self.done, valid_actions=self.valid_actions())

    # -- dynamics ----------------------------------------------------------

    def step(self, action: str) -> Observation:
        valid = self.valid_actions()
        if action not in valid:
            raise InvalidActionError(action, valid)
        acted_room = self.room
        inventory_before = list(self.inventory)
        verb, _, rest = action.partition(" ")
        if verb == "go":
            self.room = self.passable_exits(self.room)[rest]
            self.visits[self.room] += 1
        elif verb == "take":
            self.room_objects[self.room].remove(rest)
            self.inventory.append(rest)
        elif verb == "put":
            self.inventory.remove(rest)
            self.room_objects[self.room].append(rest)
        elif verb == "unlock":
            for door in self.config["doors"]:
                if door["title"] == rest and self.room in door["rooms"]:
                    self.open_doors.add(door["id"])
        elif verb == "look":
            self.visits[self.room] += 1
        # events match the action in the room where it was issued, with
        # requirements checked against the pre-action inventory
        for event in self.config["score_events"]:
            if event["id"] in self.fired:
                continue
            if event["action"] != action or event["room"] != acted_room:
                continue
            if any(req not in inventory_before for req in event.get("requires", [])):
                continue
            self.fired.add(event["id"])
            self.score += event["points"]
        self.steps += 1
        if self.score >= self.max_score or self.steps >= self.step_limit:
            self.done = True
        return self.observe()


def _bfs_next_hop(game: TextMicroGame, src: str, dst: str) -> str | None:
    """First direction of a shortest passable path src -> dst (deterministic)."""
    if src == dst:
        return None
    seen = {src}
    queue = deque([(src, None)])
    while queue:
        room, first = queue.popleft()
        for direction, nxt in game.passable_exits(room).items():
            if nxt in seen:
                continue
            hop = first if first is not None else direction
            if nxt == dst:
                return hop
            seen.add(nxt)
            queue.append((nxt, hop))
    return None


def _find_object_room(game: TextMicroGame, obj: str) -> str | None:
    for rid, objects in game.room_objects.items():
        if obj in objects:
            return rid
    return None


def advisor_action(game: TextMicroGame) -> str:
    """Optimal next action for the key-door fixture (phase-based BFS policy)."""
    goal_event = {e["id"]: e for e in game.config["score_events"]}
    if "delivered" in game.fired:
        return "look"
    door = game.config["doors"][0]
    if door["requires"] not in game.inventory and door["id"] not in game.open_doors:
        key_room = _find_object_room(game, door["requires"])
        if key_room is None:
            return "look"
        if game.room == key_room:
            return f"take {door['requires']}"
        hop = _bfs_next_hop(game, game.room, key_room)
        return f"go {hop}" if hop else "look"
    if door["id"] not in game.open_doors:
        gate_room = goal_event["door-open"]["room"]
        if game.room == gate_room:
            return f"unlock {door['title']}"
        hop = _bfs_next_hop(game, game.room, gate_room)
        return f"go {hop}" if hop else "look"
    prize = goal_event["got-treasure"]["action"].split(" ", 1)[1]
    if prize not in game.inventory and "got-treasure" not in game.fired:
        prize_room = _find_object_room(game, prize)
        if prize_room is None:
            return "look"
        if game.room == prize_room:
            return f"take {prize}"
        hop = _bfs_next_hop(game, game.room, prize_room)
        return f"go {hop}" if hop else "look"
    drop_room = goal_event["delivered"]["room"]
    if game.room == drop_room:
        return f"put {prize}"
    hop = _bfs_next_hop(game, game.room, drop_room)
    return f"go {hop}" if hop else "look"


def noisy_advisor_policy(game: TextMicroGame, optimal_mass: float = 0.3):
    """Policy over valid actions: ``optimal_mass`` on the advisor's choice,
    the rest spread uniformly. The weak-but-informed base policy used by the
    end-to-end learning experiments."""
    if not 0.0 < optimal_mass <= 1.0:
        raise ValueError("optimal_mass must lie in (0, 1]")

    def policy(request) -> dict[str, float]:
        valid = request.valid_actions or game.valid_actions()
        best = advisor_action(game)
        if best not in valid:
            best = valid[0]
        if len(valid) == 1:
            return {valid[0]: 1.0}
        rest = (1.0 - optimal_mass) / (len(valid) - 1)
        return {a: (optimal_mass if a == best else rest) for a in valid}

    return policy


def key_door_game() -> TextMicroGame:
    return TextMicroGame(key_door_config())


def solution_path() -> list[str]:
    """Hand-authored optimal action sequence for the key-door fixture."""
    return [
        "go north", "go east", "take key", "go west", "go north",
        "unlock iron door", "go north", "go east", "take treasure",
        "go south", "put treasure",
    ]
