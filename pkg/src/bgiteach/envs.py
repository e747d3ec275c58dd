"""Discrete multi-goal environments with built-in goal ambiguity.

Two environments share one small interface used by the training loops:

* ``DrawTwoBalls`` -- pick two balls out of {purple, orange, pink}; three goals.
* ``BlockRel`` -- three blocks whose spatial relations are tracked as a 9-bit
  close/above predicate vector; every physically valid non-empty configuration
  is a goal.

Internally every state is a small integer so policies can be plain arrays.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

# --------------------------------------------------------------------------
# Draw Two Balls
# --------------------------------------------------------------------------

PURPLE, ORANGE, PINK = 0, 1, 2
COLORS = ("purple", "orange", "pink")
DTB_GOAL_NAMES = ("goal0", "goal1", "goal2")


@dataclass(frozen=True)
class DtbState:
    step: int = 0
    first_pick: Optional[int] = None

    def __post_init__(self):
        if self.step not in (0, 1, 2):
            raise ValueError(f"step must be 0, 1 or 2, got {self.step}")
        if (self.first_pick is None) != (self.step == 0):
            raise ValueError("first_pick is present iff step >= 1")
        if self.first_pick is not None and self.first_pick not in (PURPLE, ORANGE, PINK):
            raise ValueError(f"unknown color {self.first_pick}")

    @property
    def terminal(self) -> bool:
        return self.step == 2


def dtb_outcome(first: int, second: int) -> frozenset[int]:
    """Goals reached by the ordered pair of picks."""
    if (first, second) in ((ORANGE, ORANGE), (PINK, ORANGE)):
        return frozenset({1})
    if (first, second) == (ORANGE, PINK):
        return frozenset({1, 2})
    return frozenset({0})


def dtb_step(state: DtbState, action: int) -> tuple[DtbState, frozenset[int]]:
    if state.terminal:
        raise ValueError("episode already terminated")
    if action not in (PURPLE, ORANGE, PINK):
        raise ValueError(f"unknown color {action}")
    if state.step == 0:
        return DtbState(1, action), frozenset()
    return DtbState(2, state.first_pick), dtb_outcome(state.first_pick, action)


class DrawTwoBalls:
    """Integer-state view of the two-pick environment.

    State ids: 0 before any pick, ``1 + c`` after first pick ``c``, and
    ``4 + 3 * c1 + c2`` once both picks are made.
    """

    name = "dtb"
    n_actions = 3
    n_policy_states = 4
    n_goals = 3
    horizon = 2
    max_reward = 1
    action_names = COLORS

    def goal_space(self) -> list[int]:
        return list(range(self.n_goals))

    def goal_label(self, goal: int) -> str:
        return DTB_GOAL_NAMES[goal]

    def initial_states(self, goal: int) -> list[int]:
        return [0]

    def sample_initial_state(self, goal: int, rng: np.random.Generator) -> int:
        return 0

    def step(self, state: int, action: int) -> int:
        if state == 0:
            return 1 + action
        if 1 <= state <= 3:
            return 4 + 3 * (state - 1) + action
        raise ValueError(f"state {state} is terminal")

    def is_terminal(self, state: int, goal: int, t: int) -> bool:
        return state >= 4

    def achieved(self, state: int) -> frozenset[int]:
        if state < 4:
            return frozenset()
        first, second = divmod(state - 4, 3)
        return dtb_outcome(first, second)

    def is_success(self, state: int, goal: int) -> bool:
        return goal in self.achieved(state)

    def reward(self, state: int, goal: int) -> int:
        return int(self.is_success(state, goal))

    def to_state(self, state: int) -> DtbState:
        if state == 0:
            return DtbState()
        if state <= 3:
            return DtbState(1, state - 1)
        return DtbState(2, (state - 4) // 3)

    def export_goals(self) -> dict:
        return {"env": self.name, "goals": {str(g): DTB_GOAL_NAMES[g] for g in range(3)}}


# --------------------------------------------------------------------------
# BlockRel: semantic predicate configurations of three blocks
# --------------------------------------------------------------------------

BLOCKS = ("A", "B", "C")
CLOSE_PAIRS = ((0, 1), (0, 2), (1, 2))
ABOVE_PAIRS = ((0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1))


def _close_index(i: int, j: int) -> int:
    return CLOSE_PAIRS.index((min(i, j), max(i, j)))


@dataclass(frozen=True)
class PredicateVector:
    """Close flags for AB, AC, BC followed by above flags for AB, BA, AC, CA, BC, CB."""

    close: tuple[bool, bool, bool] = (False, False, False)
    above: tuple[bool, bool, bool, bool, bool, bool] = (False,) * 6

    def __post_init__(self):
        object.__setattr__(self, "close", tuple(bool(b) for b in self.close))
        object.__setattr__(self, "above", tuple(bool(b) for b in self.above))
        if len(self.close) != 3 or len(self.above) != 6:
            raise ValueError("predicate vector needs 3 close and 6 above flags")
        for k, (i, j) in enumerate(ABOVE_PAIRS):
            if self.above[k] and not self.close[_close_index(i, j)]:
                raise ValueError(f"above({BLOCKS[i]},{BLOCKS[j]}) without close")
        for k in range(0, 6, 2):
            if self.above[k] and self.above[k + 1]:
                i, j = ABOVE_PAIRS[k]
                raise ValueError(f"mutual above between {BLOCKS[i]} and {BLOCKS[j]}")

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "PredicateVector":
        bits = [int(b) for b in bits]
        if len(bits) != 9 or any(b not in (0, 1) for b in bits):
            raise ValueError(f"expected 9 binary flags, got {bits}")
        return cls(tuple(bits[:3]), tuple(bits[3:]))

    @classmethod
    def from_string(cls, text: str) -> "PredicateVector":
        return cls.from_bits(int(ch) for ch in text)

    @classmethod
    def from_relations(cls, close=(), above=()) -> "PredicateVector":
        """Build from pairs of block indices; ``above`` pairs imply ``close``."""
        c = [False] * 3
        a = [False] * 6
        for i, j in close:
            c[_close_index(i, j)] = True
        for i, j in above:
            a[ABOVE_PAIRS.index((i, j))] = True
            c[_close_index(i, j)] = True
        return cls(tuple(c), tuple(a))

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple(int(b) for b in self.close + self.above)

    def to_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    def is_close(self, i: int, j: int) -> bool:
        return self.close[_close_index(i, j)]

    def is_above(self, i: int, j: int) -> bool:
        return self.above[ABOVE_PAIRS.index((i, j))]

    def close_pairs(self) -> set[tuple[int, int]]:
        return {p for p, b in zip(CLOSE_PAIRS, self.close) if b}

    def above_pairs(self) -> set[tuple[int, int]]:
        return {p for p, b in zip(ABOVE_PAIRS, self.above) if b}

    def is_empty(self) -> bool:
        return not any(self.close)

    def satisfies(self, goal: "PredicateVector") -> bool:
        return all(c or not g for c, g in zip(self.bits, goal.bits))

    def permute(self, perm: tuple[int, int, int]) -> "PredicateVector":
        """Relabel blocks: block ``i`` becomes block ``perm[i]``."""
        return PredicateVector.from_relations(
            close=[(perm[i], perm[j]) for i, j in self.close_pairs()],
            above=[(perm[i], perm[j]) for i, j in self.above_pairs()],
        )

    def describe(self) -> str:
        parts = [f"close({BLOCKS[i]},{BLOCKS[j]})" for i, j in sorted(self.close_pairs())]
        parts += [f"above({BLOCKS[i]},{BLOCKS[j]})" for i, j in sorted(self.above_pairs())]
        return " ".join(parts) if parts else "apart"


EMPTY_CONFIG = PredicateVector()


def _cluster(close: set, i: int) -> set[int]:
    return {i} | {b for p in close if i in p for b in p}


def is_physically_valid(config: PredicateVector) -> bool:
    """Membership test for the surrogate's configuration space.

    Closeness is transitive (blocks form groups). A group holds either flat
    blocks, a two-block stack with the third block apart, or a pyramid whose
    top rests on two close blocks.
    """
    close = config.close_pairs()
    for x, y, z in itertools.permutations(range(3)):
        if (min(x, y), max(x, y)) in close and (min(y, z), max(y, z)) in close:
            if (min(x, z), max(x, z)) not in close:
                return False
    above = sorted(config.above_pairs())
    if not above:
        return True
    if len(above) == 1:
        top, bottom = above[0]
        return _cluster(close, top) == {top, bottom}
    if len(above) == 2:
        (t1, b1), (t2, b2) = above
        return t1 == t2 and b1 != b2 and len(close) == 3
    return False


@dataclass(frozen=True)
class BlockRelAction:
    """One of 16 discrete moves.

    ``bring_close(i,j)`` lifts block i and sets it down flat beside j (i joins
    j's group), ``separate(i)`` moves block i away from every other block,
    ``stack(i,j)`` puts i on top of j. A block carrying another block cannot be
    moved. Moves that would produce an invalid configuration act as noop.
    """

    kind: str
    i: Optional[int] = None
    j: Optional[int] = None

    def __str__(self):
        if self.kind == "noop":
            return "noop"
        if self.j is None:
            return f"{self.kind}({BLOCKS[self.i]})"
        return f"{self.kind}({BLOCKS[self.i]},{BLOCKS[self.j]})"


ACTIONS: tuple[BlockRelAction, ...] = (
    *(BlockRelAction("bring_close", i, j) for i, j in ABOVE_PAIRS),
    *(BlockRelAction("separate", i) for i in range(3)),
    *(BlockRelAction("stack", i, j) for i, j in ABOVE_PAIRS),
    BlockRelAction("noop"),
)
assert len(ACTIONS) == 16


def _lift(close: set, above: set, i: int) -> tuple[set, set]:
    """Remove block i from wherever it sits."""
    return {p for p in close if i not in p}, {p for p in above if i not in p}


def apply_action(config: PredicateVector, action: BlockRelAction) -> PredicateVector:
    """Deterministic predicate-level transition; illegal moves leave the config unchanged."""
    close = config.close_pairs()
    above = config.above_pairs()
    kind, i, j = action.kind, action.i, action.j
    if kind == "noop":
        return config
    if kind not in ("bring_close", "separate", "stack"):
        raise ValueError(f"unknown action kind {kind!r}")
    if any(b == i for _, b in above):
        return config  # something rests on i
    if kind == "stack" and ((i, j) in above or any(b == j for _, b in above)):
        return config
    close, above = _lift(close, above, i)
    if kind == "bring_close":
        close = close | {(min(i, k), max(i, k)) for k in _cluster(close, j)}
    elif kind == "stack":
        base = _cluster(close, j)
        above = above | {(i, k) for k in base}
        close = close | {(min(i, k), max(i, k)) for k in base}
    try:
        candidate = PredicateVector.from_relations(close=close, above=above)
    except ValueError:
        return config
    return candidate if is_physically_valid(candidate) else config


@dataclass(frozen=True)
class BlockRelState:
    config: PredicateVector = EMPTY_CONFIG
    steps_elapsed: int = 0


def blockrel_step(state: BlockRelState, action: BlockRelAction, horizon: int = 5) -> BlockRelState:
    if state.steps_elapsed >= horizon:
        raise ValueError("horizon exhausted")
    return BlockRelState(apply_action(state.config, action), state.steps_elapsed + 1)


def blockrel_reward(current: PredicateVector, goal: PredicateVector) -> int:
    """+1 per block pair whose true goal predicates hold in ``current``.

    Pairs with no true goal predicate are credited only once every other pair
    matches, which keeps the value in {0, 1, 3} on the valid configuration space.
    """
    matched = constrained = 0
    for i, j in CLOSE_PAIRS:
        flags = [_close_index(i, j), 3 + ABOVE_PAIRS.index((i, j)), 3 + ABOVE_PAIRS.index((j, i))]
        wanted = [k for k in flags if goal.bits[k]]
        if not wanted:
            continue
        constrained += 1
        matched += all(current.bits[k] for k in wanted)
    return 3 if matched == constrained else matched


def enumerate_valid_configs(horizon: int = 5) -> list[PredicateVector]:
    """Breadth-first closure of the dynamics from the all-apart configuration."""
    seen = {EMPTY_CONFIG: 0}
    order = [EMPTY_CONFIG]
    frontier = deque([EMPTY_CONFIG])
    while frontier:
        config = frontier.popleft()
        depth = seen[config]
        if depth >= horizon:
            continue
        for action in ACTIONS:
            nxt = apply_action(config, action)
            if nxt not in seen:
                seen[nxt] = depth + 1
                order.append(nxt)
                frontier.append(nxt)
    return order


class BlockRel:
    """Tabulated BlockRel environment over the enumerated configurations.

    State ids index ``configs`` (id 0 is the all-apart configuration). Goal ids
    index ``goal_configs``, which is ``configs`` without the empty one.
    """

    name = "blockrel"
    n_actions = len(ACTIONS)
    max_reward = 3
    action_names = tuple(str(a) for a in ACTIONS)

    def __init__(self, horizon: int = 5):
        if horizon < 1:
            raise ValueError("horizon must be positive")
        self.horizon = horizon
        self.configs = enumerate_valid_configs(horizon)
        self.config_index = {c: k for k, c in enumerate(self.configs)}
        self.goal_configs = [c for c in self.configs if not c.is_empty()]
        self.goal_index = {c: k for k, c in enumerate(self.goal_configs)}
        self.n_policy_states = len(self.configs)
        self.n_goals = len(self.goal_configs)
        self.next_state = np.array(
            [[self.config_index[apply_action(c, a)] for a in ACTIONS] for c in self.configs],
            dtype=np.int64,
        )
        self.rewards = np.array(
            [[blockrel_reward(c, g) for g in self.goal_configs] for c in self.configs], dtype=np.int64
        )
        self.satisfied = self.rewards == 3
        self._starts = [np.flatnonzero(~self.satisfied[:, g]) for g in range(self.n_goals)]
        self._achieved = [frozenset(np.flatnonzero(row).tolist()) for row in self.satisfied]

    def goal_space(self) -> list[int]:
        return list(range(self.n_goals))

    def goal_label(self, goal: int) -> str:
        return self.goal_configs[goal].to_string()

    def state_of(self, config: PredicateVector) -> int:
        return self.config_index[config]

    def goal_of(self, config: PredicateVector) -> int:
        return self.goal_index[config]

    def initial_states(self, goal: int) -> list[int]:
        """Start configurations from which ``goal`` still has to be achieved."""
        return self._starts[goal].tolist()

    def sample_initial_state(self, goal: int, rng: np.random.Generator) -> int:
        starts = self._starts[goal]
        return int(starts[rng.integers(len(starts))])

    def step(self, state: int, action: int) -> int:
        return int(self.next_state[state, action])

    def is_terminal(self, state: int, goal: int, t: int) -> bool:
        return bool(self.satisfied[state, goal]) or t >= self.horizon

    def achieved(self, state: int) -> frozenset[int]:
        return self._achieved[state]

    def final_goal(self, state: int) -> Optional[int]:
        """Goal id of the configuration itself, or None for the empty configuration."""
        return self.goal_index.get(self.configs[state])

    def is_success(self, state: int, goal: int) -> bool:
        return bool(self.satisfied[state, goal])

    def reward(self, state: int, goal: int) -> int:
        return int(self.rewards[state, goal])

    def reachable_within(self, start: int, horizon: Optional[int] = None) -> set[int]:
        horizon = self.horizon if horizon is None else horizon
        seen = {start}
        frontier = {start}
        for _ in range(horizon):
            frontier = {int(s) for f in frontier for s in self.next_state[f]} - seen
            seen |= frontier
        return seen

    def export_goals(self) -> dict:
        return {"env": self.name, "goals": {str(g): c.to_string() for g, c in enumerate(self.goal_configs)}}


def make_env(name: str, horizon: int = 5):
    if name == "dtb":
        return DrawTwoBalls()
    if name == "blockrel":
        return BlockRel(horizon)
    raise ValueError(f"unknown environment {name!r}")


def goal_space(env) -> list[int]:
    return env.goal_space()


def export_goals_json(env) -> str:
    return json.dumps(env.export_goals(), indent=2)
