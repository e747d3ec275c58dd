"""Goal inference / goal reaching metrics and the ambiguity score."""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bgi import Demonstration, argmax_goal, log_likelihoods
from .envs import BLOCKS, PredicateVector, is_physically_valid
from .rollouts import rollout, successful_demo

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rate:
    successes: int
    trials: int
    excluded_goals: tuple[int, ...] = ()

    @property
    def value(self) -> float:
        if self.trials == 0:
            return float("nan")
        return self.successes / self.trials


@dataclass
class MetricReport:
    gia: float
    ogia: float
    gra: float
    n_test_demos_per_goal: int
    n_test_rollouts_per_goal: int
    seed: int
    gia_trials: int = 0
    ogia_trials: int = 0
    gra_trials: int = 0
    gia_x_gra: float = field(init=False)

    def __post_init__(self):
        self.gia_x_gra = self.gia * self.gra

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        data = dict(data)
        data.pop("gia_x_gra", None)
        return cls(**data)

    CSV_FIELDS = ("seed", "gia", "ogia", "gra", "gia_x_gra", "n_test_demos_per_goal", "n_test_rollouts_per_goal",
                  "gia_trials", "ogia_trials", "gra_trials")

    def csv_row(self) -> list:
        d = self.to_dict()
        return [d[k] for k in self.CSV_FIELDS]


def teacher_test_set(env, teacher, goals: Sequence[int], n: int, rng: np.random.Generator,
                     attempts: int = 200) -> dict[int, list[Demonstration]]:
    """``n`` successful demonstrations of ``teacher`` per goal; unreachable goals get an empty list."""
    out = {}
    for g in goals:
        demos = []
        for _ in range(n):
            d = successful_demo(env, teacher, g, rng, attempts)
            if d is None:
                log.warning("policy failed to demonstrate goal %s within %d attempts", g, attempts)
                break
            demos.append(d)
        out[g] = demos
    return out


def inference_accuracy(policy, demos_by_goal: dict[int, list[Demonstration]], goals: Sequence[int]) -> Rate:
    table = policy.log_prob_table()
    goals = list(goals)
    correct = total = 0
    excluded = []
    for g, demos in demos_by_goal.items():
        if not demos:
            excluded.append(g)
            continue
        for d in demos:
            correct += argmax_goal(log_likelihoods(policy, d, goals, table), goals) == g
            total += 1
    return Rate(correct, total, tuple(excluded))


def compute_gia(learner, teacher, env, goals: Optional[Sequence[int]] = None, n: int = 50,
                rng: Optional[np.random.Generator] = None, test_demos=None, attempts: int = 200) -> Rate:
    """Share of teacher demonstrations whose goal the learner recovers by argmax inference."""
    goals = env.goal_space() if goals is None else list(goals)
    if test_demos is None:
        if n <= 0:
            raise ValueError("n must be positive")
        test_demos = teacher_test_set(env, teacher, goals, n, rng, attempts)
    return inference_accuracy(learner, test_demos, goals)


def compute_ogia(policy, env, goals: Optional[Sequence[int]] = None, n: int = 50,
                 rng: Optional[np.random.Generator] = None, attempts: int = 200) -> Rate:
    """Same as GIA with the agent inferring goals of its own successful trajectories."""
    return compute_gia(policy, policy, env, goals, n, rng, attempts=attempts)


def compute_gra(policy, env, goals: Optional[Sequence[int]] = None, n: int = 50,
                rng: Optional[np.random.Generator] = None) -> Rate:
    if n <= 0:
        raise ValueError("GRA needs at least one rollout per goal")
    goals = env.goal_space() if goals is None else list(goals)
    hits = sum(rollout(env, policy, g, rng).success for g in goals for _ in range(n))
    return Rate(hits, n * len(goals))


def evaluate(learner, teacher, env, seed: int, n_demos: int, n_rollouts: int,
             rng: np.random.Generator, test_demos=None) -> MetricReport:
    goals = env.goal_space()
    gia = compute_gia(learner, teacher, env, goals, n_demos, rng, test_demos)
    ogia = compute_ogia(learner, env, goals, n_demos, rng)
    gra = compute_gra(learner, env, goals, n_rollouts, rng)
    return MetricReport(gia.value, ogia.value, gra.value, n_demos, n_rollouts, seed,
                        gia.trials, ogia.trials, gra.trials)


# --------------------------------------------------------------------------
# Ambiguity score
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AmbiguousSituation:
    initial_state: int
    goal_pair: tuple[int, int]


G, R, B = 0, 1, 2  # green, red, blue

# (initial relations, first goal, second goal); "apart" lists blocks touching nothing
BASE_SITUATIONS = (
    (dict(close=[(G, R)], apart=[B]),
     dict(close=[(G, R), (B, G)]),
     dict(close=[(G, B)], apart=[R])),
    (dict(close=[(G, R)], apart=[B]),
     dict(close=[(G, R)], above=[(B, G)]),
     dict(above=[(B, G)], apart=[R])),
    (dict(above=[(G, R)], apart=[B]),
     dict(above=[(G, R)], close=[(B, R)]),
     dict(close=[(B, G)], apart=[G])),
    (dict(above=[(G, R)], apart=[B]),
     dict(above=[(G, R)], close=[(B, R)]),
     dict(close=[(B, R)], apart=[G])),
    (dict(above=[(G, R)], apart=[B]),
     dict(above=[(G, R)], close=[(B, G)]),
     dict(close=[(B, G)], apart=[R])),
    (dict(close=[(G, R)], apart=[B]),
     dict(close=[(G, R)], above=[(B, G), (B, R)]),
     dict(close=[(B, R), (B, G), (G, R)])),
)


def relations_to_config(close=(), above=(), apart=()) -> Optional[PredicateVector]:
    """Closure of the listed relations, or None when no valid configuration matches them."""
    pairs = {(min(i, j), max(i, j)) for i, j in list(close) + list(above)}
    changed = True
    while changed:
        changed = False
        for (a, b), (c, d) in itertools.product(list(pairs), repeat=2):
            shared = {a, b} & {c, d}
            if len(shared) == 1 and (a, b) != (c, d):
                x, y = sorted(({a, b} | {c, d}) - shared)
                if (x, y) not in pairs:
                    pairs.add((x, y))
                    changed = True
    if any(k in p for p in pairs for k in apart):
        return None
    try:
        config = PredicateVector.from_relations(close=pairs, above=above)
    except ValueError:
        return None
    return config if is_physically_valid(config) else None


def build_ambiguous_situations(env) -> list[AmbiguousSituation]:
    """Listed ambiguous situations under every block relabeling, keeping those the dynamics support."""
    out: list[AmbiguousSituation] = []
    seen = set()
    for k, (init, g1, g2) in enumerate(BASE_SITUATIONS):
        configs = [relations_to_config(**spec) for spec in (init, g1, g2)]
        if any(c is None for c in configs) or configs[1].is_empty() or configs[2].is_empty():
            log.info("dropping ambiguous situation %d: not representable in the block surrogate", k)
            continue
        for perm in itertools.permutations(range(3)):
            ci, c1, c2 = (c.permute(perm) for c in configs)
            key = (ci, c1, c2)
            if key in seen:
                continue
            seen.add(key)
            s0 = env.state_of(ci)
            pair = (env.goal_of(c1), env.goal_of(c2))
            reach = env.reachable_within(s0)
            if any(env.is_success(s0, g) or not any(env.is_success(s, g) for s in reach) for g in pair):
                log.info("dropping situation %d under %s: goal not achievable from %s",
                         k, "".join(BLOCKS[p] for p in perm), ci.describe())
                continue
            out.append(AmbiguousSituation(s0, pair))
    return out


def ambiguity_score(teacher, env, situations: Sequence[AmbiguousSituation], n_samples: int,
                    rng: np.random.Generator, attempts: int = 200) -> Rate:
    """Fraction of sampled situations where both goal demonstrations end with the same achieved goals."""
    if not situations:
        raise ValueError("no ambiguous situations")
    ambiguous = trials = 0
    for idx in rng.integers(len(situations), size=n_samples):
        sit = situations[idx]
        demos = [successful_demo(env, teacher, g, rng, attempts, start=sit.initial_state) for g in sit.goal_pair]
        if any(d is None for d in demos):
            log.warning("teacher cannot achieve %s from state %d; sample excluded", sit.goal_pair, sit.initial_state)
            continue
        ambiguous += demos[0].achieved_goals == demos[1].achieved_goals
        trials += 1
    return Rate(ambiguous, trials)
