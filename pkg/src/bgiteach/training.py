"""Two-phase teacher/learner training.

Phase 1 pre-trains a goal-conditioned teacher (naive, or pedagogical when it
rewards itself for inferring its own goals). Phase 2 trains a learner from
the frozen teacher's demonstrations: the learner infers each demonstration's
goal, the teacher accepts or rejects the inference, and accepted
demonstrations enter the learner's replay data. A pragmatic learner also
rewards itself for inferring its own goals.

Draw Two Balls uses the direct multiplicative policy update; BlockRel uses
tabular Q-learning with a replay buffer, SQIL-style demonstration rewards and
hindsight relabeling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bgi import (Demonstration, argmax_goal, infer_goal, log_likelihoods, own_goal_inference_correct,
                  posterior_from_loglik, stepwise_inference_correct)
from .envs import DrawTwoBalls
from .metrics import compute_gra, inference_accuracy, teacher_test_set
from .policy import BoltzmannQPolicy, DtbPolicy, bc_mix, dtb_update, q_update
from .rollouts import Trajectory, rollout, successful_demo

log = logging.getLogger(__name__)

ROLE_KINDS = ("naive_teacher", "pedagogical_teacher", "literal_learner", "pragmatic_learner")
VARIANTS = ("ours", "B1", "B2", "B3")
OWN, DEMO = 0, 1


@dataclass(frozen=True)
class AgentRole:
    kind: str
    bonus: float = 0.0

    def __post_init__(self):
        if self.kind not in ROLE_KINDS:
            raise ValueError(f"unknown role {self.kind!r}")
        if self.bonus < 0:
            raise ValueError("bonus must be non-negative")
        if self.kind in ("naive_teacher", "literal_learner") and self.bonus != 0:
            raise ValueError(f"{self.kind} takes no inference bonus")

    @classmethod
    def teacher(cls, name: str, bonus: float = 1.0) -> "AgentRole":
        return cls(f"{name}_teacher", bonus if name == "pedagogical" else 0.0)

    @classmethod
    def learner(cls, name: str, bonus: float = 1.0) -> "AgentRole":
        return cls(f"{name}_learner", bonus if name == "pragmatic" else 0.0)

    @property
    def is_teacher(self) -> bool:
        return self.kind.endswith("teacher")

    @property
    def self_inference(self) -> bool:
        return self.kind in ("pedagogical_teacher", "pragmatic_learner")

    @property
    def short(self) -> str:
        return self.kind.split("_")[0]


@dataclass(frozen=True)
class TrainParams:
    temperature: float = 0.1
    alpha: float = 0.03
    lr: float = 0.1
    gamma: float = 0.9
    q_init: float = 0.0
    k_replay: int = 4
    rho_demo: float = 0.5
    floor: float = 1e-4
    batch_size: int = 64
    buffer_capacity: int = 50_000
    bc_weight: float = 0.1
    demo_attempts: int = 200
    self_inference: str = "argmax"
    eval_every: int = 100
    eval_demos: int = 20
    eval_rollouts: int = 20


class GoalSetTracker:
    """Goals discovered so far, in discovery order (ties broken by goal id)."""

    def __init__(self, first_goal: int = 0):
        self.goals = [first_goal]
        self._known = {first_goal}

    def add(self, goals) -> list[int]:
        new = sorted(set(goals) - self._known)
        self.goals.extend(new)
        self._known.update(new)
        return new

    def sample(self, rng: np.random.Generator) -> int:
        return self.goals[rng.integers(len(self.goals))]

    def __contains__(self, goal) -> bool:
        return goal in self._known

    def __len__(self) -> int:
        return len(self.goals)


class _Ring:
    def __init__(self, capacity: int):
        self.ints = np.zeros((capacity, 5), dtype=np.int64)  # s, g, a, s', done
        self.rewards = np.zeros(capacity)
        self.capacity = capacity
        self.size = 0
        self.pos = 0

    def add(self, s, g, a, r, s2, done):
        self.ints[self.pos] = (s, g, a, s2, done)
        self.rewards[self.pos] = r
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, idx: np.ndarray) -> list[tuple]:
        rows = self.ints[idx].tolist()
        rs = self.rewards[idx].tolist()
        return [(s, g, a, r, s2, bool(d)) for (s, g, a, s2, d), r in zip(rows, rs)]


class ReplayBuffer:
    """Own-experience and demonstration transitions kept in separate rings.

    When both pools hold data a draw comes from the demonstration pool with
    probability ``rho_demo``.
    """

    def __init__(self, capacity: int = 50_000, rho_demo: float = 0.5):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if not 0 <= rho_demo <= 1:
            raise ValueError("rho_demo must lie in [0, 1]")
        self.rho_demo = rho_demo
        self._pools = {OWN: _Ring(capacity), DEMO: _Ring(capacity)}

    def add(self, transition: tuple, source: int = OWN) -> None:
        self._pools[source].add(*transition)

    def add_many(self, transitions, source: int = OWN) -> None:
        for t in transitions:
            self._pools[source].add(*t)

    def count(self, source: int) -> int:
        return self._pools[source].size

    def __len__(self) -> int:
        return self.count(OWN) + self.count(DEMO)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[list[tuple], list[int]]:
        """``n`` transitions drawn with replacement, plus their source tags."""
        own, demo = self.count(OWN), self.count(DEMO)
        if own == 0 and demo == 0:
            return [], []
        if own and demo:
            n_demo = int(rng.binomial(n, self.rho_demo))
        else:
            n_demo = n if demo else 0
        out, tags = [], []
        for source, k in ((DEMO, n_demo), (OWN, n - n_demo)):
            if k:
                pool = self._pools[source]
                out += pool.get(rng.integers(pool.size, size=k))
                tags += [source] * k
        return out, tags


def sqil_insert(buffer: ReplayBuffer, demo: Demonstration, goal: int, env_max_reward: float,
                original: bool = False) -> None:
    """Store an accepted demonstration.

    Modified SQIL: terminal reward ``1 + env_max_reward``, zero elsewhere.
    Original SQIL (``original=True``): every demonstration transition gets 1.
    """
    n = len(demo)
    for i, (s, a) in enumerate(demo.steps):
        last = i == n - 1
        if original:
            r = 1.0
        else:
            r = 1.0 + env_max_reward if last else 0.0
        buffer.add((s, goal, a, r, demo.states[i + 1], last), DEMO)


def hindsight_relabel(traj: Trajectory, env, k_replay: int = 4) -> list[tuple]:
    """Original transitions plus ``k_replay`` copies relabeled with the final achieved goal.

    Relabeled copies stop at the first state that satisfies the new goal and
    carry the environment reward under that goal.
    """
    original = traj.transitions()
    if k_replay == 0 or not traj.actions:
        return original
    new_goal = env.final_goal(traj.final_state)
    if new_goal is None:
        return original
    relabeled = []
    for i, a in enumerate(traj.actions):
        s2 = traj.states[i + 1]
        done = env.is_success(s2, new_goal) or i == len(traj.actions) - 1
        r = float(env.reward(s2, new_goal)) if done else 0.0
        relabeled.append((traj.states[i], new_goal, a, r, s2, done))
        if done:
            break
    return original + relabeled * k_replay


def make_policy(env, params: TrainParams):
    if isinstance(env, DrawTwoBalls):
        return DtbPolicy(env.n_goals, params.floor)
    return BoltzmannQPolicy(env.n_policy_states, env.n_goals, env.n_actions, params.temperature, params.q_init)


def _self_inference_bonus(env, policy, role: AgentRole, traj: Trajectory, goal: int, candidates,
                          mode: str = "argmax", rng=None):
    """Inference bonus earned by one own trajectory.

    Draw Two Balls returns one flag per pick (the bonus is credited to the
    picks that identify the goal). The Q-learning path returns the reward
    bonus: ``role.bonus`` when argmax or sampled inference recovers the goal,
    or ``role.bonus * P(goal | trajectory)`` in ``posterior`` mode.
    """
    if not (role.self_inference and role.bonus > 0 and traj.success and traj.actions):
        return 0.0
    demo = traj.as_demo()
    if isinstance(env, DrawTwoBalls):
        flags = stepwise_inference_correct(policy, demo, goal, candidates)
        return flags if any(flags) else 0.0
    if mode == "argmax":
        return role.bonus if own_goal_inference_correct(policy, demo, goal, candidates) else 0.0
    post = posterior_from_loglik(log_likelihoods(policy, demo, candidates), candidates)
    if mode == "posterior":
        return role.bonus * post.prob(goal)
    if mode == "sample":
        return role.bonus if infer_goal(post, "sample", rng) == goal else 0.0
    raise ValueError(f"unknown self-inference mode {mode!r}")


def _update_from_buffer(policy, buffer: ReplayBuffer, params: TrainParams, rng, bc: bool = False):
    batch, tags = buffer.sample(params.batch_size, rng)
    if not batch:
        return
    q_update(policy, batch, params.gamma, params.lr)
    if bc:
        for (s, g, a, *_), tag in zip(batch, tags):
            if tag == DEMO:
                bc_mix(policy, s, g, a, params.bc_weight)


def _streams(seed: int, phase: int) -> np.random.Generator:
    return np.random.default_rng([seed, phase])


def _eval_rng(seed: int, phase: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, phase, epoch, 99])


@dataclass
class TeacherResult:
    policy: object
    role: AgentRole
    curve: list[dict]
    goals: list[int]
    bonuses: int = 0


@dataclass
class LearnerResult:
    policy: object
    role: AgentRole
    curve: list[dict]
    goals: list[int]
    variant: str
    demo_budget: int
    accepted_demos: int = 0
    offered_demos: int = 0
    bonuses: int = 0
    demo_pool: dict = field(default_factory=dict)


def phase1_pretrain(env, role: AgentRole, params: TrainParams, epochs: int, seed: int = 0,
                    variant: str = "ours") -> TeacherResult:
    if not role.is_teacher:
        raise ValueError(f"{role.kind} is not a teacher role")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    rng = _streams(seed, 1)
    policy = make_policy(env, params)
    tracker = GoalSetTracker(env.goal_space()[0])
    buffer = None if isinstance(env, DrawTwoBalls) else ReplayBuffer(params.buffer_capacity, params.rho_demo)
    curve, bonuses = [], 0
    for epoch in range(1, epochs + 1):
        goal = tracker.sample(rng)
        traj = rollout(env, policy, goal, rng)
        bonus = _self_inference_bonus(env, policy, role, traj, goal, env.goal_space(), params.self_inference, rng)
        bonuses += bool(bonus)
        if buffer is None:
            dtb_update(policy, traj.states[:-1], traj.actions, goal, traj.success, bonus, params.alpha, role.bonus)
        else:
            if bonus:
                traj.add_terminal_bonus(bonus)
            buffer.add_many(hindsight_relabel(traj, env, params.k_replay), OWN)
            _update_from_buffer(policy, buffer, params, rng)
        tracker.add(traj.achieved)
        if params.eval_every and (epoch % params.eval_every == 0 or epoch == epochs):
            curve.append(_teacher_row(env, policy, params, seed, epoch, variant))
    return TeacherResult(policy, role, curve, list(tracker.goals), bonuses)


def _teacher_row(env, policy, params, seed, epoch, variant) -> dict:
    rng = _eval_rng(seed, 1, epoch)
    goals = env.goal_space()
    own = teacher_test_set(env, policy, goals, params.eval_demos, rng, params.demo_attempts)
    ogia = inference_accuracy(policy, own, goals).value
    gra = compute_gra(policy, env, goals, params.eval_rollouts, rng).value
    return dict(epoch=epoch, seed=seed, variant=variant, phase=1, GIA=ogia, OGIA=ogia, GRA=gra, GIAxGRA=ogia * gra)


def build_demo_pool(env, teacher, demo_budget: int, rng: np.random.Generator, attempts: int = 200):
    """``demo_budget`` successful teacher demonstrations per goal.

    Slots the teacher fails to fill within ``attempts`` rollouts are refilled
    from the goal's successful demonstrations.
    """
    pool = {}
    for g in env.goal_space():
        demos, failed = [], 0
        for _ in range(demo_budget):
            d = successful_demo(env, teacher, g, rng, attempts)
            if d is None:
                failed += 1
            else:
                demos.append(d)
        if failed:
            log.warning("teacher failed %d/%d demonstrations of goal %d", failed, demo_budget, g)
            if demos:
                demos += [demos[i % len(demos)] for i in range(failed)]
        pool[g] = demos
    return pool


def phase2_train(env, teacher, role: AgentRole, demo_budget: int, params: TrainParams, epochs: int,
                 seed: int = 0, variant: str = "ours") -> LearnerResult:
    if role.is_teacher:
        raise ValueError(f"{role.kind} is not a learner role")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if demo_budget < 0:
        raise ValueError("demo_budget must be non-negative")
    if teacher.n_goals != env.n_goals or teacher.n_states != env.n_policy_states:
        raise ValueError("teacher policy does not match the environment")
    is_dtb = isinstance(env, DrawTwoBalls)
    rng = _streams(seed, 2)
    pool = build_demo_pool(env, teacher, demo_budget, _streams(seed, 3), params.demo_attempts)
    test_demos = teacher_test_set(env, teacher, env.goal_space(), params.eval_demos, _streams(seed, 5),
                                  params.demo_attempts)
    learner = make_policy(env, params)
    tracker = GoalSetTracker(env.goal_space()[0])
    buffer = None if is_dtb else ReplayBuffer(params.buffer_capacity, params.rho_demo)
    result = LearnerResult(learner, role, [], [], variant, demo_budget, demo_pool=pool)
    for epoch in range(1, epochs + 1):
        demo_goal = tracker.sample(rng)
        demos = pool.get(demo_goal) or []
        if demos:
            demo = demos[rng.integers(len(demos))]
            ll = log_likelihoods(learner, demo, tracker.goals)
            inferred = argmax_goal(ll, tracker.goals)
            result.offered_demos += 1
            if inferred == demo_goal:
                result.accepted_demos += 1
                if is_dtb:
                    dtb_update(learner, demo.states[:-1], demo.actions, demo_goal, True, False, params.alpha)
                else:
                    sqil_insert(buffer, demo, demo_goal, env.max_reward, original=variant == "B3")
        else:
            inferred = demo_goal
        traj = rollout(env, learner, inferred, rng)
        bonus = _self_inference_bonus(env, learner, role, traj, inferred, tracker.goals, params.self_inference, rng)
        result.bonuses += bool(bonus)
        if is_dtb:
            dtb_update(learner, traj.states[:-1], traj.actions, inferred, traj.success, bonus, params.alpha, role.bonus)
        else:
            if variant == "B3":
                # original SQIL: collected experience carries no environment reward
                traj.rewards = [0.0] * len(traj.rewards)
            if bonus:
                traj.add_terminal_bonus(bonus)
            if variant != "B1":
                transitions = hindsight_relabel(traj, env, params.k_replay)
                if variant == "B3":
                    n = len(traj.actions)
                    transitions = transitions[:n] + [(s, g, a, 0.0, s2, d) for s, g, a, _, s2, d in transitions[n:]]
                buffer.add_many(transitions, OWN)
            _update_from_buffer(learner, buffer, params, rng, bc=variant == "B2")
        tracker.add(traj.achieved)
        if params.eval_every and (epoch % params.eval_every == 0 or epoch == epochs):
            result.curve.append(_learner_row(env, learner, params, test_demos, seed, epoch, variant))
    result.goals = list(tracker.goals)
    return result


def _learner_row(env, learner, params, test_demos, seed, epoch, variant) -> dict:
    rng = _eval_rng(seed, 2, epoch)
    goals = env.goal_space()
    gia = inference_accuracy(learner, test_demos, goals).value
    own = teacher_test_set(env, learner, goals, params.eval_demos, rng, params.demo_attempts)
    ogia = inference_accuracy(learner, own, goals).value
    gra = compute_gra(learner, env, goals, params.eval_rollouts, rng).value
    return dict(epoch=epoch, seed=seed, variant=variant, phase=2, GIA=gia, OGIA=ogia, GRA=gra, GIAxGRA=gia * gra)
