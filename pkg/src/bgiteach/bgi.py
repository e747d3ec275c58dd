"""Bayesian goal inference from demonstrations.

P(d | g) is the product of the policy's action probabilities along the
demonstration (transitions are deterministic), and P(g | d) follows from
Bayes' rule with a prior over candidate goals. Everything is kept in the
log domain and normalized with a max-shifted log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class InvalidDemonstration(ValueError):
    pass


@dataclass(frozen=True)
class Demonstration:
    states: tuple[int, ...]
    actions: tuple[int, ...]
    achieved_goals: frozenset[int] = field(default_factory=frozenset)
    intended_goal: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "achieved_goals", frozenset(self.achieved_goals))
        if not self.actions:
            raise InvalidDemonstration("a demonstration needs at least one step")
        if len(self.states) != len(self.actions) + 1:
            raise InvalidDemonstration("expected one more state than actions (the final state)")

    @property
    def steps(self) -> list[tuple[int, int]]:
        return list(zip(self.states[:-1], self.actions))

    @property
    def final_state(self) -> int:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.actions)

    def validate(self, env) -> "Demonstration":
        for i, (s, a) in enumerate(self.steps):
            if env.step(s, a) != self.states[i + 1]:
                raise InvalidDemonstration(f"step {i}: action {a} from state {s} does not lead to {self.states[i + 1]}")
        if self.achieved_goals != env.achieved(self.final_state):
            raise InvalidDemonstration("achieved goals disagree with the final state")
        return self


def logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(x - m))))


def log_likelihoods(policy, demo: Demonstration, goals: Optional[Sequence[int]] = None, table=None) -> np.ndarray:
    """log P(demo | g) for every goal in ``goals`` (all goals when omitted)."""
    lp = policy.log_prob_table() if table is None else table
    states = np.asarray(demo.states[:-1])
    actions = np.asarray(demo.actions)
    per_goal = lp[states, :, actions].sum(axis=0)
    return per_goal if goals is None else per_goal[np.asarray(goals, dtype=int)]


def log_likelihood(policy, demo: Demonstration, goal: int, env=None) -> float:
    if env is not None:
        demo.validate(env)
    return float(log_likelihoods(policy, demo, [goal])[0])


@dataclass(frozen=True)
class GoalPosterior:
    goals: tuple[int, ...]
    log_weights: np.ndarray
    normalized: np.ndarray

    def prob(self, goal: int) -> float:
        return float(self.normalized[self.goals.index(goal)])

    def as_dict(self) -> dict[int, float]:
        return {g: float(p) for g, p in zip(self.goals, self.normalized)}


def posterior_from_loglik(loglik: np.ndarray, goals: Sequence[int], prior: Optional[Sequence[float]] = None) -> GoalPosterior:
    goals = tuple(int(g) for g in goals)
    if prior is None:
        log_prior = np.full(len(goals), -np.log(len(goals)))
    else:
        prior = np.asarray(prior, dtype=float)
        if prior.shape != (len(goals),):
            raise ValueError("prior must give one probability per candidate goal")
        if np.any(prior < 0) or not np.any(prior > 0):
            raise ValueError("prior must be non-negative with some positive mass")
        if abs(prior.sum() - 1) > 1e-9:
            raise ValueError(f"prior sums to {prior.sum()}, not 1")
        with np.errstate(divide="ignore"):
            log_prior = np.log(prior)
    log_w = np.asarray(loglik, dtype=float) + log_prior
    return GoalPosterior(goals, log_w, np.exp(log_w - logsumexp(log_w)))


def posterior(policy, demo: Demonstration, prior: Optional[Sequence[float]] = None,
              goals: Optional[Sequence[int]] = None, env=None) -> GoalPosterior:
    """P(G | demo) over ``goals`` (default: every goal the policy knows)."""
    if env is not None:
        demo.validate(env)
    if goals is None:
        goals = range(policy.n_goals)
    goals = list(goals)
    return posterior_from_loglik(log_likelihoods(policy, demo, goals), goals, prior)


def infer_goal(post: GoalPosterior, mode: str = "argmax", rng: Optional[np.random.Generator] = None) -> int:
    """Most probable goal (lowest index among ties) or a posterior sample."""
    if mode == "argmax":
        best = np.flatnonzero(post.log_weights == post.log_weights.max())
        return min(post.goals[i] for i in best)
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        cdf = np.cumsum(post.normalized)
        i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(cdf) - 1)
        return post.goals[i]
    raise ValueError(f"unknown inference mode {mode!r}")


def argmax_goal(loglik: np.ndarray, goals: Sequence[int]) -> int:
    """Fast path for uniform-prior argmax inference; same tie rule as ``infer_goal``."""
    best = np.flatnonzero(loglik == loglik.max())
    return min(int(goals[i]) for i in best)


def own_goal_inference_correct(policy, demo: Demonstration, pursued_goal: int,
                               goals: Optional[Sequence[int]] = None) -> bool:
    """Does argmax inference (uniform prior) on the agent's own trajectory recover ``pursued_goal``?"""
    goals = list(range(policy.n_goals)) if goals is None else list(goals)
    return argmax_goal(log_likelihoods(policy, demo, goals), goals) == pursued_goal


def stepwise_inference_correct(policy, demo: Demonstration, pursued_goal: int,
                               goals: Optional[Sequence[int]] = None) -> list[bool]:
    """Per step, does argmax inference from that single (state, action) pair recover ``pursued_goal``?

    Used to credit the inference bonus to the individual decisions that
    identify the goal.
    """
    goals = list(range(policy.n_goals)) if goals is None else list(goals)
    lp = policy.log_prob_table()[:, np.asarray(goals, dtype=int), :]
    return [argmax_goal(lp[s, :, a], goals) == pursued_goal for s, a in demo.steps]
