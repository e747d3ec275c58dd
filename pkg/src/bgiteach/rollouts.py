from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bgi import Demonstration


@dataclass
class Trajectory:
    goal: int
    states: list[int]
    actions: list[int]
    rewards: list[float]
    achieved: frozenset[int] = field(default_factory=frozenset)

    @property
    def success(self) -> bool:
        return self.goal in self.achieved

    @property
    def final_state(self) -> int:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.actions)

    def add_terminal_bonus(self, bonus: float) -> None:
        if self.rewards:
            self.rewards[-1] += bonus

    def transitions(self, goal: Optional[int] = None) -> list[tuple]:
        goal = self.goal if goal is None else goal
        n = len(self.actions)
        return [
            (self.states[i], goal, self.actions[i], self.rewards[i], self.states[i + 1], i == n - 1)
            for i in range(n)
        ]

    def as_demo(self) -> Demonstration:
        return Demonstration(tuple(self.states), tuple(self.actions), self.achieved, self.goal)


def rollout(env, policy, goal: int, rng: np.random.Generator, start: Optional[int] = None) -> Trajectory:
    """Play ``policy(.|goal)`` until the environment ends the episode."""
    s = env.sample_initial_state(goal, rng) if start is None else start
    states, actions = [s], []
    t = 0
    while not env.is_terminal(s, goal, t):
        a = policy.sample_action(s, goal, rng)
        s = env.step(s, a)
        states.append(s)
        actions.append(a)
        t += 1
    rewards = [0.0] * len(actions)
    if rewards:
        rewards[-1] = float(env.reward(s, goal))
    return Trajectory(goal, states, actions, rewards, env.achieved(s))


def successful_demo(env, policy, goal: int, rng: np.random.Generator, attempts: int = 200,
                    start: Optional[int] = None) -> Optional[Demonstration]:
    """Rejection-sample rollouts until one achieves ``goal``; None if every attempt fails."""
    for _ in range(attempts):
        traj = rollout(env, policy, goal, rng, start)
        if traj.success and traj.actions:
            return traj.as_demo()
    return None
