"""Goal-conditioned stochastic policies with exact action probabilities.

Both policy classes expose the same read interface: ``probs(state, goal)``
and ``log_prob_table()`` (an array indexed ``[state, goal, action]``), which is
what Bayesian goal inference consumes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

SNAPSHOT_FORMAT = "bgiteach.policy"
SNAPSHOT_VERSION = 1


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def _sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, len(p) - 1)


class _PolicyBase:
    n_states: int
    n_goals: int
    n_actions: int

    def probs(self, state: int, goal: int) -> np.ndarray:
        raise NotImplementedError

    def log_prob_table(self) -> np.ndarray:
        raise NotImplementedError

    def action_prob(self, state: int, goal: int, action: int) -> float:
        return float(self.probs(state, goal)[action])

    def log_action_prob(self, state: int, goal: int, action: int) -> float:
        return float(self.log_prob_table()[state, goal, action])

    def sample_action(self, state: int, goal: int, rng: np.random.Generator) -> int:
        return _sample_index(self.probs(state, goal), rng)


class DtbPolicy(_PolicyBase):
    """Two-stage categorical policy for Draw Two Balls.

    ``table[0, g]`` is P(first ball | g) and ``table[1 + x, g]`` is
    P(second ball | first ball = x, g).
    """

    kind = "dtb"

    def __init__(self, n_goals: int = 3, floor: float = 1e-4):
        if not 0 < floor < 1 / 3:
            raise ValueError("floor must lie in (0, 1/3)")
        self.n_states, self.n_goals, self.n_actions = 4, n_goals, 3
        self.floor = floor
        self.table = np.full((4, n_goals, 3), 1.0 / 3)

    @property
    def p_first(self) -> np.ndarray:
        return self.table[0]

    @property
    def p_second(self) -> np.ndarray:
        """Indexed ``[goal, first, second]``."""
        return self.table[1:].transpose(1, 0, 2)

    def probs(self, state: int, goal: int) -> np.ndarray:
        return self.table[state, goal]

    def log_prob_table(self) -> np.ndarray:
        return np.log(self.table)

    def set_row(self, state: int, goal: int, row: Sequence[float]) -> None:
        row = np.asarray(row, dtype=float)
        if row.shape != (3,) or abs(row.sum() - 1) > 1e-9 or row.min() < 0:
            raise ValueError(f"not a categorical over 3 colors: {row}")
        self.table[state, goal] = _apply_floor(row, self.floor)

    def copy(self) -> "DtbPolicy":
        other = DtbPolicy(self.n_goals, self.floor)
        other.table = self.table.copy()
        return other


def _apply_floor(row: np.ndarray, floor: float) -> np.ndarray:
    row = row / row.sum()
    low = row < floor
    while low.any():
        free = ~low
        row = np.where(low, floor, row * (1 - floor * low.sum()) / row[free].sum())
        newly = (row < floor) & ~low
        if not newly.any():
            break
        low |= newly
    return row


def _scale_and_renormalize(row: np.ndarray, action: int, factor: float, floor: float) -> np.ndarray:
    row = row.copy()
    row[action] *= factor
    return _apply_floor(row / row.sum(), floor)


def dtb_update(
    policy: DtbPolicy,
    states: Sequence[int],
    actions: Sequence[int],
    goal: int,
    success: bool,
    inference_bonus: Union[bool, Sequence[bool]] = False,
    alpha: float = 0.1,
    bonus_scale: float = 1.0,
) -> DtbPolicy:
    """Reinforce or weaken one two-pick sequence for ``goal`` (in place).

    Each selected probability is multiplied by ``1 + alpha`` on success or
    ``1 - alpha`` on failure and its categorical is renormalized.
    ``inference_bonus`` applies a second factor ``1 + alpha * bonus_scale``,
    either to both picks (a bool) or per pick (one flag per action).
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if len(actions) != 2 or len(states) != 2:
        raise ValueError("a Draw Two Balls trajectory has exactly two picks")
    flags = [bool(inference_bonus)] * 2 if np.ndim(inference_bonus) == 0 else [bool(b) for b in inference_bonus]
    if len(flags) != 2:
        raise ValueError("expected one inference flag per pick")
    if any(flags) and not success:
        raise ValueError("the inference bonus only applies to successful sequences")
    base = 1 + alpha if success else 1 - alpha
    for s, a, bonus in zip(states, actions, flags):
        factors = (base, 1 + alpha * bonus_scale) if bonus else (base,)
        for f in factors:
            policy.table[s, goal] = _scale_and_renormalize(policy.table[s, goal], a, f, policy.floor)
    return policy


class BoltzmannQPolicy(_PolicyBase):
    """Softmax over a tabular Q function: pi(a|s,g) = exp(q/tau) / sum exp(q/tau)."""

    kind = "boltzmann_q"

    def __init__(self, n_states: int, n_goals: int, n_actions: int, temperature: float = 0.5,
                 q_init: float = 0.0):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.n_states, self.n_goals, self.n_actions = n_states, n_goals, n_actions
        self.temperature = temperature
        # a constant start keeps the policy uniform; a high one drives exploration
        self.q = np.full((n_states, n_goals, n_actions), float(q_init))

    def probs(self, state: int, goal: int) -> np.ndarray:
        z = self.q[state, goal] / self.temperature
        e = np.exp(z - z.max())
        return e / e.sum()

    def log_prob_table(self) -> np.ndarray:
        return log_softmax(self.q / self.temperature)

    def copy(self) -> "BoltzmannQPolicy":
        other = BoltzmannQPolicy(self.n_states, self.n_goals, self.n_actions, self.temperature)
        other.q = self.q.copy()
        return other


Transition = tuple  # (state, goal, action, reward, next_state, done)


def q_update(
    policy: BoltzmannQPolicy,
    batch: Iterable[Transition],
    gamma: float = 0.9,
    lr: float = 0.1,
) -> BoltzmannQPolicy:
    """One-step Q-learning applied transition by transition, in batch order (in place)."""
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if not 0 < lr <= 1:
        raise ValueError(f"lr must lie in (0, 1], got {lr}")
    q = policy.q
    for s, g, a, r, s2, done in batch:
        target = r if done else r + gamma * q[s2, g].max()
        q[s, g, a] += lr * (target - q[s, g, a])
    return policy


def bc_mix(policy: BoltzmannQPolicy, state: int, goal: int, action: int, weight: float) -> None:
    """Pull pi(.|state, goal) toward ``action`` by mixing in a point mass.

    The Q row is rewritten so its softmax equals the mixture while its
    log-sum-exp (soft state value) is kept.
    """
    if not 0 <= weight < 1:
        raise ValueError(f"weight must lie in [0, 1), got {weight}")
    tau = policy.temperature
    row = policy.q[state, goal]
    z = row / tau
    soft_value = z.max() + np.log(np.exp(z - z.max()).sum())
    mixed = (1 - weight) * policy.probs(state, goal)
    mixed[action] += weight
    # keep full support when a probability underflows
    policy.q[state, goal] = tau * (np.log(np.maximum(mixed, np.finfo(float).tiny)) + soft_value)


Policy = Union[DtbPolicy, BoltzmannQPolicy]


def policy_to_dict(policy: Policy, env_name: str) -> dict:
    data = {"format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION, "kind": policy.kind, "env": env_name}
    if isinstance(policy, DtbPolicy):
        data.update(floor=policy.floor, n_goals=policy.n_goals, table=policy.table.tolist())
    else:
        data.update(
            temperature=policy.temperature,
            shape=list(policy.q.shape),
            q=policy.q.tolist(),
        )
    return data


def policy_from_dict(data: dict) -> tuple[Policy, str]:
    if data.get("format") != SNAPSHOT_FORMAT:
        raise ValueError("not a policy snapshot")
    if data.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {data.get('version')}")
    if data["kind"] == "dtb":
        policy = DtbPolicy(data["n_goals"], data["floor"])
        policy.table = np.array(data["table"], dtype=float)
    elif data["kind"] == "boltzmann_q":
        policy = BoltzmannQPolicy(*data["shape"], temperature=data["temperature"])
        policy.q = np.array(data["q"], dtype=float)
    else:
        raise ValueError(f"unknown policy kind {data['kind']!r}")
    return policy, data["env"]


def save_policy(policy: Policy, path: Union[str, Path], env_name: str) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(policy, env_name)))


def load_policy(path: Union[str, Path]) -> tuple[Policy, str]:
    return policy_from_dict(json.loads(Path(path).read_text()))
