"""Policy-free demonstration -> goal classifier used as a foil for BGI.

A multinomial naive Bayes model over discrete trajectory features. It only
ever sees the labeled demonstrations, never a policy.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .bgi import Demonstration, argmax_goal


@dataclass(frozen=True)
class TrajectoryFeatures:
    """Token counts describing one demonstration.

    Tokens are ``("sa", s, a)`` per step, ``("final", g)`` per goal achieved
    by the final state and ``("act", a)`` per action.
    """

    counts: tuple[tuple[tuple, int], ...]

    @classmethod
    def from_demo(cls, demo: Demonstration) -> "TrajectoryFeatures":
        c: Counter = Counter()
        for s, a in demo.steps:
            c[("sa", s, a)] += 1
            c[("act", a)] += 1
        for g in demo.achieved_goals:
            c[("final", g)] += 1
        return cls(tuple(sorted(c.items())))

    def as_dict(self) -> dict[tuple, int]:
        return dict(self.counts)


class NotFittedError(RuntimeError):
    pass


class GoalClassifier:
    """Laplace-smoothed multinomial naive Bayes over ``TrajectoryFeatures``."""

    def __init__(self, goals: Sequence[int], smoothing: float = 1.0):
        if smoothing <= 0:
            raise ValueError("smoothing must be positive")
        if len(set(goals)) != len(goals) or not goals:
            raise ValueError("goals must be a non-empty list of distinct ids")
        self.goals = list(goals)
        self.smoothing = smoothing
        self.vocab: Optional[dict[tuple, int]] = None
        self.log_prior: Optional[np.ndarray] = None
        self.log_weights: Optional[np.ndarray] = None

    @property
    def fitted(self) -> bool:
        return self.vocab is not None

    def fit(self, labeled: Iterable[tuple[Demonstration, int]]) -> "GoalClassifier":
        labeled = list(labeled)
        feats = [(TrajectoryFeatures.from_demo(d).as_dict(), g) for d, g in labeled]
        present = {g for _, g in feats}
        unknown = present - set(self.goals)
        if unknown:
            raise ValueError(f"labels outside the goal set: {sorted(unknown)}")
        missing = [g for g in self.goals if g not in present]
        if missing:
            raise ValueError(f"no training demonstration for goals {missing}")
        vocab: dict[tuple, int] = {}
        for f, _ in feats:
            for tok in f:
                vocab.setdefault(tok, len(vocab))
        row = {g: k for k, g in enumerate(self.goals)}
        counts = np.zeros((len(self.goals), len(vocab)))
        docs = np.zeros(len(self.goals))
        for f, g in feats:
            docs[row[g]] += 1
            for tok, n in f.items():
                counts[row[g], vocab[tok]] += n
        smoothed = counts + self.smoothing
        self.vocab = vocab
        self.log_prior = np.log(docs / docs.sum())
        self.log_weights = np.log(smoothed) - np.log(smoothed.sum(axis=1, keepdims=True))
        return self

    def _scores(self, demo: Demonstration) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("classifier has not been fitted")
        x = np.zeros(len(self.vocab))
        for tok, n in TrajectoryFeatures.from_demo(demo).counts:
            k = self.vocab.get(tok)
            if k is not None:
                x[k] += n
        return self.log_prior + self.log_weights @ x

    def predict_proba(self, demo: Demonstration) -> np.ndarray:
        scores = self._scores(demo)
        p = np.exp(scores - scores.max())
        return p / p.sum()

    def predict(self, demo: Demonstration) -> int:
        return argmax_goal(self._scores(demo), self.goals)

    def accuracy(self, test: dict[int, list[Demonstration]]) -> float:
        trials = [(self.predict(d), g) for g, demos in test.items() for d in demos]
        if not trials:
            return float("nan")
        return sum(p == g for p, g in trials) / len(trials)


def fit_on_pool(pool: dict[int, list[Demonstration]], goals: Sequence[int], smoothing: float = 1.0) -> GoalClassifier:
    labeled = [(d, g) for g in goals for d in pool.get(g, [])]
    return GoalClassifier(goals, smoothing).fit(labeled)
