"""Goal inference between goal-conditioned teacher and learner agents."""

__version__ = "0.1.0"
