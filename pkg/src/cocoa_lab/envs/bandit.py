"""One-step two-armed bandit."""
from __future__ import annotations

from ..mdp import TabularMDP


def build_bandit(rewards=(1.0, -2.0)) -> TabularMDP:
    """One decision state with deterministic arm rewards, then absorption."""
    n = len(rewards)
    transitions = [[[(1, 1.0)] for _ in range(n)], [[(1, 1.0)] for _ in range(n)]]
    reward_lists = [[[(float(r), 1.0)] for r in rewards], [[(0.0, 1.0)] for _ in range(n)]]
    return TabularMDP.from_lists(
        transitions, reward_lists, start_state=0, absorbing_state=1, horizon=1,
        state_labels=["decision", "absorbing"], name="bandit",
    )
