"""The track-MDP state machine.

The surrogate fully observable state is (last perfectly observed cell, steps
since that observation, actions taken since). Detection or the forced safe
action resets the counter; the exit signal moves to the terminal state. All
states are immutable values, so stepping is a pure function of an externally
sampled hidden state.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ImpossibleMissError, StateBudgetError
from .grid import (
    EXIT_STATE,
    EXITED,
    RewardParams,
    SensingAction,
    TransitionKernel,
    UNINFORMATIVE,
    reward,
    seen,
)

#: Probability mass below which a conditioning event is treated as impossible.
MASS_TOL = 1e-13

DEFAULT_STATE_BUDGET = 10_000_000


@dataclass(frozen=True)
class TrackState:
    """Active track state: last seen cell, miss count n, and the n non-safe
    actions taken since (in order)."""

    last_seen: int
    n: int
    history: tuple = ()

    def __post_init__(self):
        if len(self.history) != self.n:
            raise ValueError("history length must equal n")

    def to_json(self) -> dict:
        return {
            "last_seen": self.last_seen,
            "n": self.n,
            "history": [a.to_json() for a in self.history],
        }


class _TerminalTrackState:
    """Singleton terminal state reached when the target exits."""

    __slots__ = ()

    def __repr__(self):
        return "TERMINAL"

    def to_json(self) -> dict:
        return {"terminal": True}


TERMINAL = _TerminalTrackState()


def is_terminal(s) -> bool:
    return s is TERMINAL or isinstance(s, _TerminalTrackState)


def track_state_from_json(obj: dict, n_cells: int):
    if obj.get("terminal"):
        return TERMINAL
    history = tuple(SensingAction.from_json(a, n_cells) for a in obj.get("history", []))
    return TrackState(int(obj["last_seen"]), int(obj["n"]), history)


@dataclass(frozen=True)
class StepOutcome:
    next_state: object
    observation: object
    reward: float


def initial_state(x0: int) -> TrackState:
    """State handed to a tracking policy after the entry sensor localizes the
    target at cell x0."""
    return TrackState(x0, 0, ())


def constrain_action(s: TrackState, proposed: SensingAction, p: RewardParams) -> SensingAction:
    """Force the safe action after t_max + 1 consecutive misses."""
    if is_terminal(s):
        raise ValueError("cannot act in the terminal state")
    if s.n == p.t_max + 1:
        return SensingAction.safe(proposed.n_cells)
    return proposed


def step(s: TrackState, a: SensingAction, x_next: int, p: RewardParams) -> StepOutcome:
    """Advance the track state given the realized hidden state x_next.

    ``a`` must already be constrained (safe when s.n = t_max + 1). The reward
    is the grid pseudo-reward of (x_next, a) in every branch.
    """
    if is_terminal(s):
        raise ValueError("cannot step a finished episode")
    rew = reward(x_next, a, p)
    if x_next == EXIT_STATE:
        return StepOutcome(TERMINAL, EXITED, rew)
    if x_next in a or s.n == p.t_max + 1:
        return StepOutcome(TrackState(x_next, 0, ()), seen(x_next), rew)
    if s.n + 1 > p.t_max + 1:
        raise ValueError("miss past t_max+1: action was not constrained")
    nxt = TrackState(s.last_seen, s.n + 1, s.history + (a,))
    return StepOutcome(nxt, UNINFORMATIVE, rew)


def _cell_posterior(s: TrackState, kernel: TransitionKernel) -> np.ndarray:
    """Distribution of the current hidden state over cells given ``s``.

    Folds the miss history: each uninformative step zeroes the sensed cells
    and the exit coordinate (no exit signal was raised), renormalizing over
    what remains.
    """
    beta = np.zeros(kernel.n_cells)
    beta[s.last_seen - 1] = 1.0
    if not s.history:
        return beta
    block = kernel.cell_block
    for a in s.history:
        w = beta @ block
        for c in a.cells:
            w[c - 1] = 0.0
        total = w.sum()
        if total <= MASS_TOL:
            raise ImpossibleMissError(
                f"history of {s!r} conditions on a probability-zero miss"
            )
        beta = w / total
    return beta


def predicted_distribution(s: TrackState, kernel: TransitionKernel):
    """Posterior over the target's next position given an active track state.

    Returns ``(cell_probs, exit_mass)`` where ``cell_probs`` has length N^2
    and ``cell_probs.sum() + exit_mass == 1``. Computed by belief propagation
    over the miss history; equals the path-sum over all valid unobserved
    in-grid paths.
    """
    if is_terminal(s):
        raise ValueError("terminal state has no predicted distribution")
    beta = _cell_posterior(s, kernel)
    full = beta @ kernel.matrix[: kernel.n_cells]
    return full[: kernel.n_cells], float(full[kernel.n_cells])


def enumerate_reachable(
    kernel: TransitionKernel,
    p: RewardParams,
    action_gen,
    state_budget: int = DEFAULT_STATE_BUDGET,
):
    """Breadth-first closure of track states from every (cell, 0, empty) root.

    ``action_gen(state)`` supplies the finite candidate actions per active
    state; the forced safe action is applied on top. Returns a set including
    the terminal state. Raises ``StateBudgetError`` past ``state_budget``.
    """
    roots = [initial_state(c) for c in range(1, kernel.n_cells + 1)]
    found = set(roots)
    found.add(TERMINAL)
    queue = deque(roots)
    while queue:
        s = queue.popleft()
        cells, exit_mass = predicted_distribution(s, kernel)
        if s.n == p.t_max + 1:
            actions = [SensingAction.safe(kernel.n_cells)]
        else:
            actions = [constrain_action(s, a, p) for a in action_gen(s)]
        for a in actions:
            miss_mass = 0.0
            for c in range(1, kernel.n_cells + 1):
                q = cells[c - 1]
                if q <= 0.0:
                    continue
                if c in a:
                    child = TrackState(c, 0, ())
                    if child not in found:
                        found.add(child)
                        queue.append(child)
                else:
                    miss_mass += q
            if miss_mass > MASS_TOL and not a.is_safe:
                child = TrackState(s.last_seen, s.n + 1, s.history + (a,))
                if child not in found:
                    found.add(child)
                    queue.append(child)
            if len(found) > state_budget:
                raise StateBudgetError(
                    f"reachable closure exceeded {state_budget} states"
                )
    return found
