"""Target-position estimation after an uninformative observation.

Two routes to the same MAP estimate: a Q-difference form evaluated from the
exact value table, and a direct argmax over the predicted distribution. The
Q-difference for the all-on action versus all-on-except-x recovers exactly
the predicted probability of x, because a miss under all-on-except-x pins
the target to x (the successor is worth the same as a fresh detection at x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import ValueTable
from .grid import RewardParams, SensingAction, TransitionKernel
from .trackmdp import TrackState, initial_state, is_terminal, predicted_distribution


@dataclass(frozen=True)
class Estimate:
    cell: int
    posterior_mass: float


def _root_values(vt: ValueTable, n_cells: int) -> np.ndarray:
    return np.array([vt.values[initial_state(c)] for c in range(1, n_cells + 1)])


def q_difference_ratio(
    vt: ValueTable,
    s: TrackState,
    kernel: TransitionKernel,
    p: RewardParams,
    x: int,
) -> float:
    """(Q(s, all-on) - Q(s, all-but-x) + c) / r via one-step backups from V*.

    Both Q values are evaluated with the per-sensed-cell expansion
    sum_{j in a} (q_j r - c) + gamma-weighted continuation, under which the
    difference telescopes to q_x r - c; the miss successor of all-but-x is
    valued as a fresh detection at x.
    """
    n_cells = kernel.n_cells
    cells, _exit_mass = predicted_distribution(s, kernel)
    roots = _root_values(vt, n_cells)
    gamma = p.gamma
    q_all = float(p.r * cells.sum() - p.c * n_cells + gamma * (cells @ roots))
    keep = cells.copy()
    keep[x - 1] = 0.0
    q_not_x = float(
        p.r * keep.sum()
        - p.c * (n_cells - 1)
        + gamma * (keep @ roots)
        + gamma * cells[x - 1] * roots[x - 1]
    )
    return (q_all - q_not_x + p.c) / p.r


def map_from_q(
    vt: ValueTable,
    s: TrackState,
    a_star: SensingAction,
    p: RewardParams,
    kernel: TransitionKernel,
) -> Estimate:
    """MAP estimate of the next position from optimal Q values, after the
    executed action a_star observed nothing. Ties go to the smallest cell."""
    if is_terminal(s):
        raise ValueError("terminal state has no estimate")
    if s.n == p.t_max + 1:
        raise ValueError("safe action fires at n = t_max + 1; no miss to estimate from")
    best_cell, best_ratio = None, -np.inf
    for x in range(1, kernel.n_cells + 1):
        if x in a_star:
            continue
        ratio = q_difference_ratio(vt, s, kernel, p, x)
        if ratio > best_ratio:
            best_cell, best_ratio = x, ratio
    if best_cell is None:
        raise ValueError("action covers every cell; a miss implies exit")
    return Estimate(best_cell, best_ratio)


def map_from_posterior(
    s: TrackState,
    a_star: SensingAction,
    kernel: TransitionKernel,
) -> Estimate:
    """Direct MAP estimate: argmax of the predicted distribution outside the
    executed action. Same tie-break as the Q route."""
    if is_terminal(s):
        raise ValueError("terminal state has no estimate")
    cells, _ = predicted_distribution(s, kernel)
    best_cell, best_mass = None, -np.inf
    for x in range(1, kernel.n_cells + 1):
        if x in a_star:
            continue
        if cells[x - 1] > best_mass:
            best_cell, best_mass = x, cells[x - 1]
    if best_cell is None:
        raise ValueError("action covers every cell; a miss implies exit")
    return Estimate(best_cell, float(best_mass))
