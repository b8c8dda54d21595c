"""POMDP sufficient statistic and model-based baselines.

The belief is a distribution over grid cells plus the miss counter n. The
exit coordinate is never stored: the exit sensor fires unambiguously, so
every miss update conditions jointly on "not sensed" and "not exited" and
renormalizes over the surviving cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ImpossibleMissError, NonContractionError, SolverError, ValidationError
from .grid import RewardParams, SensingAction, TransitionKernel
from .trackmdp import MASS_TOL, TrackState, is_terminal

UPPER_BOUND_SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class Belief:
    """Probability vector over cells plus the miss counter."""

    cell_probs: np.ndarray
    n: int

    def __post_init__(self):
        probs = np.asarray(self.cell_probs, dtype=float)
        if probs.ndim != 1:
            raise ValidationError("belief must be a flat probability vector")
        if np.any(probs < -1e-12):
            raise ValidationError("belief entries must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise ValidationError(f"belief mass {probs.sum()!r} is not 1")
        if self.n < 0:
            raise ValidationError("miss counter must be >= 0")
        probs.setflags(write=False)
        object.__setattr__(self, "cell_probs", probs)

    @classmethod
    def point(cls, cell: int, n_cells: int) -> "Belief":
        probs = np.zeros(n_cells)
        probs[cell - 1] = 1.0
        return cls(probs, 0)

    def __eq__(self, other):
        return (
            isinstance(other, Belief)
            and self.n == other.n
            and np.array_equal(self.cell_probs, other.cell_probs)
        )


def renormalize_excluding(alpha: np.ndarray, a: SensingAction) -> np.ndarray:
    """Zero the action's cells and rescale the rest to a distribution.

    Errors out when (numerically) all mass sits inside the action: that is a
    miss of probability zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    out = alpha.copy()
    inside = 0.0
    for c in a.cells:
        inside += out[c - 1]
        out[c - 1] = 0.0
    remaining = 1.0 - inside
    if remaining <= MASS_TOL:
        raise ImpossibleMissError("all belief mass lies inside the sensed cells")
    return out / remaining


def belief_update(v: Belief, a: SensingAction, obs, kernel: TransitionKernel) -> Belief:
    """One observation update of the sufficient statistic.

    ``a`` must already be constrained (safe when v.n = t_max + 1, which makes
    an uninformative outcome impossible). The exit observation terminates the
    episode; there is no belief to return for it.
    """
    if obs.is_exit:
        raise ValueError("episode is over after the exit signal; no belief update")
    if obs.is_seen:
        return Belief.point(obs.cell, kernel.n_cells)
    # uninformative: propagate, drop the exit coordinate, renormalize, then
    # condition on the missed cells
    w = v.cell_probs @ kernel.matrix[: kernel.n_cells]
    cells = w[: kernel.n_cells]
    in_grid = cells.sum()
    if in_grid <= MASS_TOL:
        raise ImpossibleMissError("no in-grid mass remains after propagation")
    cells = cells / in_grid
    return Belief(renormalize_excluding(cells, a), v.n + 1)


def belief_from_track_state(s: TrackState, kernel: TransitionKernel) -> Belief:
    """Reconstruct the belief a track state corresponds to.

    Replays the state's history from the point mass at the last seen cell,
    folding each recorded action through an uninformative update. Agrees with
    the belief an online filter would hold at the same point of the episode.
    """
    if is_terminal(s):
        raise ValueError("terminal state has no belief")
    from .grid import UNINFORMATIVE

    v = Belief.point(s.last_seen, kernel.n_cells)
    for a in s.history:
        v = belief_update(v, a, UNINFORMATIVE, kernel)
    return v


def qmdp_action(v: Belief, kernel: TransitionKernel, p: RewardParams) -> SensingAction:
    """Threshold policy of the full-observability relaxation: activate every
    cell whose one-step predicted probability reaches c/r; safe when forced."""
    if v.n == p.t_max + 1:
        return SensingAction.safe(kernel.n_cells)
    w = v.cell_probs @ kernel.cell_block
    mask = 0
    thr = p.threshold
    for i in range(kernel.n_cells):
        if w[i] >= thr:
            mask |= 1 << i
    return SensingAction(mask, kernel.n_cells)


@dataclass(frozen=True, eq=False)
class UpperBoundTable:
    """Values of the full-observability relaxation at the point beliefs."""

    v_star: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v_star, dtype=float)
        if not np.all(np.isfinite(v)):
            raise SolverError("upper-bound values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "v_star", v)

    def to_jsonable(self, n: int) -> dict:
        return {"version": UPPER_BOUND_SCHEMA_VERSION, "n": n, "v_star": list(self.v_star)}

    @classmethod
    def from_jsonable(cls, obj: dict) -> "UpperBoundTable":
        if obj.get("version") != UPPER_BOUND_SCHEMA_VERSION:
            raise ValidationError(f"unsupported upper-bound schema version {obj.get('version')!r}")
        return cls(np.asarray(obj["v_star"], dtype=float))


def save_upper_bound(table: UpperBoundTable, n: int, path) -> None:
    with open(path, "w") as fh:
        json.dump(table.to_jsonable(n), fh, indent=1)
        fh.write("\n")


def load_upper_bound(path) -> UpperBoundTable:
    with open(path) as fh:
        return UpperBoundTable.from_jsonable(json.load(fh))


def qmdp_upper_bound(
    kernel: TransitionKernel,
    p: RewardParams,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
):
    """Solve the fixed point V = g + gamma * P~ V of the relaxation.

    g_j sums the clipped one-step gains max([e_j P]_i r - c, 0); P~ is the
    in-grid sub-matrix. Solved by fixed-point iteration to a residual of
    ``tol``, cross-checked against a dense solve on grids up to 10x10.
    Returns the table and an evaluator over arbitrary beliefs.
    """
    block = kernel.cell_block
    gamma = p.gamma
    g = np.maximum(block * p.r - p.c, 0.0).sum(axis=1)
    v = np.zeros(kernel.n_cells)
    prev_delta = np.inf
    checkpoint = np.inf
    for it in range(max_iters):
        v_new = g + gamma * (block @ v)
        delta = np.abs(v_new - v).max()
        v = v_new
        if delta == 0.0:
            break
        # project the distance to the fixed point from the observed ratio
        rho = min(delta / prev_delta, 1.0 - 1e-12) if np.isfinite(prev_delta) else None
        prev_delta = delta
        if rho is not None and delta * rho / (1.0 - rho) <= tol / 4:
            break
        if it % 5000 == 4999:
            if delta >= checkpoint * 0.99:
                raise NonContractionError(
                    "upper-bound fixed point stalls; check gamma and exit mass"
                )
            checkpoint = delta
    else:
        raise NonContractionError(
            "upper-bound fixed point failed to contract; check gamma and exit mass"
        )
    residual = np.abs(v - g - gamma * (block @ v)).max()
    if residual > tol:
        raise NonContractionError(f"upper-bound residual {residual} above {tol}")
    if kernel.n <= 10:
        dense = np.linalg.solve(np.eye(kernel.n_cells) - gamma * block, g)
        if np.abs(dense - v).max() > 1e-8 * max(1.0, np.abs(dense).max()):
            raise SolverError("fixed-point solution disagrees with dense solve")
    table = UpperBoundTable(v)

    def evaluator(belief: Belief) -> float:
        w = belief.cell_probs @ kernel.matrix[: kernel.n_cells]
        cells = w[: kernel.n_cells]
        gains = cells * p.r - p.c
        return float(gains[gains >= 0].sum() + gamma * (cells @ table.v_star))

    return table, evaluator
