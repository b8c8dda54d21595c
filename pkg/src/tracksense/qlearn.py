"""Tabular Q-learning on the track-MDP.

One-step temporal-difference updates over simulated episodes with
epsilon-greedy exploration restricted to the candidate actions of each
state. Everything is keyed by immutable states and action bitmasks, and all
randomness flows from one seeded generator, so identical seeds give
bit-identical tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actions import actions_from_support, support_cells
from .errors import ValidationError
from .grid import RewardParams, SensingAction, TransitionKernel, ensure_terminating, sample_next
from .trackmdp import MASS_TOL, TERMINAL, TrackState, initial_state, is_terminal, step


@dataclass(frozen=True)
class QLearningSchedule:
    """Learning/exploration schedule.

    alpha = alpha0 / (1 + visits / alpha_decay) per state-action pair;
    epsilon = max(eps_floor, eps0 * eps_decay^episode). Training stops at
    ``episodes`` episodes or ``max_steps`` total steps, whichever comes
    first (at least one must be set).
    """

    alpha0: float = 0.5
    alpha_decay: float = 1000.0
    eps0: float = 1.0
    eps_decay: float = 0.999
    eps_floor: float = 0.05
    episodes: int | None = None
    max_steps: int | None = None
    step_cap: int = 100_000

    def __post_init__(self):
        if self.episodes is None and self.max_steps is None:
            raise ValidationError("schedule needs episodes and/or max_steps")
        if self.alpha0 < 0 or self.alpha_decay <= 0:
            raise ValidationError("alpha0 must be >= 0 and alpha_decay > 0")
        if not 0 <= self.eps_floor <= 1 or not 0 <= self.eps0 <= 1 or not 0 < self.eps_decay <= 1:
            raise ValidationError("epsilon schedule out of range")

    def to_json(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "alpha_decay": self.alpha_decay,
            "eps0": self.eps0,
            "eps_decay": self.eps_decay,
            "eps_floor": self.eps_floor,
            "episodes": self.episodes,
            "max_steps": self.max_steps,
            "step_cap": self.step_cap,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QLearningSchedule":
        return cls(**{k: obj[k] for k in obj})


class _CandidateCache:
    """Per-state posterior and candidate actions, maintained incrementally.

    The posterior of a miss child is derived from its parent's propagated
    distribution, so each state costs one propagation regardless of history
    length.
    """

    def __init__(self, kernel: TransitionKernel, p: RewardParams, mode: str, k: int):
        self.kernel = kernel
        self.p = p
        self.mode = mode
        self.k = k
        self.top = kernel.matrix[: kernel.n_cells]
        self.safe = [SensingAction.safe(kernel.n_cells)]
        self._beta = {}
        self._cands = {}

    def _posterior(self, s: TrackState) -> np.ndarray:
        beta = self._beta.get(s)
        if beta is None:
            if s.n == 0:
                beta = np.zeros(self.kernel.n_cells)
                beta[s.last_seen - 1] = 1.0
            else:
                parent = TrackState(s.last_seen, s.n - 1, s.history[:-1])
                cells = self.predicted(parent)[: self.kernel.n_cells].copy()
                for c in s.history[-1].cells:
                    cells[c - 1] = 0.0
                total = cells.sum()
                beta = cells / total
            beta.setflags(write=False)
            self._beta[s] = beta
        return beta

    def predicted(self, s: TrackState) -> np.ndarray:
        """Full propagated vector (cells plus exit coordinate)."""
        return self._posterior(s) @ self.top

    def candidates(self, s: TrackState):
        cands = self._cands.get(s)
        if cands is None:
            if s.n == self.p.t_max + 1:
                cands = self.safe
            else:
                w = self.predicted(s)
                support = support_cells(w[: self.kernel.n_cells])
                probs = [w[c - 1] for c in support]
                cands = actions_from_support(
                    support, probs, self.kernel.n_cells, mode=self.mode, k=self.k
                )
            self._cands[s] = cands
        return cands


@dataclass
class QTable:
    """Learned state-action values with visit counts."""

    q: dict = field(default_factory=dict)        # state -> {action: value}
    visits: dict = field(default_factory=dict)   # state -> {action: count}
    mode: str = "exact"
    k: int = 8
    n_cells: int = 0

    def value(self, s, a) -> float:
        return self.q.get(s, {}).get(a, 0.0)

    def greedy_action(self, s, candidates) -> SensingAction:
        """Canonical-first argmax over the candidate list (zero default)."""
        row = self.q.get(s)
        best, best_a = -np.inf, None
        for a in candidates:
            v = row.get(a, 0.0) if row else 0.0
            if v > best:
                best, best_a = v, a
        return best_a

    def as_policy(self, kernel: TransitionKernel, p: RewardParams):
        """Greedy policy callable; unseen states fall back to zero values."""
        cache = _CandidateCache(kernel, p, self.mode, self.k)

        def policy_fn(s):
            return self.greedy_action(s, cache.candidates(s))

        return policy_fn


def q_learning(
    kernel: TransitionKernel,
    p: RewardParams,
    schedule: QLearningSchedule,
    seed: int,
    mode: str = "exact",
    k: int = 8,
) -> QTable:
    """Train a tabular Q-table by simulated episodes.

    Episodes start uniformly over the cells and run until the target exits
    (or the per-episode step cap). Deterministic given the seed.
    """
    ensure_terminating(kernel, p)
    rng = np.random.default_rng(seed)
    cache = _CandidateCache(kernel, p, mode, k)
    table = QTable(mode=mode, k=k, n_cells=kernel.n_cells)
    q = table.q
    visits = table.visits
    gamma = p.gamma
    total_steps = 0
    episode = 0
    while True:
        if schedule.episodes is not None and episode >= schedule.episodes:
            break
        if schedule.max_steps is not None and total_steps >= schedule.max_steps:
            break
        eps = max(schedule.eps_floor, schedule.eps0 * schedule.eps_decay**episode)
        x = int(rng.integers(1, kernel.n_cells + 1))
        s = initial_state(x)
        for _ in range(schedule.step_cap):
            cands = cache.candidates(s)
            if len(cands) > 1 and rng.random() < eps:
                a = cands[int(rng.integers(len(cands)))]
            else:
                a = table.greedy_action(s, cands)
            x = sample_next(kernel, x, rng)
            out = step(s, a, x, p)
            nxt = out.next_state
            if is_terminal(nxt):
                target = out.reward
            else:
                nxt_cands = cache.candidates(nxt)
                row = q.get(nxt)
                best = 0.0
                if row:
                    best = max(row.get(b, 0.0) for b in nxt_cands)
                elif nxt_cands:
                    best = 0.0
                target = out.reward + gamma * best
            srow = q.setdefault(s, {})
            vrow = visits.setdefault(s, {})
            seen_count = vrow.get(a, 0)
            alpha = schedule.alpha0 / (1.0 + seen_count / schedule.alpha_decay)
            old = srow.get(a, 0.0)
            srow[a] = old + alpha * (target - old)
            vrow[a] = seen_count + 1
            total_steps += 1
            if is_terminal(nxt):
                break
            if schedule.max_steps is not None and total_steps >= schedule.max_steps:
                break
            s = nxt
        episode += 1
    return table
