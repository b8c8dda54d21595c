"""Exact optimal values and policies by dynamic programming.

Both the track-MDP and its reachable-belief twin share one structure:
detection always resets to one of the N^2 root states, a miss strictly
increases the counter n, and n = t_max + 1 forces the safe action. The
solver exploits this: under a fixed policy every state's value is affine in
the root values, so each policy-iteration round is one affine backward pass
over the n-levels plus an N^2 x N^2 linear solve, followed by a greedy
improvement pass. Ties in the argmax go to the smallest action, then
lexicographic cell order. The Bellman residual is verified at every state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .actions import actions_from_support, support_cells
from .belief import renormalize_excluding
from .errors import NonContractionError, SolverError, StateBudgetError
from .grid import RewardParams, SensingAction, TransitionKernel, ensure_terminating
from .trackmdp import (
    DEFAULT_STATE_BUDGET,
    MASS_TOL,
    TERMINAL,
    TrackState,
    constrain_action,
    initial_state,
)

_MAX_POLICY_ITERS = 200


@dataclass
class _Level:
    """Flattened state-action structure for one value of the miss counter."""

    states: list
    act_indptr: np.ndarray        # (n_states + 1,) into the SA arrays
    actions: list                 # per-SA SensingAction
    sa_reward: np.ndarray         # (n_sa,)
    sa_missprob: np.ndarray       # (n_sa,)
    sa_misschild: np.ndarray      # (n_sa,) index into the next level, -1 if none
    hits: "sparse.csr_matrix"     # (n_sa, n_roots) detection probabilities


@dataclass
class ValueTable:
    """Optimal values and policy over the enumerated reachable states."""

    values: dict
    policy: dict
    residual: float
    n_cells: int
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    def root_values(self) -> np.ndarray:
        return np.array(
            [self.values[initial_state(c)] for c in range(1, self.n_cells + 1)]
        )

    def mean_root_value(self) -> float:
        return float(self.root_values().mean())

    def as_policy(self):
        """A policy callable raising on states outside the solved closure."""

        def policy_fn(s):
            try:
                return self.policy[s]
            except KeyError:
                raise KeyError(
                    f"state {s!r} outside the solved closure; was the table "
                    "computed for this kernel and reward?"
                ) from None

        return policy_fn


def _segment_max_argmax(q: np.ndarray, indptr: np.ndarray):
    """Per-block max of q and the first index attaining it (canonical order)."""
    starts = indptr[:-1]
    maxq = np.maximum.reduceat(q, starts)
    lens = np.diff(indptr)
    rep = np.repeat(maxq, lens)
    pos = np.arange(len(q))
    cand = np.where(q == rep, pos, len(q))
    first = np.minimum.reduceat(cand, starts)
    return maxq, first


class _LevelBuilder:
    def __init__(self, n_roots):
        self.states = []
        self.index = {}
        self.act_indptr = [0]
        self.actions = []
        self.reward = []
        self.missprob = []
        self.misschild = []
        self.hit_rows = []
        self.hit_cols = []
        self.hit_vals = []
        self.n_roots = n_roots

    def add_state(self, state) -> int:
        idx = self.index.get(state)
        if idx is None:
            idx = len(self.states)
            self.index[state] = idx
            self.states.append(state)
        return idx

    def add_action(self, action, rew, hit_pairs, missprob, misschild):
        sa = len(self.actions)
        self.actions.append(action)
        self.reward.append(rew)
        self.missprob.append(missprob)
        self.misschild.append(misschild)
        for root, prob in hit_pairs:
            self.hit_rows.append(sa)
            self.hit_cols.append(root)
            self.hit_vals.append(prob)

    def close_state(self):
        if len(self.actions) == self.act_indptr[-1]:
            raise SolverError("state has no candidate actions")
        self.act_indptr.append(len(self.actions))

    def finish(self) -> _Level:
        n_sa = len(self.actions)
        hits = sparse.csr_matrix(
            (self.hit_vals, (self.hit_rows, self.hit_cols)),
            shape=(n_sa, self.n_roots),
        )
        return _Level(
            states=self.states,
            act_indptr=np.asarray(self.act_indptr, dtype=np.int64),
            actions=self.actions,
            sa_reward=np.asarray(self.reward, dtype=float),
            sa_missprob=np.asarray(self.missprob, dtype=float),
            sa_misschild=np.asarray(self.misschild, dtype=np.int64),
            hits=hits,
        )


def _solve_levels(levels, n_roots, gamma, tol):
    """Policy iteration over the level structure; returns per-level values,
    selected SA indices, the final Bellman residual, and iteration count."""

    def improvement_pass(v_roots):
        sel_all, val_all = [], []
        v_next = None
        for lv in reversed(levels):
            hitvals = lv.hits @ v_roots
            cont = np.zeros(len(lv.sa_reward))
            has_child = lv.sa_misschild >= 0
            if v_next is not None and has_child.any():
                cont[has_child] = v_next[lv.sa_misschild[has_child]]
            q = lv.sa_reward + gamma * (hitvals + lv.sa_missprob * cont)
            v_lv, sel_lv = _segment_max_argmax(q, lv.act_indptr)
            sel_all.append(sel_lv)
            val_all.append(v_lv)
            v_next = v_lv
        sel_all.reverse()
        val_all.reverse()
        return sel_all, val_all

    def evaluate_policy(sel_all):
        """Affine backward pass: V = const + coef @ V_roots per state, then
        the root linear solve."""
        const_next = coef_next = None
        const0 = coef0 = None
        for lv, sel in zip(reversed(levels), reversed(sel_all)):
            rows = lv.hits[sel]
            coef = gamma * np.asarray(rows.todense())
            const = lv.sa_reward[sel].copy()
            child = lv.sa_misschild[sel]
            has_child = child >= 0
            if const_next is not None and has_child.any():
                mp = lv.sa_missprob[sel][has_child]
                idx = child[has_child]
                const[has_child] += gamma * mp * const_next[idx]
                coef[has_child] += gamma * mp[:, None] * coef_next[idx]
            const_next, coef_next = const, coef
            const0, coef0 = const, coef
        # level 0 states are exactly the roots, in root order
        try:
            v_roots = np.linalg.solve(np.eye(n_roots) - coef0, const0)
        except np.linalg.LinAlgError as exc:
            raise NonContractionError(
                "root value system is singular; gamma=1 needs exit mass"
            ) from exc
        if not np.all(np.isfinite(v_roots)):
            raise NonContractionError("root values diverged")
        return v_roots

    v_roots = np.zeros(n_roots)
    sel_all, _ = improvement_pass(v_roots)
    for it in range(1, _MAX_POLICY_ITERS + 1):
        v_roots = evaluate_policy(sel_all)
        new_sel, values = improvement_pass(v_roots)
        stable = all(np.array_equal(a, b) for a, b in zip(sel_all, new_sel))
        sel_all = new_sel
        if stable:
            break
    else:
        raise NonContractionError("policy iteration failed to stabilize")

    # exact values of the final policy, then a full Bellman-residual check
    v_roots = evaluate_policy(sel_all)
    values = _policy_values(levels, sel_all, v_roots, gamma)
    residual = _bellman_residual(levels, values, gamma)
    if residual > tol:
        raise NonContractionError(f"Bellman residual {residual} above tol {tol}")
    return values, sel_all, residual, it


def _policy_values(levels, sel_all, v_roots, gamma):
    values = [None] * len(levels)
    v_next = None
    for i in range(len(levels) - 1, -1, -1):
        lv, sel = levels[i], sel_all[i]
        hitvals = lv.hits[sel] @ v_roots
        cont = np.zeros(len(sel))
        child = lv.sa_misschild[sel]
        has_child = child >= 0
        if v_next is not None and has_child.any():
            cont[has_child] = v_next[child[has_child]]
        v = lv.sa_reward[sel] + gamma * (hitvals + lv.sa_missprob[sel] * cont)
        if i == 0:
            v = v_roots  # roots solve their own system exactly
        values[i] = v
        v_next = v
    return values


def _bellman_residual(levels, values, gamma):
    v_roots = values[0]
    residual = 0.0
    for i in range(len(levels) - 1, -1, -1):
        lv = levels[i]
        hitvals = lv.hits @ v_roots
        cont = np.zeros(len(lv.sa_reward))
        has_child = lv.sa_misschild >= 0
        if i + 1 < len(levels) and has_child.any():
            cont[has_child] = values[i + 1][lv.sa_misschild[has_child]]
        q = lv.sa_reward + gamma * (hitvals + lv.sa_missprob * cont)
        tv = np.maximum.reduceat(q, lv.act_indptr[:-1])
        residual = max(residual, float(np.abs(tv - values[i]).max()))
    return residual


def _sa_reward(hit_mass, exit_mass, action: SensingAction, p: RewardParams) -> float:
    cost = p.D if action.is_safe else p.c * action.size
    return p.r * hit_mass - cost * (1.0 - exit_mass)


def _build_track_levels(kernel, p, action_gen, state_budget, **kwargs):
    """Enumerate reachable states level by level, carrying each state's cell
    posterior incrementally (one propagation per state instead of a full
    history replay)."""
    n_cells = kernel.n_cells
    top = kernel.matrix[:n_cells]
    levels = []
    current = _LevelBuilder(n_cells)
    betas = []
    for c in range(1, n_cells + 1):
        current.add_state(initial_state(c))
        beta = np.zeros(n_cells)
        beta[c - 1] = 1.0
        betas.append(beta)
    total = n_cells
    mode = kwargs.get("mode", "exact")
    k = kwargs.get("k", 8)
    for n in range(p.t_max + 2):
        if not current.states:
            break
        nxt = _LevelBuilder(n_cells)
        nxt_betas = []
        forced = n == p.t_max + 1
        for s, beta in zip(current.states, betas):
            w = beta @ top
            cells, exit_mass = w[:n_cells], float(w[n_cells])
            support = support_cells(cells)
            if forced:
                acts = [SensingAction.safe(n_cells)]
            elif action_gen is not None:
                acts = [constrain_action(s, a, p) for a in action_gen(s)]
            else:
                probs = [cells[c - 1] for c in support]
                acts = actions_from_support(support, probs, n_cells, mode=mode, k=k)
            for a in acts:
                hit_pairs = []
                hit_mass = 0.0
                miss_mass = 0.0
                for c in support:
                    q = cells[c - 1]
                    if c in a:
                        hit_pairs.append((c - 1, q))
                        hit_mass += q
                    else:
                        miss_mass += q
                child = -1
                if miss_mass > MASS_TOL:
                    child_state = TrackState(s.last_seen, s.n + 1, s.history + (a,))
                    child = nxt.add_state(child_state)
                    nxt_betas.append(renormalize_excluding(cells / cells.sum(), a))
                current.add_action(a, _sa_reward(hit_mass, exit_mass, a, p), hit_pairs, miss_mass, child)
            current.close_state()
        total += len(nxt.states)
        if total > state_budget:
            raise StateBudgetError(
                f"reachable closure exceeded {state_budget} states at n={n + 1}; "
                "train a policy instead of solving exactly"
            )
        levels.append(current.finish())
        current, betas = nxt, nxt_betas
    return levels


def exact_value_iteration(
    kernel: TransitionKernel,
    p: RewardParams,
    tol: float = 1e-10,
    mode: str = "exact",
    k: int = 8,
    action_gen=None,
    state_budget: int = DEFAULT_STATE_BUDGET,
) -> ValueTable:
    """Bellman-optimal values over the reachable track states.

    Expectations are taken under the predicted next-position distribution;
    the result's sup-norm Bellman residual is at most ``tol`` at every state.
    """
    ensure_terminating(kernel, p)
    levels = _build_track_levels(kernel, p, action_gen, state_budget, mode=mode, k=k)
    values, sel_all, residual, iters = _solve_levels(levels, kernel.n_cells, p.gamma, tol)
    value_map = {TERMINAL: 0.0}
    policy_map = {}
    for lv, sel, vals in zip(levels, sel_all, values):
        for i, s in enumerate(lv.states):
            value_map[s] = float(vals[i])
            policy_map[s] = lv.actions[sel[i]]
    n_states = sum(len(lv.states) for lv in levels)
    return ValueTable(
        values=value_map,
        policy=policy_map,
        residual=residual,
        n_cells=kernel.n_cells,
        iterations=iters,
        meta={"n_states": n_states + 1, "mode": mode},
    )


@dataclass
class BeliefSpaceResult:
    """Exact values over the finite reachable belief set."""

    root_values: np.ndarray
    values: dict                  # (n, rounded-belief-bytes) -> value
    residual: float
    n_states: int
    iterations: int


def _belief_key(beta: np.ndarray, n: int):
    return (n, (np.round(beta, 12) + 0.0).tobytes())


def belief_space_value_iteration(
    kernel: TransitionKernel,
    p: RewardParams,
    tol: float = 1e-10,
    mode: str = "exact",
    k: int = 8,
    state_budget: int = DEFAULT_STATE_BUDGET,
) -> BeliefSpaceResult:
    """Value iteration on the sufficient-statistic formulation, restricted to
    the beliefs reachable from the point-mass roots.

    Dynamics are computed directly from the beliefs (propagate, split into
    detection / miss / exit, renormalize on a miss), independently of the
    track-state machinery, so equality of the two optimal value functions is
    a meaningful cross-check.
    """
    ensure_terminating(kernel, p)
    n_cells = kernel.n_cells
    top = kernel.matrix[:n_cells]
    levels = []
    current = _LevelBuilder(n_cells)
    betas = []
    for c in range(1, n_cells + 1):
        beta = np.zeros(n_cells)
        beta[c - 1] = 1.0
        current.add_state(_belief_key(beta, 0))
        betas.append(beta)
    total = n_cells
    for n in range(p.t_max + 2):
        if not current.states:
            break
        nxt = _LevelBuilder(n_cells)
        nxt_betas = []
        forced = n == p.t_max + 1
        for beta in betas:
            w = beta @ top
            cells, exit_mass = w[:n_cells], float(w[n_cells])
            support = support_cells(cells)
            probs = [cells[c - 1] for c in support]
            if forced:
                acts = [SensingAction.safe(n_cells)]
            else:
                acts = actions_from_support(support, probs, n_cells, mode=mode, k=k)
            for a in acts:
                hit_pairs = []
                hit_mass = 0.0
                miss_mass = 0.0
                for c in support:
                    q = cells[c - 1]
                    if c in a:
                        hit_pairs.append((c - 1, q))
                        hit_mass += q
                    else:
                        miss_mass += q
                child = -1
                if miss_mass > MASS_TOL:
                    in_grid = cells / cells.sum()
                    child_beta = renormalize_excluding(in_grid, a)
                    key = _belief_key(child_beta, n + 1)
                    before = len(nxt.states)
                    child = nxt.add_state(key)
                    if len(nxt.states) > before:
                        nxt_betas.append(child_beta)
                current.add_action(a, _sa_reward(hit_mass, exit_mass, a, p), hit_pairs, miss_mass, child)
            current.close_state()
        total += len(nxt.states)
        if total > state_budget:
            raise StateBudgetError(f"reachable belief closure exceeded {state_budget} states")
        levels.append(current.finish())
        current, betas = nxt, nxt_betas
    values, _sel, residual, iters = _solve_levels(levels, n_cells, p.gamma, tol)
    value_map = {}
    for lv, vals in zip(levels, values):
        for i, key in enumerate(lv.states):
            value_map[key] = float(vals[i])
    return BeliefSpaceResult(
        root_values=values[0].copy(),
        values=value_map,
        residual=residual,
        n_states=total,
        iterations=iters,
    )
