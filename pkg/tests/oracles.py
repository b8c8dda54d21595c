"""Independent oracles used to freeze expected values.

Everything here is deliberately brute force: literal path enumeration,
plain-dict value iteration, and closed forms, kept free of the library's
renormalization and level-solve machinery.
"""

from itertools import product

import numpy as np

from tracksense.grid import RewardParams, SensingAction, reward
from tracksense.trackmdp import TERMINAL, TrackState, is_terminal


def path_sum_predicted(kernel, state):
    """Appendix-style posterior over the next position by literal path sums.

    Enumerates every in-grid path (g_0 = last_seen, g_1, ..., g_{n+1}) with
    g_i not sensed by the i-th history action, accumulates its probability,
    and normalizes. Returns (cell_probs, exit_mass).
    """
    n_cells = kernel.n_cells
    m = kernel.matrix
    n = state.n
    cell_mass = np.zeros(n_cells)
    exit_mass = 0.0
    cells = range(1, n_cells + 1)
    for mids in product(cells, repeat=n):
        ok = True
        for step_idx, g in enumerate(mids):
            if g in state.history[step_idx]:
                ok = False
                break
        if not ok:
            continue
        prob = 1.0
        prev = state.last_seen
        for g in mids:
            prob *= m[prev - 1, g - 1]
            if prob == 0.0:
                break
            prev = g
        if prob == 0.0:
            continue
        for last in cells:
            cell_mass[last - 1] += prob * m[prev - 1, last - 1]
        exit_mass += prob * m[prev - 1, n_cells]
    total = cell_mass.sum() + exit_mass
    if total <= 0:
        raise ValueError("no valid path: history inconsistent with kernel")
    return cell_mass / total, exit_mass / total


def path_sum_predicted_fast(kernel, state):
    """Masked matrix-product version of the path sum (checked against the
    literal loop in the tests, then used for large sweeps)."""
    n_cells = kernel.n_cells
    block = kernel.cell_block
    vec = np.zeros(n_cells)
    vec[state.last_seen - 1] = 1.0
    for a in state.history:
        vec = vec @ block
        for c in a.cells:
            vec[c - 1] = 0.0
    full = vec @ kernel.matrix[:n_cells]
    total = full.sum()
    if total <= 0:
        raise ValueError("no valid path: history inconsistent with kernel")
    return full[:n_cells] / total, full[n_cells] / total


def brute_force_value_iteration(kernel, params, action_gen, sweeps=20000, tol=1e-12):
    """Plain-dict value iteration over the reachable closure.

    Enumerates states by BFS, then runs synchronous sweeps with the same
    tie-break rule (smallest action, then lexicographic cells) until the
    sup-norm change is below tol. Only usable on tiny instances.
    """
    from tracksense.trackmdp import enumerate_reachable, predicted_distribution

    states = enumerate_reachable(kernel, params, action_gen)
    info = {}
    safe = SensingAction.safe(kernel.n_cells)
    for s in states:
        if is_terminal(s):
            continue
        cells, exit_mass = predicted_distribution(s, kernel)
        acts = [safe] if s.n == params.t_max + 1 else sorted(action_gen(s), key=SensingAction.sort_key)
        entries = []
        for a in acts:
            hit = [(c, cells[c - 1]) for c in range(1, kernel.n_cells + 1) if cells[c - 1] > 0 and c in a]
            miss = sum(cells[c - 1] for c in range(1, kernel.n_cells + 1) if cells[c - 1] > 0 and c not in a)
            cost = params.D if a.is_safe else params.c * a.size
            rew = params.r * sum(q for _, q in hit) - cost * (1.0 - exit_mass)
            miss_state = TrackState(s.last_seen, s.n + 1, s.history + (a,)) if miss > 1e-13 else None
            entries.append((a, rew, hit, miss, miss_state))
        info[s] = entries

    values = {s: 0.0 for s in states}
    values[TERMINAL] = 0.0
    gamma = params.gamma
    for _ in range(sweeps):
        delta = 0.0
        new_values = {}
        for s, entries in info.items():
            best = -np.inf
            for a, rew, hit, miss, miss_state in entries:
                q = rew + gamma * (
                    sum(prob * values[TrackState(c, 0, ())] for c, prob in hit)
                    + (miss * values[miss_state] if miss_state is not None else 0.0)
                )
                if q > best:
                    best = q
            new_values[s] = best
            delta = max(delta, abs(best - values[s]))
        values.update(new_values)
        if delta <= tol:
            break

    policy = {}
    for s, entries in info.items():
        best, best_a = -np.inf, None
        for a, rew, hit, miss, miss_state in entries:
            q = rew + gamma * (
                sum(prob * values[TrackState(c, 0, ())] for c, prob in hit)
                + (miss * values[miss_state] if miss_state is not None else 0.0)
            )
            if q > best:  # first strict improvement keeps canonical tie-break
                best, best_a = q, a
        policy[s] = best_a
    return values, policy


def single_cell_sense_value(p_stay, r, c, gamma=1.0):
    """Closed-form value of always sensing the lone cell: V = E[R] + gamma*p*V
    with E[R] = p*(r - c)."""
    return p_stay * (r - c) / (1.0 - gamma * p_stay)


def dormant_cycle_value(q_exit, cycle_len, r, D):
    """Expected total reward of the sense-nothing-until-forced policy when
    every row exits with probability q_exit: safe fires at times L, 2L, ...
    and pays (r - D) while the target is still in the grid."""
    stay = (1.0 - q_exit) ** cycle_len
    return (r - D) * stay / (1.0 - stay)


def geometric_episode_value(q_exit, per_step):
    """Expected total of a constant in-grid per-step reward under constant
    exit probability: sum_k (1-q)^k * per_step."""
    return per_step * (1.0 - q_exit) / q_exit
