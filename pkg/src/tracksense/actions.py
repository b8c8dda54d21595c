"""Candidate sensing actions for the tabular solvers.

Sensors outside the posterior support pay cost with zero detection
probability, so candidates are restricted to subsets of the support. Exact
mode enumerates the full support powerset; topk mode enumerates subsets of
the K most probable support cells, each optionally unioned with the rest of
the support as one block.
"""

from __future__ import annotations

from itertools import combinations

from .errors import ActionSpaceError
from .grid import SensingAction, mask_from_cells
from .trackmdp import TrackState, is_terminal, predicted_distribution

#: Exact mode refuses supports whose powerset would exceed 2^20 actions.
MAX_EXACT_SUPPORT = 20


def support_cells(cell_probs) -> list:
    return [i + 1 for i, q in enumerate(cell_probs) if q > 0.0]


def actions_from_support(support, probs, n_cells: int, mode: str = "exact", k: int = 8):
    """Candidate actions over a posterior support.

    ``support`` is the list of positive-probability cells, ``probs`` their
    probabilities (same order). Output is deduplicated and canonically
    ordered (cardinality, then lexicographic cells).
    """
    if mode == "exact":
        if len(support) > MAX_EXACT_SUPPORT:
            raise ActionSpaceError(
                f"support of {len(support)} cells exceeds the exact-mode bound "
                f"of {MAX_EXACT_SUPPORT} (2^20 actions); use topk mode"
            )
        chosen, rest = sorted(support), ()
    elif mode == "topk":
        if k < 1:
            raise ActionSpaceError("topk mode needs k >= 1")
        order = sorted(range(len(support)), key=lambda i: (-probs[i], support[i]))
        chosen = sorted(support[i] for i in order[:k])
        rest = tuple(sorted(support[i] for i in order[k:]))
    else:
        raise ActionSpaceError(f"unknown candidate mode {mode!r}")

    rest_mask = mask_from_cells(rest)
    masks = set()
    for size in range(len(chosen) + 1):
        for combo in combinations(chosen, size):
            m = mask_from_cells(combo)
            masks.add(m)
            masks.add(m | rest_mask)
    out = [SensingAction(m, n_cells) for m in masks]
    out.sort(key=SensingAction.sort_key)
    return out


def candidate_actions(s: TrackState, kernel, p, mode: str = "exact", k: int = 8):
    """Candidate actions at a track state; only the safe action when forced."""
    if is_terminal(s):
        raise ValueError("terminal state has no actions")
    if s.n == p.t_max + 1:
        return [SensingAction.safe(kernel.n_cells)]
    cells, _ = predicted_distribution(s, kernel)
    support = support_cells(cells)
    probs = [cells[c - 1] for c in support]
    return actions_from_support(support, probs, kernel.n_cells, mode=mode, k=k)
