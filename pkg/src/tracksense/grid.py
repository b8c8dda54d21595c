"""Sensing grid primitives.

Cells of an N x N grid are labeled 1..N^2 in row-major order. The hidden
target state is a cell label, or ``EXIT_STATE`` (0) once the target has left
the grid; exit is absorbing and signaled unambiguously by a low-cost sensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import KernelValidationError, ValidationError

CellId = int
TargetState = int

#: Encoding of the absorbing exit state of the target process.
EXIT_STATE: TargetState = 0

#: Tolerance for row-stochasticity of transition kernels.
ROW_SUM_TOL = 1e-12

KERNEL_SCHEMA_VERSION = 1


def mask_from_cells(cells) -> int:
    """Pack an iterable of 1-based cell labels into a bitmask."""
    m = 0
    for c in cells:
        m |= 1 << (c - 1)
    return m


def cells_from_mask(mask: int) -> tuple:
    """Unpack a bitmask into an ascending tuple of 1-based cell labels."""
    out = []
    c = 1
    while mask:
        if mask & 1:
            out.append(c)
        mask >>= 1
        c += 1
    return tuple(out)


def full_mask(n_cells: int) -> int:
    return (1 << n_cells) - 1


@dataclass(frozen=True)
class SensingAction:
    """A subset of grid cells to activate, with bitset semantics.

    ``is_safe`` marks the designated safe action: all cells on, charged the
    flat penalty D instead of the per-sensor cost.
    """

    mask: int
    n_cells: int
    is_safe: bool = False

    def __post_init__(self):
        if not 0 <= self.mask <= full_mask(self.n_cells):
            raise ValidationError(f"action mask {self.mask:#x} out of range for {self.n_cells} cells")
        if self.is_safe and self.mask != full_mask(self.n_cells):
            raise ValidationError("safe action must activate every cell")

    @classmethod
    def from_cells(cls, cells, n_cells: int) -> "SensingAction":
        return cls(mask_from_cells(cells), n_cells)

    @classmethod
    def safe(cls, n_cells: int) -> "SensingAction":
        return cls(full_mask(n_cells), n_cells, is_safe=True)

    @property
    def cells(self) -> tuple:
        return cells_from_mask(self.mask)

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    def __contains__(self, cell: int) -> bool:
        return bool((self.mask >> (cell - 1)) & 1)

    def sort_key(self):
        """Canonical ordering: fewer sensors first, then lexicographic cells."""
        return (self.size, self.cells)

    def to_json(self) -> dict:
        return {"cells": list(self.cells), "safe": self.is_safe}

    @classmethod
    def from_json(cls, obj: dict, n_cells: int) -> "SensingAction":
        return cls(mask_from_cells(obj["cells"]), n_cells, bool(obj.get("safe", False)))


@dataclass(frozen=True)
class Observation:
    """Outcome of a sensing step: a perfect detection, nothing, or the exit signal."""

    kind: str  # "seen" | "miss" | "exit"
    cell: CellId | None = None

    @property
    def is_seen(self) -> bool:
        return self.kind == "seen"

    @property
    def is_miss(self) -> bool:
        return self.kind == "miss"

    @property
    def is_exit(self) -> bool:
        return self.kind == "exit"


UNINFORMATIVE = Observation("miss")
EXITED = Observation("exit")


def seen(cell: CellId) -> Observation:
    return Observation("seen", cell)


class TransitionKernel:
    """Row-stochastic motion kernel over N^2 cells plus the absorbing exit row.

    ``matrix`` has shape (N^2+1, N^2+1); index N^2 (0-based) is the exit
    state. Rows failing the 1e-12 stochasticity check are rejected outright,
    never renormalized. Instances are immutable and safe to share across
    concurrent episode runners.
    """

    def __init__(self, n: int, matrix):
        if n < 1:
            raise KernelValidationError("grid side must be >= 1")
        m = np.array(matrix, dtype=float)
        size = n * n + 1
        if m.shape != (size, size):
            raise KernelValidationError(f"kernel must be {size}x{size}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise KernelValidationError("kernel entries must be finite")
        if np.any(m < 0):
            raise KernelValidationError("kernel entries must be nonnegative")
        sums = m.sum(axis=1)
        bad = np.abs(sums - 1.0)
        if bad.max() > ROW_SUM_TOL:
            i = int(bad.argmax())
            raise KernelValidationError(
                f"row {i + 1} sums to {sums[i]!r}; refusing to renormalize"
            )
        terminal = np.zeros(size)
        terminal[-1] = 1.0
        if not np.array_equal(m[-1], terminal):
            raise KernelValidationError("terminal row must be the terminal unit vector")
        m.setflags(write=False)
        self.n = n
        self.n_cells = n * n
        self.matrix = m
        # cumulative rows for inverse-CDF sampling
        self._cum = np.cumsum(m, axis=1)
        self._cum.setflags(write=False)

    @property
    def cell_block(self) -> np.ndarray:
        """The N^2 x N^2 in-grid sub-matrix."""
        return self.matrix[: self.n_cells, : self.n_cells]

    @property
    def exit_column(self) -> np.ndarray:
        """Per-cell one-step exit probabilities."""
        return self.matrix[: self.n_cells, self.n_cells]

    def row(self, cell: CellId) -> np.ndarray:
        return self.matrix[cell - 1]

    def __eq__(self, other):
        return (
            isinstance(other, TransitionKernel)
            and self.n == other.n
            and np.array_equal(self.matrix, other.matrix)
        )

    def __repr__(self):
        return f"TransitionKernel(n={self.n})"

    def to_jsonable(self) -> dict:
        return {
            "version": KERNEL_SCHEMA_VERSION,
            "n": self.n,
            "rows": [list(row) for row in self.matrix],
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "TransitionKernel":
        if obj.get("version") != KERNEL_SCHEMA_VERSION:
            raise KernelValidationError(f"unsupported kernel schema version {obj.get('version')!r}")
        return cls(int(obj["n"]), obj["rows"])


def save_kernel(kernel: TransitionKernel, path) -> None:
    """Write the kernel as JSON; floats round-trip bit-faithfully."""
    with open(path, "w") as fh:
        json.dump(kernel.to_jsonable(), fh, indent=1)
        fh.write("\n")


def load_kernel(path) -> TransitionKernel:
    with open(path) as fh:
        return TransitionKernel.from_jsonable(json.load(fh))


@dataclass(frozen=True)
class RewardParams:
    """Pseudo-reward parameters: detection reward r, per-sensor cost c, safe
    penalty D, miss budget t_max, and discount gamma (1 relies on exit
    absorption for finiteness)."""

    r: float
    c: float
    D: float
    t_max: int
    gamma: float = 1.0

    def __post_init__(self):
        if self.r <= 0 or self.c <= 0 or self.D <= 0:
            raise ValidationError("r, c, D must all be positive")
        if self.c / self.r >= 1:
            raise ValidationError("c/r must be < 1")
        if not isinstance(self.t_max, int) or self.t_max < 0:
            raise ValidationError("t_max must be an integer >= 0")
        if not 0 < self.gamma <= 1:
            raise ValidationError("gamma must lie in (0, 1]")

    @property
    def threshold(self) -> float:
        return self.c / self.r

    def to_json(self) -> dict:
        return {"r": self.r, "c": self.c, "D": self.D, "t_max": self.t_max, "gamma": self.gamma}

    @classmethod
    def from_json(cls, obj: dict) -> "RewardParams":
        return cls(
            r=float(obj["r"]),
            c=float(obj["c"]),
            D=float(obj["D"]),
            t_max=int(obj["t_max"]),
            gamma=float(obj.get("gamma", 1.0)),
        )


def ensure_terminating(kernel: TransitionKernel, params: RewardParams) -> None:
    """With gamma = 1, every cell must reach the exit state with positive
    probability in finitely many steps; otherwise undiscounted values diverge."""
    if params.gamma < 1:
        return
    n_cells = kernel.n_cells
    reach = kernel.exit_column > 0
    adj = kernel.cell_block > 0
    # reverse reachability to the exit state over positive-probability edges
    changed = True
    while changed:
        changed = False
        newly = adj[:, reach].any(axis=1) & ~reach
        if newly.any():
            reach |= newly
            changed = True
    if not reach.all():
        missing = int(np.flatnonzero(~reach)[0]) + 1
        raise ValidationError(
            f"gamma=1 requires exit reachability from every cell; cell b{missing} never exits"
        )


def sample_next(kernel: TransitionKernel, x: TargetState, rng: np.random.Generator) -> TargetState:
    """Draw the next target state from x's kernel row; exit is absorbing."""
    if x == EXIT_STATE:
        return EXIT_STATE
    u = rng.random()
    idx = int(np.searchsorted(kernel._cum[x - 1], u, side="right"))
    if idx >= kernel.n_cells:
        return EXIT_STATE
    return idx + 1


def observe(x: TargetState, a: SensingAction) -> Observation:
    """Erase-channel observation: exact detection inside the action, the exit
    signal when the target has left, uninformative otherwise."""
    if x == EXIT_STATE:
        return EXITED
    if x in a:
        return seen(x)
    return UNINFORMATIVE


def reward(x: TargetState, a: SensingAction, p: RewardParams) -> float:
    """Per-step pseudo-reward; identically zero once the target has exited."""
    if x == EXIT_STATE:
        return 0.0
    gain = p.r if x in a else 0.0
    cost = p.D if a.is_safe else p.c * a.size
    return gain - cost


def neighborhood(n: int, cell: CellId) -> tuple:
    """In-grid cells of the 3x3 window centered on ``cell`` (center included)."""
    row, col = divmod(cell - 1, n)
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            rr, cc = row + dr, col + dc
            if 0 <= rr < n and 0 <= cc < n:
                out.append(rr * n + cc + 1)
    return tuple(sorted(out))


def make_experiment_kernel(n: int, z: int, p_exit: float, p_hot: float, rng) -> TransitionKernel:
    """Generate the experiment motion kernel.

    Each cell gets z distinct destinations drawn uniformly from its clipped
    3x3 window (all available ones when the window holds fewer than z). One
    destination receives p_hot, the exit state p_exit, and the remaining
    destinations share the rest uniformly. z = 1 degenerates to a single
    destination with probability 1 - p_exit.
    """
    if n < 2:
        raise ValidationError("experiment kernels need a grid side >= 2")
    if not 1 <= z <= 9:
        raise ValidationError("z must lie in [1, 9] (3x3 window bound)")
    if not 0 <= p_exit < 1:
        raise ValidationError("p_exit must lie in [0, 1)")
    if p_hot < 0:
        raise ValidationError("p_hot must be nonnegative")
    if p_hot + p_exit >= 1:
        raise ValidationError("p_hot + p_exit must be < 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))

    n_cells = n * n
    m = np.zeros((n_cells + 1, n_cells + 1))
    for cell in range(1, n_cells + 1):
        nbrs = neighborhood(n, cell)
        k = min(z, len(nbrs))
        picked = rng.choice(len(nbrs), size=k, replace=False)
        dests = [nbrs[int(i)] for i in picked]
        row = m[cell - 1]
        row[n_cells] = p_exit
        if k == 1:
            row[dests[0] - 1] = 1.0 - p_exit
        else:
            hot = dests[int(rng.integers(k))]
            rest = (1.0 - p_hot - p_exit) / (k - 1)
            for d in dests:
                row[d - 1] = p_hot if d == hot else rest
    m[n_cells, n_cells] = 1.0
    return TransitionKernel(n, m)


def all_subset_actions(cells, n_cells: int):
    """Every subset of ``cells`` as non-safe actions, in canonical order
    (cardinality, then lexicographic cell tuple)."""
    cells = sorted(cells)
    out = []
    for size in range(len(cells) + 1):
        for combo in combinations(cells, size):
            out.append(SensingAction(mask_from_cells(combo), n_cells))
    return out
