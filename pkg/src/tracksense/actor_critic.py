"""Linear factored actor-critic on the track-MDP.

The policy activates each cell independently with probability
sigmoid(w_j . phi(s)); the critic is a linear state value on the same
features. Features: one-hot of (last seen cell, miss counter) plus a
per-cell indicator for cells excluded by the miss history. Gradients are
analytic and verified against central finite differences before training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError, ValidationError
from .grid import RewardParams, SensingAction, TransitionKernel, ensure_terminating, sample_next
from .trackmdp import TERMINAL, TrackState, initial_state, is_terminal, step


@dataclass(frozen=True)
class ActorCriticHyper:
    lr_actor: float = 0.02
    lr_critic: float = 0.05
    episodes: int = 3000
    step_cap: int = 100_000
    grad_check_points: int = 100
    grad_check_step: float = 1e-5
    grad_check_tol: float = 1e-4

    def __post_init__(self):
        if self.lr_actor < 0 or self.lr_critic < 0:
            raise ValidationError("learning rates must be nonnegative")
        if self.episodes < 1:
            raise ValidationError("episodes must be >= 1")

    def to_json(self) -> dict:
        return {
            "lr_actor": self.lr_actor,
            "lr_critic": self.lr_critic,
            "episodes": self.episodes,
            "step_cap": self.step_cap,
        }


def feature_dim(n_cells: int, t_max: int) -> int:
    return n_cells * (t_max + 2) + n_cells


def feature_indices(s: TrackState, n_cells: int, t_max: int):
    """Active (unit-valued) feature coordinates of a track state."""
    idx = [(s.last_seen - 1) * (t_max + 2) + s.n]
    base = n_cells * (t_max + 2)
    excluded = 0
    for a in s.history:
        excluded |= a.mask
    c = 1
    while excluded:
        if excluded & 1:
            idx.append(base + c - 1)
        excluded >>= 1
        c += 1
    return idx


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class FactoredPolicyParams:
    """Per-cell activation weights and the critic weight vector."""

    weights: np.ndarray  # (n_cells, d)
    critic: np.ndarray   # (d,)
    n_cells: int
    t_max: int

    @classmethod
    def zeros(cls, n_cells: int, t_max: int) -> "FactoredPolicyParams":
        d = feature_dim(n_cells, t_max)
        return cls(np.zeros((n_cells, d)), np.zeros(d), n_cells, t_max)

    def activation_probs(self, s: TrackState) -> np.ndarray:
        idx = feature_indices(s, self.n_cells, self.t_max)
        return _sigmoid(self.weights[:, idx].sum(axis=1))

    def state_value(self, s: TrackState) -> float:
        idx = feature_indices(s, self.n_cells, self.t_max)
        return float(self.critic[idx].sum())

    def sample_action(self, s: TrackState, rng: np.random.Generator) -> SensingAction:
        probs = self.activation_probs(s)
        bits = rng.random(self.n_cells) < probs
        mask = 0
        for i in range(self.n_cells):
            if bits[i]:
                mask |= 1 << i
        return SensingAction(mask, self.n_cells)

    def mode_action(self, s: TrackState) -> SensingAction:
        """Most likely action: activate cells with probability >= 1/2."""
        probs = self.activation_probs(s)
        mask = 0
        for i in range(self.n_cells):
            if probs[i] >= 0.5:
                mask |= 1 << i
        return SensingAction(mask, self.n_cells)

    def as_policy(self):
        return self.mode_action


def log_policy_prob(params: FactoredPolicyParams, s: TrackState, a: SensingAction) -> float:
    probs = params.activation_probs(s)
    logp = 0.0
    for i in range(params.n_cells):
        p_i = probs[i]
        if (a.mask >> i) & 1:
            logp += np.log(p_i)
        else:
            logp += np.log1p(-p_i)
    return float(logp)


def score_gradient(params: FactoredPolicyParams, s: TrackState, a: SensingAction):
    """d log pi(a|s) / d weights, returned as (per-cell coefficient vector,
    active feature indices): the dense gradient is coeff[:, None] on those
    columns and zero elsewhere."""
    probs = params.activation_probs(s)
    taken = np.array([(a.mask >> i) & 1 for i in range(params.n_cells)], dtype=float)
    coeff = taken - probs
    idx = feature_indices(s, params.n_cells, params.t_max)
    return coeff, idx


def check_score_gradient(
    n_cells: int,
    t_max: int,
    rng: np.random.Generator,
    points: int = 100,
    h: float = 1e-5,
) -> float:
    """Compare the analytic score gradient with central finite differences at
    random parameter points; returns the worst relative error."""
    worst = 0.0
    for _ in range(points):
        params = FactoredPolicyParams(
            rng.normal(0.0, 0.7, (n_cells, feature_dim(n_cells, t_max))),
            np.zeros(feature_dim(n_cells, t_max)),
            n_cells,
            t_max,
        )
        n = int(rng.integers(0, t_max + 2))
        history = tuple(
            SensingAction(int(rng.integers(0, 1 << n_cells)), n_cells) for _ in range(n)
        )
        s = TrackState(int(rng.integers(1, n_cells + 1)), n, history)
        a = SensingAction(int(rng.integers(0, (1 << n_cells))), n_cells)
        coeff, idx = score_gradient(params, s, a)
        cell = int(rng.integers(n_cells))
        col = idx[int(rng.integers(len(idx)))]
        analytic = coeff[cell]
        w_plus = params.weights.copy()
        w_minus = params.weights.copy()
        w_plus[cell, col] += h
        w_minus[cell, col] -= h
        up = log_policy_prob(
            FactoredPolicyParams(w_plus, params.critic, n_cells, t_max), s, a
        )
        down = log_policy_prob(
            FactoredPolicyParams(w_minus, params.critic, n_cells, t_max), s, a
        )
        fd = (up - down) / (2 * h)
        scale = max(abs(analytic), abs(fd), 1e-8)
        worst = max(worst, abs(analytic - fd) / scale)
    return worst


def actor_critic_factored(
    kernel: TransitionKernel,
    p: RewardParams,
    hyper: ActorCriticHyper,
    seed: int,
) -> FactoredPolicyParams:
    """Train the factored policy by one-step advantage actor-critic.

    Runs the finite-difference gradient self-check before training and
    aborts with diagnostics on any non-finite update. Deterministic given
    the seed.
    """
    ensure_terminating(kernel, p)
    rng = np.random.default_rng(seed)
    worst = check_score_gradient(
        kernel.n_cells, p.t_max, rng, hyper.grad_check_points, hyper.grad_check_step
    )
    if worst > hyper.grad_check_tol:
        raise SolverError(f"score-gradient check failed: rel err {worst:.3e}")

    params = FactoredPolicyParams.zeros(kernel.n_cells, p.t_max)
    gamma = p.gamma
    safe = SensingAction.safe(kernel.n_cells)
    for _episode in range(hyper.episodes):
        x = int(rng.integers(1, kernel.n_cells + 1))
        s = initial_state(x)
        for _ in range(hyper.step_cap):
            forced = s.n == p.t_max + 1
            a = safe if forced else params.sample_action(s, rng)
            x = sample_next(kernel, x, rng)
            out = step(s, a, x, p)
            nxt = out.next_state
            v_s = params.state_value(s)
            v_n = 0.0 if is_terminal(nxt) else params.state_value(nxt)
            delta = out.reward + gamma * v_n - v_s
            if not np.isfinite(delta):
                raise SolverError(
                    f"non-finite TD error at episode {_episode}: reward={out.reward}, "
                    f"v(s)={v_s}, v(s')={v_n}"
                )
            idx = feature_indices(s, params.n_cells, params.t_max)
            params.critic[idx] += hyper.lr_critic * delta
            if not forced:
                coeff, _ = score_gradient(params, s, a)
                with np.errstate(invalid="ignore", over="ignore"):
                    update = hyper.lr_actor * delta * coeff
                if not np.all(np.isfinite(update)):
                    raise SolverError(f"non-finite actor update at episode {_episode}")
                params.weights[:, idx] += update[:, None]
            if is_terminal(nxt):
                break
            s = nxt
    if not (np.all(np.isfinite(params.weights)) and np.all(np.isfinite(params.critic))):
        raise SolverError("training produced non-finite parameters")
    return params
