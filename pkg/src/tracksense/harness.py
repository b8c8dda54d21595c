"""Episode simulation and metrics.

Episodes are reproducible: episode (start, replicate) pairs derive their
generators from ``SeedSequence(base_seed, spawn_key=(start, replicate))``,
so runs are order-independent and embarrassingly parallel. Reward totals use
compensated summation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .belief import belief_from_track_state, qmdp_action, qmdp_upper_bound
from .errors import ValidationError
from .grid import RewardParams, SensingAction, TransitionKernel, sample_next
from .trackmdp import constrain_action, initial_state, is_terminal, step

CSV_COLUMNS = [
    "policy_id",
    "n",
    "z",
    "c",
    "r",
    "D",
    "t_max",
    "gamma",
    "episodes",
    "aihtr",
    "aihtr_stderr",
    "hamming_accuracy",
    "mean_episode_length",
    "seed",
]


@dataclass(frozen=True)
class StepRecord:
    k: int
    x: int
    action: SensingAction
    observation: object
    reward: float
    estimate: int | None = None


@dataclass
class EpisodeLog:
    seed: int
    start_cell: int
    steps: list
    total_reward: float
    detected_steps: int
    length: int          # in-grid steps; the exit step is excluded
    exited: bool
    capped: bool


def episode_rng(base_seed: int, start: int, replicate: int) -> np.random.Generator:
    """Splittable per-episode generator: SeedSequence(base, spawn_key=(start, rep))."""
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(start, replicate)))


def run_episode(
    policy,
    kernel: TransitionKernel,
    p: RewardParams,
    x0: int,
    seed,
    step_cap: int = 100_000,
    estimator=None,
) -> EpisodeLog:
    """Simulate one episode from a known start cell until exit or the cap.

    ``policy`` maps track states to actions; the safe-sensing constraint is
    applied on top. ``seed`` is an int or a Generator. ``estimator``, when
    given, is called as estimator(state, action) after every miss and its
    cell recorded.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = initial_state(x0)
    x = x0
    steps = []
    rewards = []
    detected = 0
    exited = capped = False
    k = 0
    while True:
        k += 1
        a = constrain_action(s, policy(s), p)
        x = sample_next(kernel, x, rng)
        out = step(s, a, x, p)
        estimate = None
        if out.observation.is_miss and estimator is not None:
            estimate = estimator(s, a)
        steps.append(StepRecord(k, x, a, out.observation, out.reward, estimate))
        rewards.append(out.reward)
        if out.observation.is_seen:
            detected += 1
        if is_terminal(out.next_state):
            exited = True
            break
        s = out.next_state
        if k >= step_cap:
            capped = True
            break
    length = len(steps) - (1 if exited else 0)
    seed_val = seed if isinstance(seed, int) else -1
    return EpisodeLog(
        seed=seed_val,
        start_cell=x0,
        steps=steps,
        total_reward=math.fsum(rewards),
        detected_steps=detected,
        length=length,
        exited=exited,
        capped=capped,
    )


@dataclass
class MetricsRow:
    policy_id: str
    n: int
    z: int | None
    c: float
    r: float
    D: float
    t_max: int
    gamma: float
    episodes: int
    aihtr: float
    aihtr_stderr: float
    hamming_accuracy: float | None
    mean_episode_length: float | None
    seed: int

    def to_list(self):
        out = []
        for col in CSV_COLUMNS:
            val = getattr(self, col)
            out.append("" if val is None else val)
        return out


def aihtr(
    policy,
    kernel: TransitionKernel,
    p: RewardParams,
    episodes_per_start: int,
    base_seed: int,
    step_cap: int = 100_000,
    policy_id: str = "policy",
    z: int | None = None,
) -> MetricsRow:
    """Average infinite-horizon tracking reward: the empirical episode total,
    averaged uniformly over all N^2 starting cells."""
    if episodes_per_start < 1:
        raise ValidationError("episodes_per_start must be >= 1")
    totals = []
    lengths = []
    detected = 0
    in_grid = 0
    for start in range(1, kernel.n_cells + 1):
        for rep in range(episodes_per_start):
            rng = episode_rng(base_seed, start, rep)
            log = run_episode(policy, kernel, p, start, rng, step_cap)
            totals.append(log.total_reward)
            lengths.append(log.length)
            detected += log.detected_steps
            in_grid += log.length
    totals = np.asarray(totals)
    mean = float(totals.mean())
    stderr = float(totals.std(ddof=1) / math.sqrt(len(totals))) if len(totals) > 1 else math.inf
    return MetricsRow(
        policy_id=policy_id,
        n=kernel.n,
        z=z,
        c=p.c,
        r=p.r,
        D=p.D,
        t_max=p.t_max,
        gamma=p.gamma,
        episodes=len(totals),
        aihtr=mean,
        aihtr_stderr=stderr,
        hamming_accuracy=(detected / in_grid) if in_grid else None,
        mean_episode_length=float(np.mean(lengths)),
        seed=base_seed,
    )


def hamming_accuracy(logs) -> float:
    """Pooled fraction of in-grid steps with a perfect observation."""
    logs = list(logs)
    if not logs:
        raise ValidationError("no episode logs")
    detected = sum(log.detected_steps for log in logs)
    total = sum(log.length for log in logs)
    if total == 0:
        raise ValidationError("no in-grid steps across the logs")
    return detected / total


def qmdp_track_policy(kernel: TransitionKernel, p: RewardParams):
    """The threshold baseline as a track-state policy (belief reconstructed
    from the state each step)."""

    def policy_fn(s):
        return qmdp_action(belief_from_track_state(s, kernel), kernel, p)

    return policy_fn


def dormant_policy(n_cells: int):
    """Sense nothing; the harness's constraint layer fires the safe action."""
    empty = SensingAction(0, n_cells)
    return lambda s: empty


def full_grid_policy(n_cells: int):
    full = SensingAction.from_cells(range(1, n_cells + 1), n_cells)
    return lambda s: full


@dataclass
class ComparePoint:
    """One sweep point: a kernel, reward parameters, and named policies."""

    kernel: TransitionKernel
    params: RewardParams
    policies: dict
    z: int | None = None


def compare(
    points,
    episodes_per_start: int,
    base_seed: int,
    step_cap: int = 100_000,
    include_qmdp: bool = True,
    include_upper_bound: bool = True,
):
    """Evaluate every policy on every point; adds the threshold baseline and
    the upper-bound row per point. Returns MetricsRow list."""
    points = list(points)
    if not points:
        raise ValidationError("no compare points")
    names = sorted(points[0].policies)
    for pt in points:
        if sorted(pt.policies) != names:
            missing = set(names) ^ set(pt.policies)
            raise ValidationError(f"policy sets differ across points: {sorted(missing)}")
    rows = []
    for pt in points:
        for name in names:
            rows.append(
                aihtr(
                    pt.policies[name],
                    pt.kernel,
                    pt.params,
                    episodes_per_start,
                    base_seed,
                    step_cap,
                    policy_id=name,
                    z=pt.z,
                )
            )
        if include_qmdp:
            rows.append(
                aihtr(
                    qmdp_track_policy(pt.kernel, pt.params),
                    pt.kernel,
                    pt.params,
                    episodes_per_start,
                    base_seed,
                    step_cap,
                    policy_id="qmdp",
                    z=pt.z,
                )
            )
        if include_upper_bound:
            table, _ = qmdp_upper_bound(pt.kernel, pt.params)
            rows.append(
                MetricsRow(
                    policy_id="upper_bound",
                    n=pt.kernel.n,
                    z=pt.z,
                    c=pt.params.c,
                    r=pt.params.r,
                    D=pt.params.D,
                    t_max=pt.params.t_max,
                    gamma=pt.params.gamma,
                    episodes=0,
                    aihtr=float(table.v_star.mean()),
                    aihtr_stderr=0.0,
                    hamming_accuracy=None,
                    mean_episode_length=None,
                    seed=base_seed,
                )
            )
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.to_list())
    return buf.getvalue()


def write_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(rows_to_csv(rows))


def parse_csv(text: str):
    """Parse a metrics CSV back into MetricsRow values (round-trip inverse)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_COLUMNS:
        raise ValidationError(f"unexpected metrics CSV header: {header}")
    rows = []
    for rec in reader:
        vals = dict(zip(CSV_COLUMNS, rec))
        rows.append(
            MetricsRow(
                policy_id=vals["policy_id"],
                n=int(vals["n"]),
                z=int(vals["z"]) if vals["z"] != "" else None,
                c=float(vals["c"]),
                r=float(vals["r"]),
                D=float(vals["D"]),
                t_max=int(vals["t_max"]),
                gamma=float(vals["gamma"]),
                episodes=int(vals["episodes"]),
                aihtr=float(vals["aihtr"]),
                aihtr_stderr=float(vals["aihtr_stderr"]),
                hamming_accuracy=float(vals["hamming_accuracy"]) if vals["hamming_accuracy"] != "" else None,
                mean_episode_length=float(vals["mean_episode_length"]) if vals["mean_episode_length"] != "" else None,
                seed=int(vals["seed"]),
            )
        )
    return rows


def episode_to_jsonl(log: EpisodeLog) -> str:
    """One JSON record per step, for log export."""
    lines = []
    for rec in log.steps:
        lines.append(
            json.dumps(
                {
                    "k": rec.k,
                    "x": rec.x,
                    "action": rec.action.to_json(),
                    "observation": rec.observation.kind,
                    "reward": rec.reward,
                    "estimate": rec.estimate,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"
