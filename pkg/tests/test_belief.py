import numpy as np
import pytest

from tracksense.belief import (
    Belief,
    UpperBoundTable,
    belief_from_track_state,
    belief_update,
    load_upper_bound,
    qmdp_action,
    qmdp_upper_bound,
    renormalize_excluding,
    save_upper_bound,
)
from tracksense.errors import ImpossibleMissError, NonContractionError
from tracksense.grid import (
    EXITED,
    RewardParams,
    SensingAction,
    TransitionKernel,
    UNINFORMATIVE,
    make_experiment_kernel,
    sample_next,
    seen,
)
from tracksense.trackmdp import TERMINAL, TrackState, constrain_action, initial_state, step

from conftest import single_cell_kernel
from oracles import single_cell_sense_value


def action(cells, n_cells):
    return SensingAction.from_cells(cells, n_cells)


# ---------------------------------------------------------------- renormalize

def test_renormalize_worked_example():
    out = renormalize_excluding(np.array([0.2, 0.3, 0.4, 0.1]), action([1], 4))
    assert np.allclose(out, [0.0, 0.375, 0.5, 0.125], atol=1e-15)


def test_renormalize_empty_action_is_identity():
    alpha = np.array([0.2, 0.3, 0.4, 0.1])
    assert np.array_equal(renormalize_excluding(alpha, action([], 4)), alpha)


def test_renormalize_output_sums_to_one():
    rng = np.random.default_rng(1)
    for _ in range(500):
        alpha = rng.dirichlet(np.ones(9))
        mask = int(rng.integers(0, 1 << 9))
        a = SensingAction(mask, 9)
        inside = sum(alpha[c - 1] for c in a.cells)
        if 1.0 - inside <= 1e-13:
            continue
        out = renormalize_excluding(alpha, a)
        assert abs(out.sum() - 1.0) <= 1e-12


def test_renormalize_rejects_impossible_miss():
    with pytest.raises(ImpossibleMissError):
        renormalize_excluding(np.array([1.0, 0.0]), action([1], 2))


# ---------------------------------------------------------------- update

def test_update_no_motion_no_information():
    # identity motion on cells, no exit mass
    m = np.zeros((5, 5))
    m[:4, :4] = np.eye(4)
    m[4, 4] = 1.0
    kernel = TransitionKernel(2, m)
    v = Belief.point(1, 4)
    out = belief_update(v, action([], 4), UNINFORMATIVE, kernel)
    assert np.allclose(out.cell_probs, [1, 0, 0, 0], atol=1e-15)
    assert out.n == 1


def test_update_uniform_miss_example(kernel_2x2_uniform):
    v = Belief.point(1, 4)
    out = belief_update(v, action([2], 4), UNINFORMATIVE, kernel_2x2_uniform)
    assert np.allclose(out.cell_probs, [1 / 3, 0.0, 1 / 3, 1 / 3], atol=1e-12)
    assert out.n == 1


def test_update_detection_resets(kernel_2x2_uniform):
    v = Belief(np.array([0.1, 0.2, 0.3, 0.4]), 1)
    out = belief_update(v, action([3], 4), seen(3), kernel_2x2_uniform)
    assert np.array_equal(out.cell_probs, [0, 0, 1, 0])
    assert out.n == 0


def test_update_rejects_exit_observation(kernel_2x2_uniform):
    with pytest.raises(ValueError):
        belief_update(Belief.point(1, 4), action([], 4), EXITED, kernel_2x2_uniform)


def test_update_support_exclusion(kernel_4x4):
    rng = np.random.default_rng(2)
    v = Belief.point(3, 16)
    for _ in range(200):
        mask = int(rng.integers(0, 1 << 16))
        a = SensingAction(mask, 16)
        try:
            v = belief_update(v, a, UNINFORMATIVE, kernel_4x4)
        except ImpossibleMissError:
            v = Belief.point(int(rng.integers(1, 17)), 16)
            continue
        assert all(v.cell_probs[c - 1] == 0.0 for c in a.cells)
        if v.n > 6:
            v = Belief.point(int(rng.integers(1, 17)), 16)


def test_update_normalization_drift_stays_tiny(kernel_4x4):
    rng = np.random.default_rng(3)
    v = Belief.point(1, 16)
    worst = 0.0
    for i in range(100_000):
        mask = int(rng.integers(0, 1 << 16))
        a = SensingAction(mask, 16)
        try:
            v = belief_update(v, a, UNINFORMATIVE, kernel_4x4)
        except ImpossibleMissError:
            v = Belief.point(int(rng.integers(1, 17)), 16)
            continue
        worst = max(worst, abs(v.cell_probs.sum() - 1.0))
        if v.n > 8:
            v = Belief.point(int(rng.integers(1, 17)), 16)
    assert worst <= 1e-9


# ---------------------------------------------------------------- reconstruction

def test_reconstruction_base_case(kernel_4x4):
    for c in (1, 9):
        v = belief_from_track_state(initial_state(c), kernel_4x4)
        assert v.n == 0
        expected = np.zeros(16)
        expected[c - 1] = 1.0
        assert np.array_equal(v.cell_probs, expected)


def test_reconstruction_single_miss(kernel_2x2_uniform):
    s = TrackState(1, 1, (action([2], 4),))
    v = belief_from_track_state(s, kernel_2x2_uniform)
    assert np.allclose(v.cell_probs, [1 / 3, 0, 1 / 3, 1 / 3], atol=1e-12)
    assert v.n == 1


def test_reconstruction_matches_online_filter(kernel_4x4):
    """Co-simulate: the incrementally updated belief must equal the
    reconstruction from the track state at every step."""
    p = RewardParams(r=1.0, c=0.2, D=3.2, t_max=2)
    rng = np.random.default_rng(4)
    episodes = 0
    while episodes < 1000:
        start = int(rng.integers(1, 17))
        s = initial_state(start)
        v = Belief.point(start, 16)
        x = start
        for _ in range(50):
            proposal = qmdp_action(v, kernel_4x4, p)
            a = constrain_action(s, proposal, p)
            x = sample_next(kernel_4x4, x, rng)
            out = step(s, a, x, p)
            if out.next_state is TERMINAL:
                break
            s = out.next_state
            v = belief_update(v, a, out.observation, kernel_4x4)
            rebuilt = belief_from_track_state(s, kernel_4x4)
            assert rebuilt.n == v.n
            assert np.abs(rebuilt.cell_probs - v.cell_probs).max() <= 1e-10
        episodes += 1


# ---------------------------------------------------------------- qmdp policy

def test_qmdp_threshold_application():
    m = np.zeros((5, 5))
    m[0, :4] = [0.5, 0.3, 0.1, 0.1]
    for i in range(1, 4):
        m[i, :4] = 0.25
    m[4, 4] = 1.0
    kernel = TransitionKernel(2, m)
    p = RewardParams(r=1.0, c=0.2, D=1.0, t_max=3)
    a = qmdp_action(Belief.point(1, 4), kernel, p)
    assert a.cells == (1, 2) and not a.is_safe


def test_qmdp_forced_safe():
    kernel = make_experiment_kernel(3, 3, 0.05, 0.15, 5)
    p = RewardParams(r=1.0, c=0.2, D=1.8, t_max=1)
    v = Belief(np.ones(9) / 9, p.t_max + 1)
    a = qmdp_action(v, kernel, p)
    assert a.is_safe


def test_qmdp_dormant_when_all_below_threshold(kernel_2x2_uniform):
    p = RewardParams(r=1.0, c=0.3, D=1.2, t_max=3)  # c/r above uniform 0.25
    a = qmdp_action(Belief.point(2, 4), kernel_2x2_uniform, p)
    assert a.size == 0


def test_qmdp_threshold_predicate_everywhere(kernel_4x4):
    p = RewardParams(r=1.0, c=0.2, D=3.2, t_max=2)
    rng = np.random.default_rng(6)
    v = Belief.point(1, 16)
    for _ in range(2000):
        a = qmdp_action(v, kernel_4x4, p)
        w = v.cell_probs @ kernel_4x4.cell_block
        for c in range(1, 17):
            assert (c in a) == (w[c - 1] >= p.threshold)
        try:
            v = belief_update(v, a, UNINFORMATIVE, kernel_4x4)
        except ImpossibleMissError:
            v = Belief.point(int(rng.integers(1, 17)), 16)
        if v.n > p.t_max:
            v = Belief.point(int(rng.integers(1, 17)), 16)


# ---------------------------------------------------------------- upper bound

def test_upper_bound_single_cell_closed_form():
    kernel = single_cell_kernel(0.9)
    p = RewardParams(r=1.0, c=0.2, D=1.0, t_max=3)
    table, evaluator = qmdp_upper_bound(kernel, p)
    assert abs(table.v_star[0] - 7.0) <= 1e-10
    assert evaluator(Belief.point(1, 1)) == pytest.approx(7.0, abs=1e-9)


def test_upper_bound_dormant_threshold_zero(kernel_2x2_uniform):
    # uniform rows peak at 0.25 < c/r = 0.3, so no gain anywhere
    kernel = make_experiment_kernel(2, 9, 0.2, 0.15, 8)
    p = RewardParams(r=1.0, c=0.9, D=1.0, t_max=1)
    table, _ = qmdp_upper_bound(kernel, p)
    assert np.array_equal(table.v_star, np.zeros(4))


def test_upper_bound_evaluator_consistent_at_point_beliefs():
    kernel = make_experiment_kernel(3, 3, 0.05, 0.15, 9)
    p = RewardParams(r=1.0, c=0.2, D=1.8, t_max=2)
    table, evaluator = qmdp_upper_bound(kernel, p)
    for c in range(1, 10):
        assert evaluator(Belief.point(c, 9)) == pytest.approx(table.v_star[c - 1], abs=1e-9)


def test_upper_bound_matches_dense_solve():
    kernel = make_experiment_kernel(4, 4, 0.01, 0.15, 10)
    p = RewardParams(r=1.0, c=0.18, D=2.88, t_max=2)
    table, _ = qmdp_upper_bound(kernel, p)
    block = kernel.cell_block
    g = np.maximum(block * p.r - p.c, 0.0).sum(axis=1)
    dense = np.linalg.solve(np.eye(16) - block, g)
    assert np.abs(dense - table.v_star).max() <= 1e-8
    residual = np.abs(table.v_star - g - block @ table.v_star).max()
    assert residual <= 1e-10


def test_upper_bound_requires_contraction():
    # no exit mass and gamma = 1: the fixed point diverges
    m = np.zeros((2, 2))
    m[0, 0] = 1.0
    m[1, 1] = 1.0
    kernel = TransitionKernel(1, m)
    p = RewardParams(r=1.0, c=0.2, D=1.0, t_max=0, gamma=1.0)
    with pytest.raises(NonContractionError):
        qmdp_upper_bound(kernel, p)


def test_upper_bound_serialization_round_trip(tmp_path):
    kernel = make_experiment_kernel(3, 2, 0.05, 0.15, 11)
    p = RewardParams(r=1.0, c=0.2, D=1.8, t_max=2)
    table, _ = qmdp_upper_bound(kernel, p)
    path = tmp_path / "upper.json"
    save_upper_bound(table, kernel.n, path)
    reloaded = load_upper_bound(path)
    assert np.array_equal(reloaded.v_star, table.v_star)
