import itertools

import numpy as np
import pytest

from polargrad.errors import ShapeError
from polargrad.transport import (
    CostMatrix,
    IpotConfig,
    SentenceDistribution,
    cost_matrix,
    exact_1d_oracle,
    exact_assignment_oracle,
    exact_proximal_config,
    ipot_solve,
)


def random_1d_pair(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 9, size=2)
    xu = rng.normal(size=n) * rng.uniform(0.5, 2.0)
    xv = rng.normal(size=m) * rng.uniform(0.5, 2.0)
    wu = rng.uniform(0.1, 1.0, size=n)
    wv = rng.uniform(0.1, 1.0, size=m)
    return (
        SentenceDistribution(xu, wu / wu.sum()),
        SentenceDistribution(xv, wv / wv.sum()),
    )


def random_uniform_pair(seed, max_n=6):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_n + 1))
    d = int(rng.integers(1, 5))
    return (
        SentenceDistribution(rng.normal(size=(n, d))),
        SentenceDistribution(rng.normal(size=(n, d))),
    )


# -- construction --------------------------------------------------------


def test_weights_renormalized_within_slack():
    u = SentenceDistribution([[0.0], [1.0]], [0.5, 0.5 + 5e-7])
    assert abs(u.weights.sum() - 1.0) < 1e-15


def test_weights_far_from_one_rejected():
    with pytest.raises(ShapeError):
        SentenceDistribution([[0.0], [1.0]], [0.5, 0.6])


def test_negative_weights_rejected():
    with pytest.raises(ShapeError):
        SentenceDistribution([[0.0], [1.0]], [1.5, -0.5])


def test_scalar_supports_promoted():
    u = SentenceDistribution([1.0, 2.0, 3.0])
    assert u.support.shape == (3, 1)
    assert u.dim == 1


# -- cost matrix ---------------------------------------------------------


def test_cost_three_four_five():
    u = SentenceDistribution([[0.0, 0.0]])
    v = SentenceDistribution([[3.0, 4.0]])
    np.testing.assert_allclose(cost_matrix(u, v).entries, [[25.0]])


def test_cost_zero_diagonal_for_identical_supports():
    pts = np.random.default_rng(0).normal(size=(4, 3))
    u = SentenceDistribution(pts)
    c = cost_matrix(u, u).entries
    np.testing.assert_allclose(np.diag(c), 0.0, atol=1e-12)
    assert np.all(c >= 0)


def test_cost_1d_squares():
    u = SentenceDistribution([[0.0]])
    v = SentenceDistribution([[1.0], [3.0]])
    np.testing.assert_allclose(cost_matrix(u, v).entries, [[1.0, 9.0]])


def test_cost_dim_mismatch():
    with pytest.raises(ShapeError):
        cost_matrix(SentenceDistribution([[0.0]]), SentenceDistribution([[0.0, 1.0]]))


# -- oracles -------------------------------------------------------------


def test_1d_oracle_hand_example():
    u = SentenceDistribution([0.0, 2.0])
    v = SentenceDistribution([1.0, 3.0])
    assert exact_1d_oracle(u, v) == pytest.approx(1.0, abs=1e-12)


def test_1d_oracle_identical_is_zero():
    u = SentenceDistribution([0.3, -1.2, 4.0], [0.2, 0.5, 0.3])
    assert exact_1d_oracle(u, u) == pytest.approx(0.0, abs=1e-12)


def test_1d_oracle_point_masses():
    u = SentenceDistribution([0.0])
    v = SentenceDistribution([5.0])
    assert exact_1d_oracle(u, v) == pytest.approx(25.0)


def test_1d_oracle_rejects_vectors():
    with pytest.raises(ShapeError):
        exact_1d_oracle(
            SentenceDistribution([[0.0, 1.0]]), SentenceDistribution([[1.0, 0.0]])
        )


def test_assignment_oracle_n1():
    u = SentenceDistribution([[0.0, 0.0]])
    v = SentenceDistribution([[1.0, 2.0]])
    assert exact_assignment_oracle(u, v) == pytest.approx(5.0)


def test_assignment_oracle_2x2_example():
    u = SentenceDistribution([[0.0, 0.0], [1.0, 0.0]])
    v = SentenceDistribution([[0.0, 1.0], [1.0, 1.0]])
    assert exact_assignment_oracle(u, v) == pytest.approx(1.0)


def test_assignment_oracle_matches_brute_force_mean():
    rng = np.random.default_rng(42)
    u = SentenceDistribution(rng.normal(size=(3, 2)))
    v = SentenceDistribution(rng.normal(size=(3, 2)))
    C = cost_matrix(u, v).entries
    expect = min(
        sum(C[i, p[i]] for i in range(3)) for p in itertools.permutations(range(3))
    ) / 3.0
    assert exact_assignment_oracle(u, v) == pytest.approx(expect)


def test_assignment_oracle_guards():
    rng = np.random.default_rng(1)
    u = SentenceDistribution(rng.normal(size=(7, 2)))
    v = SentenceDistribution(rng.normal(size=(7, 2)))
    with pytest.raises(ShapeError):
        exact_assignment_oracle(u, v)
    with pytest.raises(ShapeError):
        exact_assignment_oracle(
            SentenceDistribution([[0.0], [1.0]], [0.7, 0.3]),
            SentenceDistribution([[0.0], [1.0]]),
        )


# -- IPOT ----------------------------------------------------------------


def test_ipot_identical_distributions_near_zero():
    rng = np.random.default_rng(3)
    u = SentenceDistribution(rng.normal(size=(4, 3)))
    value, plan = ipot_solve(u, u)
    assert value <= 1e-6
    assert plan.converged


def test_ipot_1d_example():
    u = SentenceDistribution([0.0, 2.0])
    v = SentenceDistribution([1.0, 3.0])
    value, _ = ipot_solve(u, v)
    assert value == pytest.approx(1.0, abs=1e-3)


def test_ipot_2x2_example():
    u = SentenceDistribution([[0.0, 0.0], [1.0, 0.0]])
    v = SentenceDistribution([[0.0, 1.0], [1.0, 1.0]])
    value, _ = ipot_solve(u, v)
    assert value == pytest.approx(1.0, abs=1e-3)


def test_ipot_n3_matches_assignment():
    rng = np.random.default_rng(7)
    u = SentenceDistribution(rng.normal(size=(3, 2)))
    v = SentenceDistribution(rng.normal(size=(3, 2)))
    value, _ = ipot_solve(u, v)
    assert value == pytest.approx(exact_assignment_oracle(u, v), abs=1e-3)


@pytest.mark.parametrize("seed", range(100))
def test_ipot_agrees_with_1d_oracle(seed):
    u, v = random_1d_pair(1000 + seed)
    value, plan = ipot_solve(u, v)
    oracle = exact_1d_oracle(u, v)
    assert abs(value - oracle) / max(1.0, oracle) <= 1e-3
    assert np.all(plan.coupling >= 0)


@pytest.mark.parametrize("seed", range(100))
def test_ipot_agrees_with_assignment_oracle(seed):
    u, v = random_uniform_pair(2000 + seed)
    value, plan = ipot_solve(u, v)
    oracle = exact_assignment_oracle(u, v)
    assert abs(value - oracle) / max(1.0, oracle) <= 1e-3
    assert plan.marginal_residual == pytest.approx(0.0, abs=1e-5)


def test_ipot_plan_marginals_match_weights():
    u, v = random_1d_pair(5)
    _, plan = ipot_solve(u, v)
    np.testing.assert_allclose(plan.coupling.sum(axis=1), u.weights, atol=plan.marginal_residual + 1e-12)
    np.testing.assert_allclose(plan.coupling.sum(axis=0), v.weights, atol=plan.marginal_residual + 1e-12)


def test_ipot_budget_exhaustion_flags_not_raises():
    u, v = random_1d_pair(1012)  # the hard instance: needs ~2000 iterations
    value, plan = ipot_solve(u, v, cfg=IpotConfig(outer_iters=20))
    assert not plan.converged
    assert plan.marginal_residual > 1e-6


@pytest.mark.parametrize("seed", range(40))
def test_ipot_value_monotone_under_exact_proximal_steps(seed):
    """Accurate proximal steps recover the textbook monotone decrease
    (warm-started single-scaling iterates are provably not monotone: the
    infeasible intermediate plans can undershoot the optimum)."""
    u, v = random_1d_pair(1000 + seed) if seed % 2 else random_uniform_pair(2000 + seed)
    _, plan = ipot_solve(u, v, cfg=exact_proximal_config())
    steps = np.diff(plan.value_history[5:])
    assert np.all(steps <= 1e-9)


def test_w2_metric_axioms_on_oracle_values():
    rng = np.random.default_rng(99)
    tri_slack = 1e-9
    for _ in range(200):
        n = int(rng.integers(1, 5))
        d = int(rng.integers(1, 4))
        u = SentenceDistribution(rng.normal(size=(n, d)))
        v = SentenceDistribution(rng.normal(size=(n, d)))
        w = SentenceDistribution(rng.normal(size=(n, d)))
        duv = np.sqrt(exact_assignment_oracle(u, v))
        dvu = np.sqrt(exact_assignment_oracle(v, u))
        assert abs(duv - dvu) <= 1e-9
        assert exact_assignment_oracle(u, u) == pytest.approx(0.0, abs=1e-12)
        duw = np.sqrt(exact_assignment_oracle(u, w))
        dvw = np.sqrt(exact_assignment_oracle(v, w))
        assert duw <= duv + dvw + tri_slack


def test_ipot_kernel_underflow_raises():
    from polargrad.errors import NumericError

    u = SentenceDistribution([[0.0]])
    v = SentenceDistribution([[1e6]])
    with pytest.raises(NumericError):
        ipot_solve(u, v)


def test_cost_matrix_reuse():
    u, v = random_uniform_pair(11)
    c = cost_matrix(u, v)
    val1, _ = ipot_solve(u, v, cost=c)
    val2, _ = ipot_solve(u, v)
    assert val1 == val2
