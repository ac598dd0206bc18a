"""Inclusion probabilities from importance values."""
import pytest
import numpy as np

from unetslim.core.exceptions import ArgumentError, DegeneratePointError
from unetslim.pruning import (
    solve_inclusion,
    oracle_active_set,
    solver_jacobian,
    budget_from_rate,
    PRUNING_RATES,
)


def random_cases(seed, count, max_size=10):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        N = int(rng.integers(2, max_size + 1))
        n = int(rng.integers(1, N))
        q = rng.uniform(0.01, 1.0, N)
        yield q, n


def finite_differences(q, n, h=1e-6):
    jac = np.zeros((q.size, q.size))
    for j in range(q.size):
        dq = np.zeros(q.size)
        dq[j] = h
        jac[:, j] = (solve_inclusion(q + dq, n).p - solve_inclusion(q - dq, n).p) / (2 * h)
    return jac


class TestSolve:

    def test_uniform(self):
        solution = solve_inclusion([0.5, 0.5, 0.5, 0.5], 2)
        assert np.array_equal(solution.p, [0.5, 0.5, 0.5, 0.5])
        assert solution.c == pytest.approx(1.0)
        assert solution.objective == pytest.approx(0.0, abs=1e-20)

    def test_proportional(self):
        solution = solve_inclusion([1.0, 0.1, 0.1], 1)
        assert solution.t == 1
        assert np.allclose(solution.p, [5 / 6, 1 / 12, 1 / 12], atol=1e-12)
        assert solution.c == pytest.approx(5 / 6)
        assert solution.objective == pytest.approx(0.0, abs=1e-20)

    def test_clamped(self):
        q = [0.9, 0.8, 0.05]
        solution = solve_inclusion(q, 2)
        assert solution.t == 2
        assert solution.p[0] == 1.0
        assert abs(solution.objective - oracle_active_set(q, 2).objective) <= 1e-9
        assert np.allclose(solution.p, oracle_active_set(q, 2).p, atol=1e-9)

    def test_unsorted_input(self):
        solution = solve_inclusion([0.05, 0.8, 0.9], 2)
        assert solution.p[2] == 1.0
        assert np.allclose(solution.p[::-1], solve_inclusion([0.9, 0.8, 0.05], 2).p)

    def test_near_saturated(self):
        q = [0.99, 0.98, 0.01]
        solution = solve_inclusion(q, 2)
        oracle = oracle_active_set(q, 2)
        assert abs(solution.objective - oracle.objective) <= 1e-9
        assert np.allclose(solution.p, oracle.p, atol=1e-9)

    def test_to_dict(self):
        out = solve_inclusion([0.9, 0.8, 0.05], 2).to_dict()
        assert sorted(out) == ["c", "objective", "p", "t"]
        assert isinstance(out["t"], int)

    def test_gamma_is_zero(self):
        solution = solve_inclusion([0.9, 0.8, 0.05], 2)
        assert np.array_equal(solution.gamma, np.zeros(3))
        assert solution.delta[0] >= 0

    @pytest.mark.parametrize(
        "q, n", [([0.5, 0.5], 0), ([0.5, 0.5], 2), ([0.5, 0.5, 0.2], 1.5), ([0.5], 1)]
    )
    def test_bad_budget(self, q, n):
        with pytest.raises(ArgumentError):
            solve_inclusion(q, n)

    def test_zero_importance_clamped(self):
        with pytest.warns(UserWarning, match="clamped"):
            solution = solve_inclusion([0.0, 0.5, 0.5], 1)
        assert abs(solution.p.sum() - 1) <= 1e-9
        assert solution.p[0] >= -1e-12

    def test_invariants(self):
        for q, n in random_cases(0, 300):
            solution = solve_inclusion(q, n)
            assert abs(solution.p.sum() - n) <= 1e-9
            assert np.all(solution.p >= -1e-12) and np.all(solution.p <= 1 + 1e-12)
            assert solution.c >= 0

    def test_proportional_when_unclamped(self):
        for q, n in random_cases(1, 200):
            solution = solve_inclusion(q, n)
            if solution.t == 1:
                ratio = solution.p / q
                assert np.max(np.abs(ratio - ratio[0])) <= 1e-10

    def test_scale_covariance(self):
        rng = np.random.default_rng(2)
        for q, n in random_cases(3, 100):
            s = float(rng.uniform(0.1, 10.0))
            base, scaled = solve_inclusion(q, n), solve_inclusion(s * q, n)
            assert scaled.t == base.t
            assert np.allclose(scaled.p, base.p, atol=1e-10)
            assert scaled.c == pytest.approx(base.c / s, rel=1e-8)


class TestOracle:

    def test_uniform(self):
        oracle = oracle_active_set([0.5, 0.5, 0.5, 0.5], 2)
        assert np.allclose(oracle.p, 0.5, atol=1e-12)
        assert oracle.objective == pytest.approx(0.0, abs=1e-20)
        assert oracle.t == 1

    def test_matches_solver(self):
        for q, n in random_cases(4, 500):
            solution, oracle = solve_inclusion(q, n), oracle_active_set(q, n)
            assert abs(oracle.objective - solution.objective) <= 1e-9

    def test_ties(self):
        q = [0.7, 0.7, 0.2, 0.2, 0.2]
        assert abs(solve_inclusion(q, 3).objective - oracle_active_set(q, 3).objective) <= 1e-9

    def test_too_large(self):
        with pytest.raises(ArgumentError):
            oracle_active_set(np.full(17, 0.5), 2)


class TestJacobian:

    def test_column_sums(self):
        for q, n in random_cases(5, 100):
            solution = solve_inclusion(q, n)
            if solution.margin <= 1e-4:
                continue
            jac = solver_jacobian(q, n)
            assert np.max(np.abs(jac.sum(axis=0))) <= 1e-10

    def test_proportional_branch(self):
        q = np.array([0.3, 0.2, 0.25, 0.25])
        jac = solver_jacobian(q, 1)
        S = q.sum()
        expected = (1 / S) * (np.eye(4) - np.outer(q, np.ones(4)) / S)
        assert np.allclose(jac, expected, atol=1e-12)

    def test_finite_differences(self):
        tested = 0
        for q, n in random_cases(6, 200):
            solution = solve_inclusion(q, n)
            if solution.t > n or solution.margin <= 1e-3:
                continue
            jac = solver_jacobian(q, n)
            assert np.max(np.abs(jac - finite_differences(q, n))) <= 1e-5
            tested += 1
        assert tested >= 20

    def test_clamped_rows(self):
        q = np.array([0.9, 0.8, 0.05])
        jac = solver_jacobian(q, 2)
        assert np.array_equal(jac[0], np.zeros(3))
        ste = solver_jacobian(q, 2, ste=True)
        assert np.any(ste[0] != 0)
        assert np.array_equal(ste[1:], jac[1:])

    def test_degenerate(self):
        # p_0 = 2 * 0.5 / 1.0 sits exactly on the upper bound
        with pytest.raises(DegeneratePointError) as exc:
            solver_jacobian([0.5, 0.25, 0.25], 2)
        assert exc.value.index == 0
        assert "p <= 1" in str(exc.value)


@pytest.mark.parametrize(
    "rate, N, n", [(0.7, 14, 4), (0.8, 14, 3), (0.9, 14, 1), (0.0, 14, 14), (0.5, 5, 3)]
)
def test_budget_from_rate(rate, N, n):
    assert budget_from_rate(rate, N) == n


def test_budget_bad_rate():
    with pytest.raises(ArgumentError):
        budget_from_rate(1.5, 10)


def test_pruning_rates():
    assert PRUNING_RATES == (0.7, 0.8, 0.9)
