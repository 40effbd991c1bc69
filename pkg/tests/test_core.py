import numpy as np
import pytest

from dbot.core import (
    InfeasibleProblemError,
    KernelOverflowError,
    TransportProblem,
    build_kernel,
    column_violation,
    entropic_objective,
    entropy,
    grid_cost_matrix,
    kernel_underflows,
    kl_general,
    marginals,
    row_residual,
    transport_cost,
    validate_problem,
)
from dbot.oracle import oracle_feasible

LN2 = np.log(2.0)


def problem(a, lo, up, cost=None, eps=1.0):
    n = len(lo)
    cost = np.zeros((len(a), n)) if cost is None else cost
    return TransportProblem(cost, a, lo, up, eps)


class TestValidate:
    def test_bracketing_bounds_feasible(self):
        assert validate_problem(problem([0.5, 0.5], [0, 0], [1, 1])).ok

    def test_lower_mass_too_large(self):
        rep = validate_problem(problem([0.5, 0.5], [0.8, 0.8], [1, 1]))
        assert not rep.ok
        assert any("Σ b^d > Σ a" in v for v in rep.violations)

    def test_unnormalized_source(self):
        assert validate_problem(problem([1, 1], [0.6, 0], [1, 1])).ok

    def test_upper_mass_too_small(self):
        rep = validate_problem(problem([1, 1], [0, 0], [0.5, 0.5]))
        assert any("Σ a > Σ b^u" in v for v in rep.violations)

    def test_lower_above_upper_names_index(self):
        rep = validate_problem(problem([0.5, 0.5], [0.2, 0.6], [0.8, 0.4]))
        assert "bounds: lower exceeds upper at index 1" in rep.violations

    def test_infinite_upper_allowed(self):
        assert validate_problem(problem([0.5, 0.5], [0.1, 0.1], [np.inf, 0.2])).ok

    def test_shape_mismatch(self):
        rep = validate_problem(TransportProblem(np.zeros((2, 3)), [0.5, 0.5], [0, 0], [1, 1], 1.0))
        assert not rep.ok

    @pytest.mark.parametrize("eps", [0.0, -1.0, np.inf])
    def test_bad_epsilon(self, eps):
        assert not validate_problem(problem([1.0], [0], [1], eps=eps)).ok

    def test_negative_source(self):
        assert not validate_problem(problem([-0.5, 1.5], [0, 0], [1, 1])).ok

    def test_exactly_balanced_survives_rounding(self):
        a = np.full(10, 0.1)
        assert validate_problem(problem(a, np.full(3, 1 / 3), np.full(3, 1 / 3))).ok

    def test_error_type_is_value_error(self):
        assert issubclass(InfeasibleProblemError, ValueError)

    def test_matches_lp_feasibility_on_random_3x3(self):
        rng = np.random.default_rng(11)
        agree = 0
        for _ in range(60):
            a = rng.uniform(0, 1, 3)
            lo = rng.uniform(0, 0.8, 3)
            up = lo + rng.uniform(0, 0.8, 3)
            p = problem(a, lo, up)
            # skip near-ties where either side's tolerance decides the answer
            if min(abs(lo.sum() - a.sum()), abs(up.sum() - a.sum())) < 1e-6:
                continue
            assert validate_problem(p).ok == oracle_feasible(a, lo, up)
            agree += 1
        assert agree > 50


class TestKernel:
    def test_unit_cost(self):
        K = build_kernel(np.array([[0, 1], [1, 0]]), 1.0)
        np.testing.assert_allclose(K, [[1, np.exp(-1)], [np.exp(-1), 1]])

    def test_zero_cost(self):
        np.testing.assert_array_equal(build_kernel(np.zeros((3, 2)), 0.3), np.ones((3, 2)))

    def test_log_two(self):
        np.testing.assert_allclose(build_kernel(np.array([[0, LN2], [LN2, 0]]), 1.0), [[1, 0.5], [0.5, 1]])

    def test_round_trip(self):
        C = np.random.default_rng(0).uniform(0.1, 5, (4, 5))
        np.testing.assert_allclose(-0.7 * np.log(build_kernel(C, 0.7)), C, rtol=1e-12)

    def test_overflow_raises(self):
        with pytest.raises(KernelOverflowError, match="log-domain"):
            build_kernel(np.array([[-10.0]]), 1e-2)

    def test_underflow_detected(self):
        assert kernel_underflows(np.array([[0.0, 10.0]]), 1e-2)
        assert not kernel_underflows(np.array([[0.0, 1.0]]), 1.0)


class TestMeasures:
    @pytest.mark.parametrize(
        "P, rows, cols",
        [
            ([[0.25, 0.25], [0.25, 0.25]], [0.5, 0.5], [0.5, 0.5]),
            ([[1, 0], [0, 1]], [1, 1], [1, 1]),
            ([[0.3, 0.2], [0.3, 0.2]], [0.5, 0.5], [0.6, 0.4]),
        ],
    )
    def test_marginals(self, P, rows, cols):
        r, c = marginals(P)
        np.testing.assert_allclose(r, rows)
        np.testing.assert_allclose(c, cols)

    def test_transport_cost(self):
        C = np.array([[0, 1], [1, 0]])
        assert transport_cost(np.full((2, 2), 0.25), C) == pytest.approx(0.5)
        assert transport_cost(np.eye(2), C) == 0.0
        assert transport_cost(np.random.rand(2, 2), np.zeros((2, 2))) == 0.0

    def test_transport_cost_shape_mismatch(self):
        with pytest.raises(ValueError):
            transport_cost(np.ones((2, 2)), np.ones((2, 3)))

    def test_entropy_uniform(self):
        assert entropy(np.full((2, 2), 0.25)) == pytest.approx(np.log(4) + 1)

    def test_entropy_zero_entry(self):
        assert entropy([[0.0, 1.0]]) == pytest.approx(1.0)
        assert entropy([[1.0]]) == pytest.approx(1.0)

    def test_kl(self):
        K = np.random.default_rng(1).uniform(0.1, 1, (3, 3))
        assert kl_general(K, K) == pytest.approx(0.0, abs=1e-15)
        assert kl_general(np.zeros((2, 2)), np.ones((2, 2))) == pytest.approx(4.0)
        assert kl_general(np.full((2, 2), 0.25), np.ones((2, 2))) == pytest.approx(3 - np.log(4))

    def test_objective(self):
        P = np.full((2, 2), 0.25)
        assert entropic_objective(P, np.zeros((2, 2)), 2.0) == pytest.approx(-2 * (np.log(4) + 1))

    def test_residuals(self):
        P = np.array([[0.3, 0.2], [0.3, 0.2]])
        assert row_residual(P, [0.5, 0.4]) == pytest.approx(0.1)
        assert column_violation(P, [0.7, 0.0], [1.0, np.inf]) == pytest.approx(0.1)
        assert column_violation(P, [0.0, 0.0], [0.5, np.inf]) == pytest.approx(0.1)
        assert column_violation(P, [0.6, 0.4], [0.6, 0.4]) == 0.0


class TestGrid:
    def test_one_by_two(self):
        np.testing.assert_array_equal(grid_cost_matrix(1, 2, 2), [[0, 1], [1, 0]])

    def test_two_by_two_euclidean(self):
        C = grid_cost_matrix(2, 2, 1)
        assert C[0, 3] == pytest.approx(np.sqrt(2))
        assert C[0, 1] == 1 and C[0, 2] == 1 and C[1, 1] == 0

    def test_one_by_three(self):
        np.testing.assert_array_equal(grid_cost_matrix(1, 3, 2), [[0, 1, 4], [1, 0, 1], [4, 1, 0]])

    def test_size_limit(self):
        with pytest.raises(ValueError, match="limit"):
            grid_cost_matrix(65, 64)


def test_problem_arrays_are_read_only():
    p = problem([0.5, 0.5], [0, 0], [1, 1])
    with pytest.raises(ValueError):
        p.cost[0, 0] = 1.0
