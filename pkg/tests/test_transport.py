"""Transport plans: marginals, optimality vs an exact LP, and the two-point rule."""

import math

import numpy as np
import pytest
from scipy.optimize import linprog

from circlemark.circle import CircleParams, theorem2_phi
from circlemark.errors import ParameterError, SolverError, TieError
from circlemark.transport import (
    CostMatrix,
    SolverConfig,
    TokenDistribution,
    build_cost,
    conditional,
    mixture_over_keys,
    round_to_marginals,
    solve_plan,
    solve_plan_batch,
    solve_plan_twopoint,
    transport_cost,
)


def lp_transport_cost(a, b, costs):
    """Exact optimal transport cost by linear programming (independent oracle)."""
    n, r = costs.shape
    A_eq = []
    b_eq = []
    for i in range(n):
        row = np.zeros((n, r))
        row[i, :] = 1
        A_eq.append(row.ravel())
        b_eq.append(a[i])
    for j in range(r):
        col = np.zeros((n, r))
        col[:, j] = 1
        A_eq.append(col.ravel())
        b_eq.append(b[j])
    res = linprog(costs.ravel(), A_eq=np.array(A_eq), b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs")
    assert res.success
    return res.fun


def random_instance(rng, N, r, alpha=0.5):
    probs = rng.dirichlet(np.full(N, alpha))
    Q = TokenDistribution.from_probs(probs / probs.sum())
    params = CircleParams(N=N, p=max(2, N // 2), r=r, phi=0.0)
    perm = rng.permutation(N)
    c = int(rng.integers(params.p))
    return Q, build_cost(Q, c, perm, params)


class TestTokenDistribution:
    def test_validation(self):
        with pytest.raises(ParameterError):
            TokenDistribution.from_probs([0.5, 0.6])
        with pytest.raises(ParameterError):
            TokenDistribution.from_probs([-0.1, 1.1])

    def test_support(self):
        Q = TokenDistribution.from_probs([0.0, 0.25, 0.75, 0.0])
        assert Q.support.tolist() == [1, 2]
        assert Q.support_entropy() == pytest.approx(
            -(0.25 * math.log2(0.25) + 0.75 * math.log2(0.75))
        )


class TestBuildCost:
    def test_single_support(self):
        Q = TokenDistribution.point_mass(4, 2)
        params = CircleParams(N=4, p=4, r=8, phi=0.0)
        C = build_cost(Q, 0, np.arange(4), params)
        assert C.costs.shape == (1, 8)
        assert C.row_tokens.tolist() == [2]

    def test_hand_values(self):
        # N=4, identity perm, c=0, p=r=4, phi=0: token 0 at angle 0
        Q = TokenDistribution.from_probs([0.25] * 4)
        params = CircleParams(N=4, p=4, r=4, phi=0.0)
        C = build_cost(Q, 0, np.arange(4), params)
        assert C.costs[0, 0] == pytest.approx(0.0)
        assert C.costs[0, 2] == pytest.approx(math.pi)

    def test_symbol_shift_permutes_columns(self):
        Q = TokenDistribution.from_probs([0.25] * 4)
        params = CircleParams(N=4, p=4, r=4, phi=0.0)
        c0 = build_cost(Q, 0, np.arange(4), params).costs
        c1 = build_cost(Q, 1, np.arange(4), params).costs
        assert np.allclose(np.roll(c0, -1, axis=1), c1, atol=1e-12)

    def test_empty_support_rejected(self):
        Q = TokenDistribution.point_mass(4, 0)
        object.__setattr__(Q, "support", np.array([], dtype=np.int64))
        params = CircleParams(N=4, p=4, r=4, phi=0.0)
        with pytest.raises(ParameterError):
            build_cost(Q, 0, np.arange(4), params)


class TestSolvePlan:
    def test_symmetric_two_by_two(self):
        # uniform two-token Q against a symmetric 2-column grid: all cells 1/4
        Q = TokenDistribution.two_point(2, 0, 1)
        params = CircleParams(N=2, p=2, r=2, phi=math.pi / 2)
        C = build_cost(Q, 0, np.arange(2), params)
        assert np.allclose(C.costs, C.costs[::-1, ::-1])
        plan = solve_plan(Q, C, SolverConfig())
        assert np.allclose(plan.joint, 0.25, atol=1e-6)

    def test_marginals_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            Q, C = random_instance(rng, int(rng.integers(2, 9)), int(rng.integers(2, 17)))
            plan = solve_plan(Q, C, SolverConfig())
            r = plan.r
            assert np.abs(plan.joint.sum(axis=0) - 1.0 / r).max() <= 1e-9
            a = Q.probs[Q.support]
            assert np.abs(plan.joint.sum(axis=1) - a).max() <= 1e-12
            assert plan.joint.min() >= 0

    def test_cost_near_lp_optimum(self):
        rng = np.random.default_rng(1)
        for _ in range(12):
            N, r = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            Q, C = random_instance(rng, N, r)
            plan = solve_plan(Q, C, SolverConfig(epsilon=0.004, max_iters=60_000))
            got = transport_cost(plan, C)
            want = lp_transport_cost(Q.probs[Q.support], np.full(r, 1.0 / r), C.costs)
            assert got <= want + 1e-4

    def test_nonconvergence_raises_with_residuals(self):
        rng = np.random.default_rng(2)
        Q, C = random_instance(rng, 6, 8)
        with pytest.raises(SolverError) as err:
            solve_plan(Q, C, SolverConfig(max_iters=1, tolerance=1e-14))
        assert err.value.row_residual is not None

    def test_regularization_ladder_cost_monotone(self):
        rng = np.random.default_rng(3)
        Q, C = random_instance(rng, 8, 12)
        costs = []
        for eps in (0.4, 0.2, 0.1, 0.05, 0.02):
            plan = solve_plan(Q, C, SolverConfig(epsilon=eps, max_iters=40_000))
            costs.append(transport_cost(plan, C))
        for hi, lo in zip(costs, costs[1:]):
            assert lo <= hi + 1e-7

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        Qs, Cs = zip(*[random_instance(rng, 7, 9) for _ in range(16)])
        A = np.stack([Q.probs[Q.support] for Q in Qs])
        costs = np.stack([C.costs for C in Cs])
        joints = solve_plan_batch(A, costs, SolverConfig())
        for i, (Q, C) in enumerate(zip(Qs, Cs)):
            single = solve_plan(Q, C, SolverConfig())
            assert np.abs(joints[i] - single.joint).max() <= 1e-6
            assert np.abs(joints[i].sum(axis=1) - A[i]).max() <= 1e-12


class TestTwoPoint:
    def test_mass_to_nearer_token(self):
        # tokens at angles 0 and pi; z-grid at pi/4 offsets: nearer token wins
        params = CircleParams(N=4, p=4, r=4, phi=math.pi / 4)
        Q = TokenDistribution.two_point(4, 0, 2)
        plan = solve_plan_twopoint(Q, 0, np.arange(4), params)
        # z = pi/4: token 0 (angle 0) is nearer
        cond = conditional(plan, 0)
        assert cond.probs[0] == pytest.approx(1.0)

    def test_symmetric_tie_raises(self):
        params = CircleParams(N=4, p=4, r=4, phi=0.0)
        Q = TokenDistribution.two_point(4, 0, 2)  # antipodal tokens, z on the grid
        with pytest.raises(TieError):
            solve_plan_twopoint(Q, 1, np.arange(4), params)

    def test_no_ties_in_quarter_slot_geometry(self):
        rng = np.random.default_rng(5)
        for N in (2, 3, 4, 5, 8, 16, 17):
            params = CircleParams(N=N, p=N, r=N, phi=theorem2_phi(N))
            for _ in range(20):
                i, j = rng.choice(N, size=2, replace=False)
                Q = TokenDistribution.two_point(N, int(i), int(j))
                plan = solve_plan_twopoint(Q, int(rng.integers(N)), rng.permutation(N), params)
                assert np.allclose(plan.joint.sum(axis=0), 1.0 / N, atol=1e-15)

    def test_matches_general_solver_even_N(self):
        # deterministic rule equals the exact-marginal solver when N is even
        rng = np.random.default_rng(6)
        solver = SolverConfig(epsilon=0.008, max_iters=100_000)
        for trial in range(60):
            N = int(rng.choice([4, 6, 8, 16]))
            params = CircleParams(N=N, p=N, r=N, phi=theorem2_phi(N))
            i, j = (int(x) for x in rng.choice(N, size=2, replace=False))
            Q = TokenDistribution.two_point(N, i, j)
            perm = rng.permutation(N)
            c = int(rng.integers(N))
            det = solve_plan_twopoint(Q, c, perm, params)
            sink = solve_plan(Q, build_cost(Q, c, perm, params), solver)
            col_tv = 0.5 * np.abs(det.joint - sink.joint).sum(axis=0) * N
            assert col_tv.max() <= 1e-6

    def test_rejects_non_twopoint(self):
        params = CircleParams(N=4, p=4, r=4, phi=0.1)
        with pytest.raises(ParameterError):
            solve_plan_twopoint(
                TokenDistribution.from_probs([0.7, 0.3, 0, 0]), 0, np.arange(4), params
            )


class TestConditional:
    def test_uniform_plan(self):
        Q = TokenDistribution.two_point(2, 0, 1)
        params = CircleParams(N=2, p=2, r=2, phi=math.pi / 2)
        plan = solve_plan(Q, build_cost(Q, 0, np.arange(2), params), SolverConfig())
        cond = conditional(plan, 0)
        assert np.allclose(cond.probs, [0.5, 0.5], atol=1e-6)

    def test_point_mass_q(self):
        Q = TokenDistribution.point_mass(5, 3)
        params = CircleParams(N=5, p=4, r=6, phi=0.0)
        plan = solve_plan(Q, build_cost(Q, 1, np.arange(5), params), SolverConfig())
        for j in range(6):
            cond = conditional(plan, j)
            assert cond.probs[3] == pytest.approx(1.0)

    def test_mixture_recovers_q(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            Q, C = random_instance(rng, int(rng.integers(2, 10)), int(rng.integers(2, 20)))
            plan = solve_plan(Q, C, SolverConfig())
            mixture = sum(conditional(plan, j).probs for j in range(plan.r)) / plan.r
            assert np.abs(mixture - Q.probs).max() <= 1e-9
            assert np.abs(mixture_over_keys(plan) - Q.probs).max() <= 1e-9

    def test_z_index_validation(self):
        Q = TokenDistribution.two_point(2, 0, 1)
        params = CircleParams(N=2, p=2, r=2, phi=math.pi / 2)
        plan = solve_plan(Q, build_cost(Q, 0, np.arange(2), params), SolverConfig())
        with pytest.raises(ParameterError):
            conditional(plan, 2)


class TestRounding:
    def test_projects_to_exact_marginals(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            n, r = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            a = rng.dirichlet(np.ones(n))
            b = rng.dirichlet(np.ones(r))
            P = rng.random((n, r)) * 0.2 + np.outer(a, b) * 0.8
            rounded = round_to_marginals(P, a, b)
            assert rounded.min() >= -1e-18
            assert np.abs(rounded.sum(axis=1) - a).max() <= 1e-14
            assert np.abs(rounded.sum(axis=0) - b).max() <= 1e-12
