import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lp_cases import oracle_value, random_lp
from rqmc_risk.lp import (
    KelleyError,
    LpProblem,
    LpStatus,
    LpStatusError,
    Relation,
    build_portfolio_lp,
    build_two_stage_lp,
    kelley_minimize,
    solve_lp,
)
from rqmc_risk.problems import recourse_values
from rqmc_risk.risk import cvar, cvar_of_samples, empirical_from_values

LE, GE, EQ = Relation.LE, Relation.GE, Relation.EQ


def check_against_oracle(p, method="simplex"):
    sol = solve_lp(p, method=method)
    ref = oracle_value(p)
    if ref is None:
        assert sol.status is LpStatus.INFEASIBLE
        return
    assert sol.status is LpStatus.OPTIMAL
    assert sol.value == pytest.approx(ref[0], abs=1e-8, rel=1e-8)
    assert p.is_feasible(sol.point, tol=1e-8)
    assert float(p.c @ sol.point) == pytest.approx(sol.value, abs=1e-12)


# --- solve_lp -----------------------------------------------------------------------


def test_trivial_examples():
    sol = solve_lp(LpProblem([-1.0], [[1.0]], (LE,), [1.0]))
    assert sol.optimal and sol.value == -1.0 and sol.point[0] == 1.0
    c = np.array([3.0, -1.0, 2.0, 0.5])
    sol = solve_lp(LpProblem(c, np.ones((1, 4)), (EQ,), [1.0]))
    assert sol.value == pytest.approx(c.min())
    assert solve_lp(LpProblem([-1.0], np.zeros((0, 1)), (), [])).status is LpStatus.UNBOUNDED


def test_infeasible_and_unbounded_statuses():
    p = LpProblem([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]], (LE, GE), [1.0, 2.0])
    assert solve_lp(p).status is LpStatus.INFEASIBLE
    p = LpProblem([-1.0, 0.0], [[1.0, -1.0]], (LE,), [1.0])
    assert solve_lp(p).status is LpStatus.UNBOUNDED
    with pytest.raises(LpStatusError, match="infeasible"):
        solve_lp(LpProblem([1.0], [[1.0]], (GE,), [-1.0], upper=[-2.0], lower=[-3.0])).require_optimal()


def test_free_and_negative_bounds():
    # min x1 + x2  s.t.  x1 - x2 = 1,  x1 in [-2, 2], x2 free  -> x = (-2, -3)
    p = LpProblem([1.0, 1.0], [[1.0, -1.0]], (EQ,), [1.0], lower=[-2.0, -np.inf], upper=[2.0, np.inf])
    sol = solve_lp(p)
    np.testing.assert_allclose(sol.point, [-2.0, -3.0], atol=1e-12)


def test_redundant_equalities():
    p = LpProblem([1.0, 2.0], [[1.0, 1.0], [2.0, 2.0]], (EQ, EQ), [1.0, 2.0])
    sol = solve_lp(p)
    assert sol.optimal and sol.value == pytest.approx(1.0)


def test_classic_cycling_example():
    # Beale's example cycles under the textbook largest-coefficient rule
    c = np.array([-0.75, 150.0, -0.02, 6.0])
    A = np.array([[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]])
    sol = solve_lp(LpProblem(c, A, (LE, LE, LE), [0.0, 0.0, 1.0]))
    assert sol.value == pytest.approx(-0.05, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_matches_vertex_enumeration(seed):
    check_against_oracle(random_lp(seed))


@given(st.integers(0, 2**32 - 1))
def test_matches_vertex_enumeration_degenerate(seed):
    check_against_oracle(random_lp(seed, integer=True))


@given(st.integers(0, 2**32 - 1))
def test_highs_backend_agrees(seed):
    p = random_lp(seed)
    a, b = solve_lp(p), solve_lp(p, method="highs")
    assert a.status is b.status
    if a.optimal:
        assert a.value == pytest.approx(b.value, abs=1e-8, rel=1e-8)


def test_sparse_and_dense_agree():
    from scipy import sparse

    p = random_lp(5)
    q = LpProblem(p.c, sparse.csr_array(p.dense_A()), p.relations, p.b, p.lower, p.upper)
    assert solve_lp(p).value == pytest.approx(solve_lp(q).value, abs=1e-12)


def test_problem_shape_validation():
    with pytest.raises(ValueError):
        LpProblem([1.0, 2.0], [[1.0]], (LE,), [1.0])
    with pytest.raises(ValueError):
        LpProblem([1.0], [[1.0]], (LE, LE), [1.0])
    with pytest.raises(ValueError):
        LpProblem([1.0], [[1.0]], (LE,), [1.0], lower=[2.0], upper=[1.0])


def test_unknown_method():
    with pytest.raises(ValueError):
        solve_lp(random_lp(0), method="interior")


# --- portfolio builder --------------------------------------------------------------


def test_portfolio_single_sample():
    p = build_portfolio_lp(np.array([[1.3]]), np.array([1.1]), 1.05, 0.5)
    assert solve_lp(p).value == pytest.approx(-1.3)


def test_portfolio_two_samples():
    p = build_portfolio_lp(np.array([[1.0], [3.0]]), np.array([2.0]), 1.0, 0.5)
    sol = solve_lp(p)
    assert sol.value == pytest.approx(cvar(empirical_from_values([-1.0, -3.0]), 0.5))
    assert sol.value == pytest.approx(-1.0)


def _portfolio_data(seed, n=16, d=3):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.9, 1.2, d)
    mu[0] = 1.1
    xi = mu + rng.normal(scale=0.1, size=(n, d))
    return xi, mu


@pytest.mark.parametrize("seed", range(3))
def test_portfolio_value_against_simplex_grid(seed):
    xi, mu = _portfolio_data(seed)
    r, beta = 1.0, 0.8
    sol = solve_lp(build_portfolio_lp(xi, mu, r, beta))
    res = 300
    grid = np.array([(i, j, res - i - j) for i in range(res + 1) for j in range(res + 1 - i)]) / res
    grid = grid[grid @ mu >= r]
    best = cvar_of_samples(-xi @ grid.T, beta, axis=0).min()
    assert best - 1e-3 <= sol.value <= best + 1e-12
    x = sol.point[:3]
    assert sol.value == pytest.approx(cvar(empirical_from_values(-xi @ x), beta), abs=1e-9)


def test_portfolio_permutation_invariance():
    xi, mu = _portfolio_data(7, n=24)
    perm = np.random.default_rng(1).permutation(24)
    a = solve_lp(build_portfolio_lp(xi, mu, 1.0, 0.9)).value
    b = solve_lp(build_portfolio_lp(xi[perm], mu, 1.0, 0.9)).value
    assert a == pytest.approx(b, abs=1e-12)


def test_portfolio_infeasible_target():
    xi, mu = _portfolio_data(0)
    sol = solve_lp(build_portfolio_lp(xi, mu, mu.max() + 0.01, 0.9))
    assert sol.status is LpStatus.INFEASIBLE


@pytest.mark.parametrize("beta", [0.0, 1.0])
def test_portfolio_beta_range(beta):
    with pytest.raises(ValueError):
        build_portfolio_lp(np.ones((2, 1)), np.ones(1), 1.0, beta)


# --- two-stage builder --------------------------------------------------------------


def _two_stage_data(seed, n, d=2, m=2):
    rng = np.random.default_rng(seed)
    T = rng.uniform(0.5, 1.0, (n, m, d))
    v = rng.uniform(50.0, 100.0, (n, m))
    e = rng.uniform(2.0, 4.0, (n, m))
    c = rng.uniform(0.0, 1.0, d)
    return T, v, e, c


def _box_grid(d, step):
    ticks = np.arange(0, 1 + 1e-12, step)
    return np.array(list(itertools.product(ticks, repeat=d)))


def _two_stage_objective(grid, T, v, e, c, beta):
    rec = np.array([recourse_values(x, T, v, e) for x in grid])
    return grid @ c + cvar_of_samples(rec.T, beta, axis=0)


def test_two_stage_single_scenario():
    T, v, e, c = _two_stage_data(3, 1)
    sol = solve_lp(build_two_stage_lp(T, v, e, c, 0.9))
    grid = _box_grid(2, 1 / 64)
    assert sol.value <= _two_stage_objective(grid, T, v, e, c, 0.9).min() + 1e-9
    x = sol.point[:2]
    assert sol.value == pytest.approx(c @ x + recourse_values(x, T, v, e)[0], abs=1e-8)


def test_two_stage_no_recourse_needed():
    T, v, e, c = _two_stage_data(4, 5)
    sol = solve_lp(build_two_stage_lp(T, -np.abs(v), e, c, 0.9))
    assert sol.value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(sol.point[:2], 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_two_stage_against_box_grid(seed):
    T, v, e, c = _two_stage_data(seed, 8)
    # raise the cost so the optimum is interior for some seeds
    c = c * 40
    beta = 0.75
    sol = solve_lp(build_two_stage_lp(T, v, e, c, beta))
    best = _two_stage_objective(_box_grid(2, 1 / 64), T, v, e, c, beta).min()
    assert best - 1e-2 <= sol.value <= best + 1e-9
    x = sol.point[:2]
    direct = c @ x + cvar(empirical_from_values(recourse_values(x, T, v, e)), beta)
    assert sol.value == pytest.approx(direct, abs=1e-8)


def test_two_stage_backends_agree():
    T, v, e, c = _two_stage_data(9, 12, d=3, m=2)
    p = build_two_stage_lp(T, v, e, c * 30, 0.9)
    assert solve_lp(p).value == pytest.approx(solve_lp(p, method="highs").value, rel=1e-9)


def test_two_stage_shape_errors():
    T, v, e, c = _two_stage_data(0, 3)
    with pytest.raises(ValueError):
        build_two_stage_lp(T, v[:, :1], e, c, 0.9)


# --- Kelley -------------------------------------------------------------------------


def simplex_polytope(d):
    return LpProblem(np.zeros(d), np.ones((1, d)), (EQ,), [1.0])


def test_kelley_linear_oracle_one_iteration():
    g = np.array([0.3, -0.1, 0.2])
    res = kelley_minimize(lambda x: (float(g @ x), g), simplex_polytope(3))
    assert res.iterations == 1
    assert res.value == pytest.approx(-0.1)


def test_kelley_norm_over_simplex():
    def f(x):
        n = float(np.linalg.norm(x))
        return n, x / n

    res = kelley_minimize(f, simplex_polytope(2), tol=1e-9)
    assert res.value == pytest.approx(1 / np.sqrt(2), abs=1e-8)
    np.testing.assert_allclose(res.point, [0.5, 0.5], atol=1e-4)
    # fine grid cross-check
    t = np.linspace(0, 1, 10001)
    assert res.value <= np.sqrt(t**2 + (1 - t) ** 2).min() + 1e-12


def test_kelley_bounds_bracket_and_lower_bounds_monotone():
    rng = np.random.default_rng(0)
    Q = rng.normal(size=(4, 4))
    S = Q @ Q.T + np.eye(4)
    b = rng.normal(size=4)

    def f(x):
        return float(x @ S @ x + b @ x), 2 * S @ x + b

    res = kelley_minimize(f, simplex_polytope(4), tol=1e-8)
    assert np.all(np.diff(res.lower_bounds) >= -1e-12)
    assert all(lb <= ub + 1e-12 for lb, ub in zip(res.lower_bounds, res.upper_bounds))
    assert res.gap <= 1e-8


def test_kelley_iteration_cap():
    def f(x):
        n = float(np.linalg.norm(x))
        return n, x / n

    with pytest.raises(KelleyError) as info:
        kelley_minimize(f, simplex_polytope(3), tol=1e-12, max_iters=3)
    assert info.value.result.gap > 0


def test_kelley_empty_polytope():
    p = LpProblem(np.zeros(2), [[1.0, 1.0]], (GE,), [3.0], upper=[1.0, 1.0])
    with pytest.raises(LpStatusError):
        kelley_minimize(lambda x: (0.0, np.zeros(2)), p)
