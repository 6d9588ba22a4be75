import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rqmc_risk.lp import LpProblem, Relation, solve_lp
from rqmc_risk.problems import (
    InfeasibleInstanceError,
    Model,
    PortfolioInstance,
    TwoStageInstance,
    exact_portfolio_normal,
    gen_portfolio_instance,
    gen_two_stage_instance,
    instance_from_text,
    recourse_value,
    recourse_values,
    sample_based_optimal_value,
    solve_exact_portfolio_normal,
)
from rqmc_risk.risk import cvar, empirical_from_values, normal_cvar_coefficient
from rqmc_risk.sequences import Sampler, generate_points
from rqmc_risk.transforms import TwoStageTuple, gaussian_transform

seeds = st.integers(0, 2**64 - 1)


def inner_lp_recourse(x, tup: TwoStageTuple) -> float:
    """min e^T y  s.t.  y >= v - T x,  y >= 0, solved as an LP."""
    m = tup.v.size
    rhs = tup.v - tup.T @ x
    sol = solve_lp(LpProblem(tup.e, np.eye(m), (Relation.GE,) * m, rhs))
    return sol.require_optimal().value


# --- instance generation ------------------------------------------------------------


@given(seeds, st.integers(1, 8))
def test_portfolio_instance_contract(seed, d):
    inst = gen_portfolio_instance(seed, d)
    assert np.all((0.9 <= inst.mu) & (inst.mu <= 1.2))
    assert np.all((0.0 <= inst.q) & (inst.q <= 0.1))
    assert np.abs(inst.sigma - inst.q @ inst.q.T).max() <= 1e-12
    assert np.array_equal(inst.sigma, inst.sigma.T)
    assert inst.mu.max() >= inst.r_target
    again = gen_portfolio_instance(seed, d)
    assert again.to_text() == inst.to_text()


def test_portfolio_target_above_range():
    with pytest.raises(InfeasibleInstanceError, match="infeasible"):
        gen_portfolio_instance(0, 5, r_target=1.25)


def test_portfolio_bad_beta():
    with pytest.raises(ValueError):
        gen_portfolio_instance(0, 3, beta=1.0)


@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_two_stage_instance_contract(seed, d, m):
    inst = gen_two_stage_instance(seed, d, m)
    assert np.all((0.0 <= inst.c) & (inst.c <= 1.0))
    assert inst.dim == m * d + 2 * m
    assert gen_two_stage_instance(seed, d, m).to_text() == inst.to_text()


def test_text_round_trip():
    for inst in (gen_portfolio_instance(3, 4, model="uniform"), gen_two_stage_instance(3, 2, 3)):
        back = instance_from_text(inst.to_text())
        assert back.to_text() == inst.to_text()
        assert back.fingerprint() == inst.fingerprint()
    p = instance_from_text(gen_portfolio_instance(3, 4).to_text())
    assert isinstance(p, PortfolioInstance) and p.model is Model.NORMAL


def test_fingerprint_distinguishes_seeds():
    assert gen_portfolio_instance(1, 3).fingerprint() != gen_portfolio_instance(2, 3).fingerprint()


def test_instance_text_unknown_problem():
    with pytest.raises(ValueError):
        instance_from_text("problem = knapsack\n")


# --- recourse -----------------------------------------------------------------------


def test_recourse_examples():
    t = TwoStageTuple(np.eye(2), np.array([1.0, 2.0]), np.array([1.0, 1.0]))
    assert recourse_value(np.ones(2), t) == pytest.approx(inner_lp_recourse(np.ones(2), t)) == 1.0
    t = TwoStageTuple(np.eye(2), np.array([3.0, 3.0]), np.array([2.0, 2.0]))
    assert recourse_value(np.zeros(2), t) == pytest.approx(inner_lp_recourse(np.zeros(2), t)) == 12.0
    t = TwoStageTuple(np.eye(2), np.array([-1.0, 0.5]), np.array([2.0, 2.0]))
    assert recourse_value(np.ones(2), t) == 0.0


@given(seeds, st.integers(1, 4), st.integers(1, 4))
def test_recourse_matches_inner_lp(seed, d, m):
    rng = np.random.default_rng(seed)
    t = TwoStageTuple(rng.uniform(0.5, 1.0, (m, d)), rng.uniform(-1.0, 3.0, m), rng.uniform(2.0, 4.0, m))
    x = rng.uniform(0.0, 1.0, d)
    assert recourse_value(x, t) == pytest.approx(inner_lp_recourse(x, t), abs=1e-9)


def test_recourse_batch_agrees():
    rng = np.random.default_rng(0)
    T = rng.uniform(0.5, 1.0, (6, 2, 3))
    v = rng.uniform(0.0, 3.0, (6, 2))
    e = rng.uniform(2.0, 4.0, (6, 2))
    x = rng.uniform(0.0, 1.0, 3)
    batch = recourse_values(x, T, v, e)
    for i in range(6):
        assert batch[i] == pytest.approx(recourse_value(x, TwoStageTuple(T[i], v[i], e[i])), abs=1e-13)


def test_recourse_shape_mismatch():
    with pytest.raises(ValueError):
        recourse_value(np.ones(3), TwoStageTuple(np.eye(2), np.ones(2), np.ones(2)))


# --- exact Gaussian reference -------------------------------------------------------


def test_exact_d1():
    inst = gen_portfolio_instance(5, 1, r_target=0.9)
    expected = -inst.mu[0] + normal_cvar_coefficient(inst.beta) * np.sqrt(inst.sigma[0, 0])
    assert exact_portfolio_normal(inst) == pytest.approx(expected, abs=1e-12)


def test_exact_symmetric_pair():
    s, beta = 0.01, 0.9
    inst = PortfolioInstance(2, np.array([1.0, 1.0]), np.sqrt(s) * np.eye(2), s * np.eye(2), 1.0, beta, Model.NORMAL)
    res = solve_exact_portfolio_normal(inst, tol=1e-10)
    assert res.value == pytest.approx(-1.0 + normal_cvar_coefficient(beta) * np.sqrt(s / 2), abs=1e-9)
    np.testing.assert_allclose(res.point, [0.5, 0.5], atol=1e-4)


@pytest.mark.parametrize("seed", range(4))
def test_exact_against_grid(seed):
    inst = gen_portfolio_instance(seed, 3)
    res = 400
    g = np.array([(i, j, res - i - j) for i in range(res + 1) for j in range(res + 1 - i)]) / res
    g = g[g @ inst.mu >= inst.r_target]
    f = -g @ inst.mu + normal_cvar_coefficient(inst.beta) * np.sqrt(np.einsum("gi,ij,gj->g", g, inst.sigma, g))
    value = exact_portfolio_normal(inst)
    assert f.min() - 1e-3 <= value <= f.min() + 1e-7


def test_exact_permutation_invariance():
    inst = gen_portfolio_instance(11, 4)
    perm = np.array([2, 0, 3, 1])
    permuted = PortfolioInstance(4, inst.mu[perm], inst.q[perm], inst.sigma[np.ix_(perm, perm)],
                                 inst.r_target, inst.beta, inst.model)
    assert exact_portfolio_normal(permuted) == pytest.approx(exact_portfolio_normal(inst), abs=2e-7)


def test_exact_backends_agree():
    inst = gen_portfolio_instance(2, 5)
    a = solve_exact_portfolio_normal(inst, method="simplex").value
    b = solve_exact_portfolio_normal(inst, method="highs").value
    assert a == pytest.approx(b, abs=2e-7)


def test_exact_rejects_uniform_model():
    with pytest.raises(ValueError):
        exact_portfolio_normal(gen_portfolio_instance(0, 3, model="uniform"))


# --- sample-based values ------------------------------------------------------------


def test_sample_based_d1_matches_risk_oracle():
    inst = gen_portfolio_instance(4, 1, r_target=0.9)
    xi = gaussian_transform(generate_points("sobol-scrambled", 64, 1, 9), inst.gaussian_spec())
    expected = cvar(empirical_from_values(-xi[:, 0]), inst.beta)
    value = sample_based_optimal_value(inst, Sampler.SOBOL_SCRAMBLED, 64, 9)
    assert value == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("sampler", list(Sampler))
def test_sample_based_deterministic(sampler):
    inst = gen_portfolio_instance(1, 3)
    a = sample_based_optimal_value(inst, sampler, 64, 5, "pca")
    b = sample_based_optimal_value(inst, sampler, 64, 5, "pca")
    assert a == b


def test_sample_based_backends_agree():
    inst = gen_portfolio_instance(1, 3, model="uniform")
    a = sample_based_optimal_value(inst, "mc", 64, 2, method="simplex")
    b = sample_based_optimal_value(inst, "mc", 64, 2, method="highs")
    assert a == pytest.approx(b, abs=1e-9)


def test_sample_based_two_stage():
    inst = gen_two_stage_instance(0, 2, 2)
    a = sample_based_optimal_value(inst, "lhs", 32, 1, method="simplex")
    b = sample_based_optimal_value(inst, "lhs", 32, 1, method="highs")
    assert a == pytest.approx(b, rel=1e-9)


def test_sample_based_uses_fixed_instance():
    assert isinstance(gen_two_stage_instance(0, 2, 2), TwoStageInstance)
    inst = gen_portfolio_instance(0, 3)
    vals = {sample_based_optimal_value(inst, "mc", 32, s) for s in range(4)}
    assert len(vals) == 4


def test_sample_based_exact_consistency():
    inst = gen_portfolio_instance(0, 3)
    ref = exact_portfolio_normal(inst)
    vals = [sample_based_optimal_value(inst, "sobol-scrambled", 2**12, s, "pca") for s in range(4)]
    assert abs(np.mean(vals) - ref) < 5e-3
