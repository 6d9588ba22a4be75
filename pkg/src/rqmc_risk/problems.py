"""Test-problem instances, closed-form recourse, and reference optimal values."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import lp
from .risk import normal_cvar_coefficient
from .sequences import MASK64, Sampler, generate_points
from .transforms import (
    Factorization,
    GaussianSpec,
    TwoStageTuple,
    gaussian_transform,
    reshape_two_stage_batch,
    uniform_affine_transform,
)

__all__ = [
    "Model",
    "PortfolioInstance",
    "TwoStageInstance",
    "InfeasibleInstanceError",
    "gen_portfolio_instance",
    "gen_two_stage_instance",
    "recourse_value",
    "recourse_values",
    "portfolio_polytope",
    "exact_portfolio_normal",
    "solve_exact_portfolio_normal",
    "sample_based_solution",
    "sample_based_optimal_value",
    "instance_from_text",
    "DEFAULT_R_TARGET",
]

DEFAULT_R_TARGET = 1.05
MU_RANGE = (0.9, 1.2)
Q_RANGE = (0.0, 0.1)
MAX_RETRIES = 100


class Model(str, enum.Enum):
    NORMAL = "normal"
    UNIFORM = "uniform"


class InfeasibleInstanceError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _vec(a) -> str:
    return ",".join(_fmt(v) for v in np.ravel(a))


@dataclass(frozen=True, eq=False)
class PortfolioInstance:
    d: int
    mu: np.ndarray
    q: np.ndarray
    sigma: np.ndarray
    r_target: float
    beta: float
    model: Model
    seed: int = 0

    def to_text(self) -> str:
        lines = [
            "problem = portfolio",
            f"model = {self.model.value}",
            f"seed = {self.seed}",
            f"d = {self.d}",
            f"beta = {_fmt(self.beta)}",
            f"r_target = {_fmt(self.r_target)}",
            f"mu = {_vec(self.mu)}",
            f"q = {_vec(self.q)}",
            f"sigma = {_vec(self.sigma)}",
        ]
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def gaussian_spec(self, factorization: Factorization | str = Factorization.CHOLESKY) -> GaussianSpec:
        return GaussianSpec(self.mu, self.sigma, Factorization(factorization))


@dataclass(frozen=True, eq=False)
class TwoStageInstance:
    d: int
    m: int
    c: np.ndarray
    beta: float
    seed: int = 0

    @property
    def dim(self) -> int:
        """Dimension of the uniform vector reshaped into (T, v, e)."""
        return self.m * self.d + 2 * self.m

    def to_text(self) -> str:
        lines = [
            "problem = two-stage",
            f"seed = {self.seed}",
            f"d = {self.d}",
            f"m = {self.m}",
            f"beta = {_fmt(self.beta)}",
            f"c = {_vec(self.c)}",
        ]
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


Instance = Union[PortfolioInstance, TwoStageInstance]


def instance_from_text(text: str) -> Instance:
    kv = {}
    for line in text.splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()

    def arr(key, shape=None):
        a = np.array([float(x) for x in kv[key].split(",")])
        return a.reshape(shape) if shape else a

    if kv.get("problem") == "portfolio":
        d = int(kv["d"])
        return PortfolioInstance(
            d, arr("mu"), arr("q", (d, d)), arr("sigma", (d, d)), float(kv["r_target"]),
            float(kv["beta"]), Model(kv["model"]), int(kv["seed"]),
        )
    if kv.get("problem") == "two-stage":
        return TwoStageInstance(int(kv["d"]), int(kv["m"]), arr("c"), float(kv["beta"]), int(kv["seed"]))
    raise ValueError(f"unknown problem {kv.get('problem')!r}")


def _check_beta(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")


def gen_portfolio_instance(
    seed: int,
    d: int,
    beta: float = 0.9,
    r_target: float = DEFAULT_R_TARGET,
    model: Model | str = Model.NORMAL,
) -> PortfolioInstance:
    """Draw ``mu ~ U[0.9, 1.2]^d``, ``Q ~ U[0, 0.1]^{d x d}``, ``Sigma = Q Q^T``.

    Redraws until some asset reaches ``r_target``; gives up after 100 tries.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    _check_beta(beta)
    if r_target > MU_RANGE[1]:
        raise InfeasibleInstanceError(
            f"infeasible: return target R={r_target} exceeds the largest attainable mean {MU_RANGE[1]}")
    rng = np.random.default_rng(int(seed) & MASK64)
    for _ in range(MAX_RETRIES):
        mu = rng.uniform(*MU_RANGE, size=d)
        q = rng.uniform(*Q_RANGE, size=(d, d))
        if mu.max() >= r_target:
            break
    else:
        raise InfeasibleInstanceError(
            f"infeasible: no draw with max(mu) >= R={r_target} in {MAX_RETRIES} tries")
    sigma = q @ q.T
    sigma = 0.5 * (sigma + sigma.T)
    return PortfolioInstance(d, mu, q, sigma, float(r_target), float(beta), Model(model), int(seed))


def gen_two_stage_instance(seed: int, d: int, m: int, beta: float = 0.9) -> TwoStageInstance:
    if d < 1 or m < 1:
        raise ValueError("d and m must be >= 1")
    _check_beta(beta)
    rng = np.random.default_rng(int(seed) & MASK64)
    return TwoStageInstance(d, m, rng.uniform(0.0, 1.0, size=d), float(beta), int(seed))


def recourse_value(x, tup: TwoStageTuple) -> float:
    """``min {e^T y : y >= v - T x, y >= 0}``, which separates by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    if tup.T.shape[1] != x.shape[0]:
        raise ValueError("x does not match the columns of T")
    return float(tup.e @ np.maximum(tup.v - tup.T @ x, 0.0))


def recourse_values(x, T, v, e) -> np.ndarray:
    """Recourse for a batch: ``T`` (N, m, d), ``v`` and ``e`` (N, m)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sum(e * np.maximum(v - np.einsum("nmd,d->nm", T, x), 0.0), axis=1)


def portfolio_polytope(instance: PortfolioInstance) -> lp.LpProblem:
    """``{x >= 0 : sum(x) = 1, mu^T x >= R}``, with ``-mu`` as the objective."""
    return lp.LpProblem(
        -instance.mu,
        np.vstack([np.ones(instance.d), instance.mu]),
        (lp.Relation.EQ, lp.Relation.GE),
        np.array([1.0, instance.r_target]),
    )


def solve_exact_portfolio_normal(instance: PortfolioInstance, tol: float = 1e-7,
                                 max_iters: int = 500, method: str = "simplex") -> lp.KelleyResult:
    if instance.model is not Model.NORMAL:
        raise ValueError("the exact reduction only exists for the normal model")
    kappa = normal_cvar_coefficient(instance.beta)
    mu, sigma = instance.mu, instance.sigma

    def oracle(x):
        sx = sigma @ x
        s = float(np.sqrt(max(x @ sx, 0.0)))
        if s == 0.0:
            return float(-mu @ x), -mu
        return float(-mu @ x + kappa * s), -mu + kappa * sx / s

    return lp.kelley_minimize(oracle, portfolio_polytope(instance), tol=tol, max_iters=max_iters, method=method)


def exact_portfolio_normal(instance: PortfolioInstance, tol: float = 1e-7) -> float:
    """Optimal value of the Gaussian CVaR portfolio problem.

    For normal returns the loss ``-xi^T x`` is normal, so the objective is
    ``-mu^T x + kappa(beta) sqrt(x^T Sigma x)``; this is minimized with
    Kelley cuts to a gap of ``tol``.
    """
    return solve_exact_portfolio_normal(instance, tol).value


def _portfolio_samples(instance: PortfolioInstance, sampler, factorization, n, seed):
    pts = generate_points(sampler, n, instance.d, seed)
    if instance.model is Model.NORMAL:
        return gaussian_transform(pts, instance.gaussian_spec(factorization))
    return uniform_affine_transform(pts, instance.mu, instance.q)


def sample_based_solution(
    instance: Instance,
    sampler: Sampler | str,
    n: int,
    rep_seed: int,
    factorization: Factorization | str = Factorization.CHOLESKY,
    method: str = "highs",
) -> lp.LpSolution:
    """Draw ``n`` points, map them to the problem's sample space and solve the LP.

    The factorization only matters for the normal portfolio model.
    """
    if isinstance(instance, PortfolioInstance):
        xi = _portfolio_samples(instance, sampler, factorization, n, rep_seed)
        problem = lp.build_portfolio_lp(xi, instance.mu, instance.r_target, instance.beta)
    else:
        pts = generate_points(sampler, n, instance.dim, rep_seed)
        T, v, e = reshape_two_stage_batch(pts, instance.d, instance.m)
        problem = lp.build_two_stage_lp(T, v, e, instance.c, instance.beta)
    return lp.solve_lp(problem, method=method).require_optimal("sample-based LP")


def sample_based_optimal_value(
    instance: Instance,
    sampler: Sampler | str,
    n: int,
    rep_seed: int,
    factorization: Factorization | str = Factorization.CHOLESKY,
    method: str = "highs",
) -> float:
    return sample_based_solution(instance, sampler, n, rep_seed, factorization, method).value
