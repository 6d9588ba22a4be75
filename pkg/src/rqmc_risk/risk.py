"""Empirical distributions and the law-invariant functionals evaluated on them.

Quantiles use the lower convention ``H(t) = inf{z : F(z) >= t}``.  CVaR is
evaluated by anchoring the Rockafellar--Uryasev objective at ``H(beta)``,
which is a minimizer of that objective, so the value is exact for any
finite distribution, with or without ties.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .transforms import norm_inv_cdf

__all__ = [
    "EmpiricalDistribution",
    "RiskKind",
    "RiskSpec",
    "empirical_from_values",
    "quantile",
    "cvar",
    "expectation",
    "cvar_of_samples",
    "wasserstein_p",
    "wasserstein_to_normal",
    "norm_pdf",
    "cvar_normal_closed_form",
    "normal_cvar_coefficient",
]


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Finitely many atoms with nonnegative weights summing to one.

    Atoms are stored sorted ascending (duplicates kept); ``cumulative[i]`` is
    the CDF just after atom ``i``.
    """

    atoms: np.ndarray
    weights: np.ndarray
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64).ravel()
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if atoms.size == 0:
            raise ValueError("empirical distribution needs at least one atom")
        if weights.shape != atoms.shape:
            raise ValueError("atoms and weights differ in length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        order = np.argsort(atoms, kind="stable")
        atoms, weights = atoms[order], weights[order]
        if np.all(weights == weights[0]):
            cumulative = np.arange(1, atoms.size + 1) / atoms.size
        else:
            cumulative = np.cumsum(weights)
            cumulative[-1] = 1.0
        for arr in (atoms, weights, cumulative):
            arr.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "cumulative", cumulative)

    def __len__(self):
        return self.atoms.size

    def shifted(self, c: float) -> "EmpiricalDistribution":
        return EmpiricalDistribution(self.atoms + c, self.weights)


def empirical_from_values(values) -> EmpiricalDistribution:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot build an empirical distribution from no values")
    return EmpiricalDistribution(values, np.full(values.size, 1.0 / values.size))


def quantile(dist: EmpiricalDistribution, t: float) -> float:
    if not 0.0 < t < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {t}")
    i = int(np.searchsorted(dist.cumulative, t, side="left"))
    return float(dist.atoms[min(i, len(dist) - 1)])


def expectation(dist: EmpiricalDistribution) -> float:
    return float(dist.weights @ dist.atoms)


def cvar(dist: EmpiricalDistribution, beta: float) -> float:
    """CVaR of the upper tail at level ``beta`` (larger atoms are worse)."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if beta == 0.0:
        return expectation(dist)
    q = quantile(dist, beta)
    excess = dist.weights @ np.maximum(dist.atoms - q, 0.0)
    return float(q + excess / (1.0 - beta))


def cvar_of_samples(values: np.ndarray, beta: float, axis: int = 0) -> np.ndarray:
    """CVaR of equally weighted samples along ``axis`` (vectorized over the rest)."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    v = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    n = v.shape[0]
    if beta == 0.0:
        return v.mean(axis=0)
    s = np.sort(v, axis=0)
    # lower quantile index: smallest i with (i + 1) / n >= beta
    i = max(math.ceil(beta * n - 1e-12) - 1, 0)
    q = s[i]
    return q + np.maximum(s - q, 0.0).mean(axis=0) / (1.0 - beta)


class RiskKind(str, enum.Enum):
    EXPECTATION = "expectation"
    CVAR = "cvar"


@dataclass(frozen=True)
class RiskSpec:
    kind: RiskKind = RiskKind.CVAR
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RiskKind(self.kind))
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")

    def __call__(self, dist: EmpiricalDistribution) -> float:
        if self.kind is RiskKind.EXPECTATION:
            return expectation(dist)
        return cvar(dist, self.beta)


def wasserstein_p(a: EmpiricalDistribution, b: EmpiricalDistribution, p: float = 1.0) -> float:
    """Exact ``(int_0^1 |H_a(t) - H_b(t)|^p dt)^(1/p)`` for two finite distributions.

    Both quantile functions are constant between consecutive points of the
    merged breakpoint set, so the integral is a finite sum.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    breaks = np.union1d(a.cumulative, b.cumulative)
    breaks = breaks[breaks > 0.0]
    left = np.concatenate(([0.0], breaks[:-1]))
    widths = breaks - left
    keep = widths > 0
    # quantiles are left-continuous, so evaluate at the right end of each piece
    ia = np.minimum(np.searchsorted(a.cumulative, breaks[keep], side="left"), len(a) - 1)
    ib = np.minimum(np.searchsorted(b.cumulative, breaks[keep], side="left"), len(b) - 1)
    gap = np.abs(a.atoms[ia] - b.atoms[ib])
    return float((widths[keep] @ gap**p) ** (1.0 / p))


def norm_pdf(z):
    return np.exp(-0.5 * np.square(z)) / math.sqrt(2.0 * math.pi)


def wasserstein_to_normal(dist: EmpiricalDistribution, p: float = 2.0,
                          mu: float = 0.0, sigma: float = 1.0, nodes: int = 32) -> float:
    """Quantile-space distance between ``dist`` and N(mu, sigma^2).

    For ``p == 2`` each piece is integrated in closed form via
    ``int z phi = -phi`` and ``int z^2 phi = Phi - z phi``; other ``p`` use
    Gauss--Legendre quadrature on each interior piece and adaptive quadrature
    on the two unbounded end pieces.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    atoms = (dist.atoms - mu) / sigma
    hi = dist.cumulative.copy()
    lo = np.concatenate(([0.0], hi[:-1]))
    keep = hi > lo
    atoms, lo, hi = atoms[keep], lo[keep], hi[keep]
    z_lo = np.zeros(lo.shape)
    z_hi = np.zeros(hi.shape)
    inner_lo, inner_hi = lo > 0.0, hi < 1.0
    z_lo[inner_lo] = norm_inv_cdf(lo[inner_lo])
    z_hi[inner_hi] = norm_inv_cdf(hi[inner_hi])

    if p == 2:
        # phi and z * phi vanish at the infinite ends t = 0 and t = 1
        phi_lo = np.where(inner_lo, norm_pdf(z_lo), 0.0)
        phi_hi = np.where(inner_hi, norm_pdf(z_hi), 0.0)
        m1 = phi_lo - phi_hi
        m2 = (hi - lo) - (z_hi * phi_hi - z_lo * phi_lo)
        total = np.sum(atoms**2 * (hi - lo) - 2.0 * atoms * m1 + m2)
        return float(sigma * math.sqrt(max(total, 0.0)))

    x, w = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    for k, (a, t0, t1) in enumerate(zip(atoms, lo, hi)):
        if inner_lo[k] and inner_hi[k]:
            t = 0.5 * (t1 - t0) * x + 0.5 * (t1 + t0)
            total += 0.5 * (t1 - t0) * (w @ np.abs(a - norm_inv_cdf(t)) ** p)
        else:
            # unbounded normal score: integrate against phi on the z-axis
            z0 = z_lo[k] if inner_lo[k] else -np.inf
            z1 = z_hi[k] if inner_hi[k] else np.inf
            total += integrate.quad(lambda z: abs(a - z) ** p * norm_pdf(z), z0, z1)[0]
    return float(sigma * total ** (1.0 / p))


def normal_cvar_coefficient(beta: float) -> float:
    """``phi(Phi^-1(beta)) / (1 - beta)``: CVaR of a standard normal at level beta."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    return float(norm_pdf(norm_inv_cdf(beta)) / (1.0 - beta))


def cvar_normal_closed_form(mu: float, sigma: float, beta: float) -> float:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return mu + sigma * normal_cvar_coefficient(beta)
