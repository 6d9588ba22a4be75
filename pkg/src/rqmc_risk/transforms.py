"""Maps from uniform points to the sample spaces of the test problems."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .sequences import PointSet

__all__ = [
    "Factorization",
    "GaussianSpec",
    "TwoStageTuple",
    "NotPositiveDefiniteError",
    "ConvergenceError",
    "norm_inv_cdf",
    "clamp_unit",
    "cholesky_factor",
    "jacobi_eigh",
    "pca_factor",
    "gaussian_transform",
    "uniform_affine_transform",
    "reshape_two_stage",
    "reshape_two_stage_batch",
]

U_FLOOR = 2.0**-53
T_RANGE = (0.5, 1.0)
V_RANGE = (50.0, 100.0)
E_RANGE = (2.0, 4.0)


class NotPositiveDefiniteError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class Factorization(str, enum.Enum):
    CHOLESKY = "cholesky"
    PCA = "pca"


# AS241 (PPND16) coefficients, Wichura 1988.
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _poly(coef, x):
    out = np.full_like(x, coef[-1])
    for c in coef[-2::-1]:
        out = out * x + c
    return out


def norm_inv_cdf(u):
    """Standard normal quantile, Wichura's AS241 (about 1e-16 relative accuracy).

    Accepts a scalar or an array; every entry must lie strictly inside (0, 1).
    """
    arr = np.asarray(u, dtype=np.float64)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("norm_inv_cdf is defined on the open interval (0, 1)")
    q = arr - 0.5
    out = np.empty_like(arr)

    central = np.abs(q) <= 0.425
    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _poly(_A, r) / _poly(_B, r)

    tail = ~central
    if np.any(tail):
        p = np.minimum(arr[tail], 1.0 - arr[tail])
        r = np.sqrt(-np.log(p))
        val = np.empty_like(r)
        near = r <= 5.0
        rn = r[near] - 1.6
        val[near] = _poly(_C, rn) / _poly(_D, rn)
        rf = r[~near] - 5.0
        val[~near] = _poly(_E, rf) / _poly(_F, rf)
        out[tail] = np.where(q[tail] < 0.0, -val, val)

    return float(out) if out.ndim == 0 else out


def clamp_unit(u: np.ndarray) -> np.ndarray:
    """Replace exact zeros (the unscrambled Sobol' origin) by 2**-53."""
    return np.maximum(np.asarray(u, dtype=np.float64), U_FLOOR)


def cholesky_factor(sigma) -> np.ndarray:
    """Lower-triangular L with L @ L.T == sigma."""
    a = np.asarray(sigma, dtype=np.float64)
    d = a.shape[0]
    if a.shape != (d, d):
        raise ValueError(f"sigma must be square, got {a.shape}")
    L = np.zeros_like(a)
    for j in range(d):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= 0.0:
            raise NotPositiveDefiniteError(f"non-positive pivot {pivot:.3e} at column {j}")
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def jacobi_eigh(sigma, rtol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` unsorted, eigenvectors in columns.
    Stops once the off-diagonal Frobenius norm is at most ``rtol * ||sigma||_F``.
    """
    a = np.array(sigma, dtype=np.float64, copy=True)
    d = a.shape[0]
    v = np.eye(d)
    target = rtol * np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= target:
            return np.diag(a).copy(), v
        for p in range(d - 1):
            for q in range(p + 1, d):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                vp = c * v[:, p] - s * v[:, q]
                vq = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = vp, vq
    raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def pca_factor(sigma) -> np.ndarray:
    """Square root of sigma whose columns are eigenvectors scaled by sqrt(eigenvalue).

    Columns are ordered by descending eigenvalue, so the first uniform
    coordinate drives the direction of largest variance.
    """
    a = np.asarray(sigma, dtype=np.float64)
    vals, vecs = jacobi_eigh(a)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    tol = 1e-10 * max(np.trace(a), 0.0)
    if vals.size and vals[-1] < -tol:
        raise NotPositiveDefiniteError(f"negative eigenvalue {vals[-1]:.3e}")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class GaussianSpec:
    mu: np.ndarray
    sigma: np.ndarray
    factorization: Factorization = Factorization.CHOLESKY

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        d = mu.shape[0]
        if sigma.shape != (d, d):
            raise ValueError(f"sigma shape {sigma.shape} does not match mean of length {d}")
        if not np.array_equal(sigma, sigma.T):
            raise ValueError("sigma must be exactly symmetric")
        if d and np.linalg.eigvalsh(sigma).min() < -1e-10 * np.trace(sigma):
            raise NotPositiveDefiniteError("sigma is not positive semidefinite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "factorization", Factorization(self.factorization))

    def factor(self) -> np.ndarray:
        if self.factorization is Factorization.PCA:
            return pca_factor(self.sigma)
        return cholesky_factor(self.sigma)


def gaussian_transform(points: PointSet | np.ndarray, spec: GaussianSpec) -> np.ndarray:
    u = points.points if isinstance(points, PointSet) else np.asarray(points)
    if u.shape[1] != spec.mu.shape[0]:
        raise ValueError(f"points have d={u.shape[1]}, spec has d={spec.mu.shape[0]}")
    z = norm_inv_cdf(clamp_unit(u))
    return spec.mu + z @ spec.factor().T


def uniform_affine_transform(points: PointSet | np.ndarray, mu, q) -> np.ndarray:
    """``mu + sqrt(12) q (u - 1/2)`` row-wise; zero-mean, covariance ``q q^T``."""
    u = points.points if isinstance(points, PointSet) else np.asarray(points)
    mu = np.asarray(mu, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if u.shape[1] != q.shape[1] or q.shape[0] != mu.shape[0]:
        raise ValueError("shape mismatch between points, mu and q")
    return mu + np.sqrt(12.0) * (u - 0.5) @ q.T


@dataclass(frozen=True)
class TwoStageTuple:
    """One realization (T, v, e) of the second-stage data."""

    T: np.ndarray
    v: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        e = np.asarray(self.e, dtype=np.float64)
        if T.ndim != 2 or v.shape != (T.shape[0],) or e.shape != (T.shape[0],):
            raise ValueError("TwoStageTuple needs T (m x d), v (m,), e (m,)")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "e", e)


def _affine(u, lo_hi):
    lo, hi = lo_hi
    return lo + (hi - lo) * u


def reshape_two_stage_batch(points: PointSet | np.ndarray, d: int, m: int):
    """Vectorized reshape: returns ``T`` (N, m, d), ``v`` (N, m), ``e`` (N, m)."""
    u = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != m * d + 2 * m:
        raise ValueError(f"expected points of length m*d + 2m = {m * d + 2 * m}, got shape {u.shape}")
    n = u.shape[0]
    T = _affine(u[:, : m * d], T_RANGE).reshape(n, m, d)
    v = _affine(u[:, m * d: m * d + m], V_RANGE)
    e = _affine(u[:, m * d + m:], E_RANGE)
    return T, v, e


def reshape_two_stage(point, d: int, m: int) -> TwoStageTuple:
    u = np.asarray(point, dtype=np.float64)
    if u.ndim != 1:
        raise ValueError("reshape_two_stage takes a single point")
    T, v, e = reshape_two_stage_batch(u[None, :], d, m)
    return TwoStageTuple(T[0], v[0], e[0])
