"""Linear programs: a dense two-phase revised simplex, LP builders for the
sample-based CVaR problems, and Kelley's cutting-plane method.

``solve_lp`` runs the in-house simplex by default.  Passing
``method="highs"`` hands the same :class:`LpProblem` to HiGHS through
:func:`scipy.optimize.linprog`; the sample-based problems at realistic sample
sizes have tens of thousands of rows and need a sparse solver.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, sparse

__all__ = [
    "Relation",
    "LpStatus",
    "LpProblem",
    "LpSolution",
    "LpStatusError",
    "IterationLimitError",
    "solve_lp",
    "build_portfolio_lp",
    "build_two_stage_lp",
    "KelleyResult",
    "KelleyError",
    "kelley_minimize",
]

log = logging.getLogger(__name__)

MAX_ITER = 10**6
_COST_TOL = 1e-9
_PIVOT_TOL = 1e-9
_RATIO_PIVOT_TOL = 1e-7  # relative to the entering column's largest entry
_REFACTOR_EVERY = 64
_PERTURB = 1e-7
_STALL_LIMIT = 50  # consecutive degenerate pivots before strict Bland leaving rule


class Relation(str, enum.Enum):
    LE = "<="
    GE = ">="
    EQ = "="


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpStatusError(RuntimeError):
    """An LP that had to be solved to optimality was infeasible or unbounded."""

    def __init__(self, status: LpStatus, what: str = "LP"):
        super().__init__(f"{what} is {status.value}")
        self.status = status


class IterationLimitError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LpProblem:
    """``min c^T x  s.t.  A x (<=|>=|=) b,  lower <= x <= upper``.

    ``A`` may be a dense array or a scipy sparse matrix.  Lower bounds default
    to 0 and upper bounds to +inf; use ``-np.inf`` for free variables.
    """

    c: np.ndarray
    A: object
    relations: Tuple[Relation, ...]
    b: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).ravel()
        b = np.asarray(self.b, dtype=np.float64).ravel()
        A = sparse.csr_array(self.A) if sparse.issparse(self.A) else np.atleast_2d(
            np.asarray(self.A, dtype=np.float64))
        if A.shape[0] == 0 or (A.ndim == 2 and A.size == 0):
            A = np.zeros((b.size, c.size)) if not sparse.issparse(A) else A
        rel = tuple(Relation(r) for r in self.relations)
        n = c.size
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=np.float64).ravel()
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=np.float64).ravel()
        if A.shape != (b.size, n):
            raise ValueError(f"A has shape {A.shape}, expected ({b.size}, {n})")
        if len(rel) != b.size:
            raise ValueError(f"{len(rel)} relations for {b.size} rows")
        if lower.shape != (n,) or upper.shape != (n,):
            raise ValueError("bound vectors must match the number of variables")
        if np.any(lower > upper) or np.any(lower == np.inf) or np.any(upper == -np.inf):
            raise ValueError("inconsistent variable bounds")
        for name, val in (("c", c), ("A", A), ("relations", rel), ("b", b), ("lower", lower), ("upper", upper)):
            object.__setattr__(self, name, val)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def dense_A(self) -> np.ndarray:
        return self.A.toarray() if sparse.issparse(self.A) else self.A

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Per-row constraint violation (0 when satisfied)."""
        ax = self.A @ x
        out = np.zeros(self.n_rows)
        for i, r in enumerate(self.relations):
            if r is Relation.LE:
                out[i] = max(ax[i] - self.b[i], 0.0)
            elif r is Relation.GE:
                out[i] = max(self.b[i] - ax[i], 0.0)
            else:
                out[i] = abs(ax[i] - self.b[i])
        return out

    def is_feasible(self, x: np.ndarray, tol: float = 1e-8) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(
            np.all(self.residuals(x) <= tol)
            and np.all(x >= self.lower - tol)
            and np.all(x <= self.upper + tol)
        )


@dataclass
class LpSolution:
    status: LpStatus
    value: float
    point: Optional[np.ndarray]
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def require_optimal(self, what: str = "LP") -> "LpSolution":
        if not self.optimal:
            raise LpStatusError(self.status, what)
        return self


def solve_lp(problem: LpProblem, method: str = "simplex", max_iter: int = MAX_ITER) -> LpSolution:
    if method == "simplex":
        return _solve_simplex(problem, max_iter)
    if method == "highs":
        return _solve_highs(problem)
    raise ValueError(f"unknown LP method {method!r}")


# ---------------------------------------------------------------------------
# HiGHS backend


def _solve_highs(problem: LpProblem) -> LpSolution:
    A = problem.A if sparse.issparse(problem.A) else sparse.csr_array(problem.A)
    rel = np.array([r.value for r in problem.relations])
    le, ge, eq = rel == "<=", rel == ">=", rel == "="
    ub_rows = sparse.vstack([A[le], -A[ge]]) if (le.any() or ge.any()) else None
    b_ub = np.concatenate([problem.b[le], -problem.b[ge]]) if ub_rows is not None else None
    bounds = np.column_stack([problem.lower, problem.upper])
    res = optimize.linprog(
        problem.c,
        A_ub=ub_rows,
        b_ub=b_ub,
        A_eq=A[eq] if eq.any() else None,
        b_eq=problem.b[eq] if eq.any() else None,
        bounds=bounds,
        method="highs",
    )
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        x = np.asarray(res.x, dtype=np.float64)
        return LpSolution(LpStatus.OPTIMAL, float(problem.c @ x), x, iters)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, np.nan, None, iters)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, -np.inf, None, iters)
    if res.status == 1:
        raise IterationLimitError(res.message)
    raise RuntimeError(f"HiGHS failed: {res.message}")


# ---------------------------------------------------------------------------
# in-house simplex


@dataclass
class _StandardForm:
    A: np.ndarray          # m x N, rows scaled so b >= 0
    b: np.ndarray
    c: np.ndarray
    c0: float              # constant objective offset
    slack_sign: np.ndarray  # +1/-1 for slack columns that may start basic, per row (0 if none)
    slack_col: np.ndarray
    recover: np.ndarray    # n x N map from standard variables to x
    offset: np.ndarray


def _standard_form(p: LpProblem) -> _StandardForm:
    n = p.n_vars
    A0 = p.dense_A()
    cols: List[np.ndarray] = []  # columns of the recovery map
    offset = np.zeros(n)
    extra_rows = []  # (column index in standard vars, upper bound) for boxed vars
    for j in range(n):
        lo, hi = p.lower[j], p.upper[j]
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lo):
            offset[j] = lo
            cols.append(e)
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append(-e)
        else:
            cols.append(e)
            cols.append(-e)
    P = np.column_stack(cols) if cols else np.zeros((n, 0))
    nz = P.shape[1]

    rows = [A0 @ P]
    rhs = [p.b - A0 @ offset]
    rels = list(p.relations)
    if extra_rows:
        B = np.zeros((len(extra_rows), nz))
        for k, (col, ub) in enumerate(extra_rows):
            B[k, col] = 1.0
        rows.append(B)
        rhs.append(np.array([ub for _, ub in extra_rows]))
        rels += [Relation.LE] * len(extra_rows)
    M = np.vstack(rows)
    b = np.concatenate(rhs)
    m = b.size

    n_slack = sum(r is not Relation.EQ for r in rels)
    A = np.zeros((m, nz + n_slack))
    A[:, :nz] = M
    slack_col = np.full(m, -1)
    k = nz
    for i, r in enumerate(rels):
        if r is Relation.LE:
            A[i, k] = 1.0
        elif r is Relation.GE:
            A[i, k] = -1.0
        else:
            continue
        slack_col[i] = k
        k += 1
    b[np.abs(b) <= 1e-13 * max(1.0, float(np.abs(b).max(initial=0.0)))] = 0.0
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    slack_sign = np.zeros(m)
    has = slack_col >= 0
    slack_sign[has] = A[np.flatnonzero(has), slack_col[has]]

    c = np.zeros(nz + n_slack)
    c[:nz] = p.c @ P
    return _StandardForm(A, b, c, float(p.c @ offset), slack_sign, slack_col, P, offset)


class _Revised:
    """Revised simplex on ``min c^T z, A z = b, z >= 0`` with Bland's rule."""

    def __init__(self, A, b, basis, max_iter):
        self.A, self.b = A, b
        self.basis = list(basis)
        self.rows = list(range(len(self.basis)))
        self.max_iter = max_iter
        self.iterations = 0
        self._stall = 0
        self._refactor()

    def _refactor(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self._since = 0

    def run(self, c, eligible) -> LpStatus:
        while True:
            if self.iterations >= self.max_iter:
                raise IterationLimitError(f"simplex exceeded {self.max_iter} iterations")
            y = c[self.basis] @ self.Binv
            d = c - y @ self.A
            d[self.basis] = 0.0
            cand = np.flatnonzero((d < -_COST_TOL) & eligible)
            if cand.size == 0:
                if self._since:
                    self._refactor()  # confirm with a fresh inverse
                    continue
                return LpStatus.OPTIMAL
            q = int(cand[0])  # Bland: lowest index entering
            w = self.Binv @ self.A[:, q]
            pos = np.flatnonzero(w > _RATIO_PIVOT_TOL * max(1.0, np.abs(w).max()))
            if pos.size == 0:
                if self._since:
                    self._refactor()
                    continue
                return LpStatus.UNBOUNDED
            ratios = self.xB[pos] / w[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
            if self._stall < _STALL_LIMIT:
                r = int(ties[np.argmax(w[ties])])  # largest pivot among ratio ties
            else:
                r = int(min(ties, key=lambda i: self.basis[i]))  # Bland: lowest index leaving
            self._stall = self._stall + 1 if best <= 0.0 else 0
            self._pivot(r, q, w)
            self.iterations += 1

    def _pivot(self, r, q, w):
        theta = self.xB[r] / w[r]
        self.xB -= theta * w
        self.xB[r] = theta
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self.xB = np.maximum(self.xB, 0.0)
        eta = -w / w[r]
        eta[r] = 1.0 / w[r]
        row = self.Binv[r].copy()
        self.Binv += np.outer(eta, row)
        self.Binv[r] = eta[r] * row
        self.basis[r] = q
        self._since += 1
        if self._since >= _REFACTOR_EVERY:
            self._refactor()

    def drop_row(self, r):
        del self.rows[r]
        self.A = np.delete(self.A, r, axis=0)
        self.b = np.delete(self.b, r)
        del self.basis[r]
        self._refactor()


def _solve_simplex(p: LpProblem, max_iter: int) -> LpSolution:
    sf = _standard_form(p)
    m, N = sf.A.shape
    if m == 0:
        if np.any(sf.c < -_COST_TOL):
            return LpSolution(LpStatus.UNBOUNDED, -np.inf, None, 0)
        x = sf.offset.copy()
        return LpSolution(LpStatus.OPTIMAL, float(p.c @ x), x, 0)
    try:
        sol = _two_phase(p, sf, max_iter, perturb=True)
    except (np.linalg.LinAlgError, _NumericalTrouble):
        sol = None
    if sol is None:
        try:
            sol = _two_phase(p, sf, max_iter, perturb=False)
        except _NumericalTrouble as exc:
            raise RuntimeError(f"simplex broke down numerically: {exc}") from exc
    return sol


class _NumericalTrouble(Exception):
    pass


def _two_phase(p: LpProblem, sf: _StandardForm, max_iter: int, perturb: bool) -> Optional[LpSolution]:
    """Phase 1 + phase 2.  With ``perturb`` the inequality right-hand sides are
    nudged upward to break degenerate ties; the final basis is then re-checked
    against the true right-hand side, and ``None`` means "retry unperturbed".
    """
    m, N = sf.A.shape
    b = sf.b.copy()
    if perturb:
        rng = np.random.default_rng(0)
        ineq = sf.slack_col >= 0
        b[ineq] += _PERTURB * (1.0 + b[ineq]) * rng.uniform(0.5, 1.0, ineq.sum())

    # rows whose slack enters with +1 can start with that slack basic
    need_art = np.flatnonzero(sf.slack_sign != 1.0)
    A = np.hstack([sf.A, np.zeros((m, need_art.size))])
    basis = sf.slack_col.copy()
    for k, i in enumerate(need_art):
        A[i, N + k] = 1.0
        basis[i] = N + k
    total = A.shape[1]
    is_art = np.zeros(total, dtype=bool)
    is_art[N:] = True

    solver = _Revised(A, b, basis, max_iter)
    if need_art.size:
        c1 = is_art.astype(np.float64)
        if solver.run(c1, np.ones(total, dtype=bool)) is LpStatus.UNBOUNDED:
            raise _NumericalTrouble("phase 1 reported an unbounded ray")
        infeas = float(c1[solver.basis] @ solver.xB)
        if infeas > 1e-9 * max(1.0, float(np.abs(b).max())):
            if perturb:
                return None
            return LpSolution(LpStatus.INFEASIBLE, np.nan, None, solver.iterations)
        _drive_out_artificials(solver, is_art)

    c2 = np.concatenate([sf.c, np.zeros(total - N)])
    status = solver.run(c2, ~is_art)
    if status is LpStatus.UNBOUNDED:
        if perturb:
            return None
        return LpSolution(status, -np.inf, None, solver.iterations)
    if perturb:
        solver.b = sf.b[solver.rows]
        solver._refactor()
        if solver.xB.min() < -1e-9 * (1.0 + np.abs(solver.b).max()):
            return None
        solver.xB = np.maximum(solver.xB, 0.0)
    z = np.zeros(total)
    z[solver.basis] = solver.xB
    x = sf.offset + sf.recover @ z[: sf.recover.shape[1]]
    return LpSolution(LpStatus.OPTIMAL, float(p.c @ x), x, solver.iterations)


def _drive_out_artificials(solver: _Revised, is_art: np.ndarray) -> None:
    r = 0
    while r < len(solver.basis):
        if not is_art[solver.basis[r]]:
            r += 1
            continue
        row = solver.Binv[r] @ solver.A
        mag = np.where(is_art, 0.0, np.abs(row))
        if mag.max() > _PIVOT_TOL:
            q = int(np.argmax(mag))
            solver._pivot(r, q, solver.Binv @ solver.A[:, q])
            r += 1
        else:
            solver.drop_row(r)  # redundant equality


# ---------------------------------------------------------------------------
# builders


def build_portfolio_lp(samples: np.ndarray, mu: np.ndarray, r_target: float, beta: float) -> LpProblem:
    """CVaR portfolio LP over variables ``(x, t, u)``.

    ``min t + sum(u) / ((1 - beta) N)`` subject to
    ``u_i >= -xi_i^T x - t``, ``sum(x) = 1``, ``mu^T x >= R``, ``x, u >= 0``.
    """
    xi = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    mu = np.asarray(mu, dtype=np.float64)
    n, d = xi.shape
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if mu.shape != (d,):
        raise ValueError("mu does not match the sample dimension")
    nv = d + 1 + n
    c = np.zeros(nv)
    c[d] = 1.0
    c[d + 1:] = 1.0 / ((1.0 - beta) * n)
    # -xi_i^T x - t - u_i <= 0
    scen = sparse.hstack([
        sparse.csr_array(-xi),
        sparse.csr_array(-np.ones((n, 1))),
        -sparse.eye_array(n, format="csr"),
    ])
    budget = np.concatenate([np.ones(d), np.zeros(1 + n)])
    ret = np.concatenate([mu, np.zeros(1 + n)])
    A = sparse.vstack([scen, sparse.csr_array(np.vstack([budget, ret]))], format="csr")
    rel = (Relation.LE,) * n + (Relation.EQ, Relation.GE)
    b = np.concatenate([np.zeros(n), [1.0, r_target]])
    lower = np.zeros(nv)
    lower[d] = -np.inf
    return LpProblem(c, A, rel, b, lower=lower)


def build_two_stage_lp(T: np.ndarray, v: np.ndarray, e: np.ndarray, c: np.ndarray, beta: float) -> LpProblem:
    """Two-stage CVaR LP over ``(x, t, u, y_1..y_N)`` for sampled ``(T_i, v_i, e_i)``.

    ``T`` has shape (N, m, d), ``v`` and ``e`` shape (N, m).
    """
    T = np.asarray(T, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    n, m, d = T.shape
    if v.shape != (n, m) or e.shape != (n, m) or c.shape != (d,):
        raise ValueError("inconsistent two-stage data shapes")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    ix_t = d
    ix_u = d + 1
    ix_y = d + 1 + n
    nv = ix_y + n * m

    obj = np.zeros(nv)
    obj[:d] = c
    obj[ix_t] = 1.0
    obj[ix_u:ix_y] = 1.0 / ((1.0 - beta) * n)

    # y_ij + (T_i x)_j >= v_ij
    rows_y = np.repeat(np.arange(n * m), d + 1)
    cols_y = np.column_stack([np.tile(np.arange(d), (n * m, 1)), ix_y + np.arange(n * m)[:, None]]).ravel()
    vals_y = np.column_stack([T.reshape(n * m, d), np.ones(n * m)]).ravel()
    # e_i^T y_i - t - u_i <= 0
    base = n * m
    rows_u = np.repeat(base + np.arange(n), m + 2)
    cols_u = np.column_stack([
        ix_y + np.arange(n * m).reshape(n, m),
        np.full((n, 1), ix_t),
        ix_u + np.arange(n)[:, None],
    ]).ravel()
    vals_u = np.column_stack([e, -np.ones((n, 1)), -np.ones((n, 1))]).ravel()
    A = sparse.csr_array(
        (np.concatenate([vals_y, vals_u]), (np.concatenate([rows_y, rows_u]), np.concatenate([cols_y, cols_u]))),
        shape=(n * m + n, nv),
    )
    rel = (Relation.GE,) * (n * m) + (Relation.LE,) * n
    b = np.concatenate([v.ravel(), np.zeros(n)])
    lower = np.zeros(nv)
    lower[ix_t] = -np.inf
    upper = np.full(nv, np.inf)
    upper[:d] = 1.0
    return LpProblem(obj, A, rel, b, lower=lower, upper=upper)


# ---------------------------------------------------------------------------
# Kelley cutting planes


@dataclass
class KelleyResult:
    value: float
    point: np.ndarray
    lower_bound: float
    iterations: int
    lower_bounds: List[float] = field(default_factory=list)
    upper_bounds: List[float] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.value - self.lower_bound


class KelleyError(RuntimeError):
    def __init__(self, message: str, result: KelleyResult):
        super().__init__(message)
        self.result = result


Oracle = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def kelley_minimize(
    oracle: Oracle,
    polytope: LpProblem,
    tol: float = 1e-7,
    max_iters: int = 500,
    method: str = "simplex",
) -> KelleyResult:
    """Minimize a convex function over the feasible set of ``polytope``.

    ``oracle(x)`` returns ``(f(x), g)`` with ``g`` a subgradient.  The
    objective of ``polytope`` only picks the starting vertex.  Each iteration
    solves the master LP ``min z  s.t.  z >= f(x_k) + g_k^T (x - x_k)`` over the
    polytope; its value is a lower bound, the best oracle value an upper bound.
    """
    start = solve_lp(polytope, method=method)
    if start.status is LpStatus.INFEASIBLE:
        raise LpStatusError(start.status, "Kelley polytope")
    if start.status is not LpStatus.OPTIMAL:
        raise LpStatusError(start.status, "Kelley starting LP")
    x = start.point
    n = polytope.n_vars
    A_poly = polytope.dense_A()
    cut_rows: List[np.ndarray] = []
    cut_rhs: List[float] = []
    best_f, best_x = np.inf, x
    lbs: List[float] = []
    ubs: List[float] = []
    c_master = np.zeros(n + 1)
    c_master[n] = 1.0
    lower = np.append(polytope.lower, -np.inf)
    upper = np.append(polytope.upper, np.inf)
    lb = -np.inf

    f, g = oracle(x)
    for it in range(1, max_iters + 1):
        g = np.asarray(g, dtype=np.float64)
        if f < best_f:
            best_f, best_x = float(f), np.array(x, dtype=np.float64)
        cut_rows.append(np.append(g, -1.0))
        cut_rhs.append(float(g @ x - f))
        master = LpProblem(
            c_master,
            np.vstack([np.hstack([A_poly, np.zeros((polytope.n_rows, 1))]), np.array(cut_rows)]),
            polytope.relations + (Relation.LE,) * len(cut_rows),
            np.concatenate([polytope.b, cut_rhs]),
            lower=lower,
            upper=upper,
        )
        sol = solve_lp(master, method=method).require_optimal("Kelley master LP")
        lb = sol.value
        x = sol.point[:n]
        f, g = oracle(x)
        if f < best_f:
            best_f, best_x = float(f), np.array(x, dtype=np.float64)
        lbs.append(lb)
        ubs.append(best_f)
        if best_f - lb <= tol:
            return KelleyResult(best_f, best_x, lb, it, lbs, ubs)
    result = KelleyResult(best_f, best_x, lb, max_iters, lbs, ubs)
    raise KelleyError(f"Kelley stopped after {max_iters} cuts with gap {result.gap:.3e}", result)
