"""Replication harness: RMSE/bias sweeps, reference values, slope fits, and
convergence diagnostics.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .problems import (
    DEFAULT_R_TARGET,
    Model,
    PortfolioInstance,
    TwoStageInstance,
    exact_portfolio_normal,
    gen_portfolio_instance,
    gen_two_stage_instance,
    sample_based_optimal_value,
)
from .risk import cvar_normal_closed_form, cvar_of_samples, empirical_from_values, normal_cvar_coefficient, wasserstein_to_normal
from .sequences import MASK64, Sampler, dyadic_stratification, generate_points, net_t_value, sobol_points
from .transforms import Factorization, clamp_unit, gaussian_transform, norm_inv_cdf

__all__ = [
    "SamplerSpec",
    "RefMode",
    "ExperimentConfig",
    "Cell",
    "ExperimentReport",
    "SweepError",
    "derive_seed",
    "make_instance",
    "reference_value",
    "run_sweep",
    "fit_slope",
    "write_report_csv",
    "report_csv_text",
    "write_report_svg",
    "simplex_grid",
    "UniformDiagnostic",
    "uniform_convergence_diagnostic",
    "wasserstein_diagnostic",
    "stratification_diagnostic",
    "CSV_HEADER",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("problem", "model", "sampler", "factorization", "d", "m", "beta", "R", "N", "M",
              "reference", "ref_mode", "mean", "bias", "rmse", "slope")
_REF_STREAM = 0x5245_4645  # separates reference-run seeds from sweep seeds


def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Mix a master seed with a tuple of indices into a 64-bit seed."""
    h = _splitmix(int(master) & MASK64)
    for i in indices:
        h = _splitmix(h ^ (int(i) & MASK64))
    return h


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SamplerSpec:
    """A point generator plus the Gaussian factorization it feeds."""

    sampler: Sampler
    factorization: Factorization = Factorization.CHOLESKY

    @classmethod
    def parse(cls, text: str, default: Factorization | str = Factorization.CHOLESKY) -> "SamplerSpec":
        name, _, fact = text.strip().partition("+")
        return cls(Sampler(name), Factorization(fact or default))

    @property
    def label(self) -> str:
        if self.factorization is Factorization.PCA:
            return f"{self.sampler.value}+pca"
        return self.sampler.value


class RefMode(str, enum.Enum):
    EXACT = "exact"
    HIGHN = "highn"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "portfolio"  # portfolio | two-stage | stub
    model: Model = Model.NORMAL
    instance_seed: int = 0
    d: int = 5
    m: int = 5
    beta: float = 0.9
    r_target: float = DEFAULT_R_TARGET
    samplers: Tuple[SamplerSpec, ...] = (SamplerSpec(Sampler.MC), SamplerSpec(Sampler.SOBOL_SCRAMBLED))
    n_schedule: Tuple[int, ...] = tuple(2**k for k in range(6, 13))
    replications: int = 30
    master_seed: int = 0
    reference: RefMode = RefMode.EXACT
    ref_exponent: Optional[int] = None  # required for highn; no default is claimed
    ref_replications: int = 100
    ref_factorization: Factorization = Factorization.PCA
    kelley_tol: float = 1e-7
    lp_method: str = "highs"
    workers: int = 1
    output: Optional[str] = None
    stub_reference: float = 0.0
    stub_offset: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        object.__setattr__(self, "reference", RefMode(self.reference))
        object.__setattr__(self, "ref_factorization", Factorization(self.ref_factorization))
        object.__setattr__(self, "samplers", tuple(
            s if isinstance(s, SamplerSpec) else SamplerSpec.parse(s) for s in self.samplers))
        object.__setattr__(self, "n_schedule", tuple(int(n) for n in self.n_schedule))
        if self.problem not in ("portfolio", "two-stage", "stub"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.replications < 2:
            raise ValueError("need at least 2 replications")
        if not self.n_schedule or any(b <= a for a, b in zip(self.n_schedule, self.n_schedule[1:])):
            raise ValueError("n_schedule must be nonempty and strictly increasing")
        if not self.samplers:
            raise ValueError("need at least one sampler")
        if self.reference is RefMode.HIGHN and self.problem != "stub":
            if self.ref_exponent is None:
                raise ValueError("reference = highn needs ref_exponent")
            if self.ref_replications < 1:
                raise ValueError("ref_replications must be >= 1")

    # flat "key = value" text ------------------------------------------------

    def to_items(self) -> List[Tuple[str, str]]:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "samplers":
                v = ",".join(s.label for s in v)
            elif f.name == "n_schedule":
                v = ",".join(str(n) for n in v)
            elif isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, float):
                v = format(v, ".17g")
            elif v is None:
                v = ""
            out.append((f.name, str(v)))
        return out

    @classmethod
    def from_mapping(cls, kv: Dict[str, str]) -> "ExperimentConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in kv.items():
            key = key.strip().replace("-", "_")
            if key == "R":
                key = "r_target"
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            raw = raw.strip()
            if key == "samplers":
                kwargs[key] = tuple(s for s in raw.split(",") if s.strip())
            elif key == "n_schedule":
                kwargs[key] = tuple(_parse_count(s) for s in raw.split(",") if s.strip())
            elif key in ("instance_seed", "d", "m", "replications", "master_seed",
                         "ref_replications", "workers"):
                kwargs[key] = int(raw, 0)
            elif key in ("beta", "r_target", "kelley_tol", "stub_reference", "stub_offset"):
                kwargs[key] = float(raw)
            elif key in ("output", "ref_exponent"):
                kwargs[key] = (int(raw, 0) if key == "ref_exponent" else raw) if raw else None
            else:
                kwargs[key] = raw
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_mapping(parse_flat_config(text))


def _parse_count(s: str) -> int:
    s = s.strip()
    if s.startswith("2^"):
        return 2 ** int(s[2:])
    return int(s)


def parse_flat_config(text: str) -> Dict[str, str]:
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


# ---------------------------------------------------------------------------
# report


@dataclass
class Cell:
    sampler: str
    factorization: str
    n: int
    values: np.ndarray
    reference: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def bias(self) -> float:
        return self.mean - self.reference

    @property
    def variance(self) -> float:
        return float(np.mean((self.values - self.mean) ** 2))

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self.values - self.reference) ** 2)))


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    reference: float
    ref_mode: str  # "exact", "highn", or "stub"
    cells: List[Cell] = field(default_factory=list)
    slopes: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    complete: bool = True

    def cell(self, sampler_label: str, n: int) -> Cell:
        for c in self.cells:
            if c.sampler == sampler_label and c.n == n:
                return c
        raise KeyError((sampler_label, n))


class SweepError(RuntimeError):
    def __init__(self, message: str, report: ExperimentReport):
        super().__init__(message)
        self.report = report


def fit_slope(log2_n: Sequence[float], log2_rmse: Sequence[float]) -> Tuple[float, float]:
    """Ordinary least squares line through ``(log2_n, log2_rmse)``; returns (slope, intercept)."""
    x = np.asarray(log2_n, dtype=np.float64)
    y = np.asarray(log2_rmse, dtype=np.float64)
    if x.size < 2 or x.shape != y.shape:
        raise ValueError("need at least two points of matching length")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("all abscissae are equal; slope undefined")
    slope = float(xc @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * x.mean())


# ---------------------------------------------------------------------------
# running


def make_instance(config: ExperimentConfig):
    if config.problem == "portfolio":
        return gen_portfolio_instance(config.instance_seed, config.d, config.beta, config.r_target, config.model)
    if config.problem == "two-stage":
        return gen_two_stage_instance(config.instance_seed, config.d, config.m, config.beta)
    return None


def reference_value(config: ExperimentConfig, instance=None) -> float:
    """Exact optimum (normal portfolio only) or the mean of high-N scrambled-Sobol' solves."""
    if config.problem == "stub":
        return config.stub_reference
    instance = instance if instance is not None else make_instance(config)
    if config.reference is RefMode.EXACT:
        if not (isinstance(instance, PortfolioInstance) and instance.model is Model.NORMAL):
            raise ValueError("exact reference is only available for the normal portfolio problem")
        return exact_portfolio_normal(instance, tol=config.kelley_tol)
    n = 2**config.ref_exponent
    vals = [
        sample_based_optimal_value(instance, Sampler.SOBOL_SCRAMBLED, n,
                                   derive_seed(config.master_seed, _REF_STREAM, k),
                                   config.ref_factorization, config.lp_method)
        for k in range(config.ref_replications)
    ]
    return float(np.mean(vals))


Estimator = Callable[[SamplerSpec, int, int], float]


def _evaluate(args) -> float:
    config, instance, spec, n, seed = args
    if config.problem == "stub":
        return config.stub_reference + config.stub_offset
    return sample_based_optimal_value(instance, spec.sampler, n, seed, spec.factorization, config.lp_method)


def run_sweep(config: ExperimentConfig, estimator: Optional[Estimator] = None,
              reference: Optional[float] = None) -> ExperimentReport:
    """Run every (sampler, n, replication) and reduce to RMSE and bias per cell.

    Replication seeds come from ``derive_seed(master_seed, sampler_idx, n_idx, rep)``.
    Results land in a preallocated table and are reduced in a fixed order, so
    the report does not depend on ``config.workers``.
    """
    instance = make_instance(config)
    ref = reference_value(config, instance) if reference is None else float(reference)
    S, K, M = len(config.samplers), len(config.n_schedule), config.replications
    table = np.full((S, K, M), np.nan)
    tasks = [
        (s, k, r, spec, n, derive_seed(config.master_seed, s, k, r))
        for (s, spec), (k, n) in itertools.product(enumerate(config.samplers), enumerate(config.n_schedule))
        for r in range(M)
    ]
    error: Optional[BaseException] = None
    try:
        if estimator is not None:
            for s, k, r, spec, n, seed in tasks:
                table[s, k, r] = estimator(spec, n, seed)
        elif config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                args = [(config, instance, spec, n, seed) for *_, spec, n, seed in tasks]
                for (s, k, r, *_), value in zip(tasks, pool.map(_evaluate, args, chunksize=4)):
                    table[s, k, r] = value
        else:
            for s, k, r, spec, n, seed in tasks:
                table[s, k, r] = _evaluate((config, instance, spec, n, seed))
    except Exception as exc:  # noqa: BLE001 - reported with the partial table
        error = exc

    report = _reduce(config, ref, table)
    if error is not None:
        report.complete = False
        raise SweepError(f"sweep aborted: {error}", report) from error
    return report


def _reduce(config: ExperimentConfig, ref: float, table: np.ndarray) -> ExperimentReport:
    report = ExperimentReport(config, ref, "stub" if config.problem == "stub" else config.reference.value)
    for s, spec in enumerate(config.samplers):
        xs, ys = [], []
        for k, n in enumerate(config.n_schedule):
            vals = table[s, k]
            if np.isnan(vals).any():
                continue
            cell = Cell(spec.label, spec.factorization.value, n, vals.copy(), ref)
            report.cells.append(cell)
            if cell.rmse > 0:
                xs.append(math.log2(n))
                ys.append(math.log2(cell.rmse))
        if len(xs) >= 2:
            report.slopes[spec.label] = fit_slope(xs, ys)
    return report


# ---------------------------------------------------------------------------
# output


def _g(x) -> str:
    return format(float(x), ".17g")


def report_csv_text(report: ExperimentReport) -> str:
    cfg = report.config
    buf = io.StringIO()
    buf.write(f"# rqmc_risk version = {__version__}\n")
    buf.write(f"# complete = {str(report.complete).lower()}\n")
    for k, v in cfg.to_items():
        buf.write(f"# config.{k} = {v}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    portfolio = cfg.problem == "portfolio"
    base = {
        "problem": cfg.problem,
        "model": cfg.model.value if portfolio else "",
        "d": str(cfg.d) if cfg.problem != "stub" else "",
        "m": str(cfg.m) if cfg.problem == "two-stage" else "",
        "beta": _g(cfg.beta),
        "R": _g(cfg.r_target) if portfolio else "",
        "M": str(cfg.replications),
        "reference": _g(report.reference),
        "ref_mode": report.ref_mode,
    }
    for c in report.cells:
        row = dict(base, sampler=c.sampler, factorization=c.factorization, N=str(c.n),
                   mean=_g(c.mean), bias=_g(c.bias), rmse=_g(c.rmse), slope="")
        writer.writerow([row[h] for h in CSV_HEADER])
    for spec in cfg.samplers:
        if spec.label in report.slopes:
            row = dict(base, sampler=spec.label, factorization=spec.factorization.value, N="",
                       mean="", bias="", rmse="", slope=_g(report.slopes[spec.label][0]))
            writer.writerow([row[h] for h in CSV_HEADER])
    return buf.getvalue()


def write_report_csv(report: ExperimentReport, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report_csv_text(report))
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def write_report_svg(report: ExperimentReport, path, width: int = 480, height: int = 320) -> None:
    """Minimal log2-RMSE versus log2-N line chart."""
    series = {}
    for c in report.cells:
        if c.rmse > 0:
            series.setdefault(c.sampler, []).append((math.log2(c.n), math.log2(c.rmse)))
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValueError("nothing to plot")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    x1, y1 = (x1 if x1 > x0 else x0 + 1), (y1 if y1 > y0 else y0 + 1)
    pad = 40

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">log2 N</text>',
           f'<text x="12" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 12 {height / 2:.1f})"'
           ' text-anchor="middle">log2 RMSE</text>']
    for i, (label, s) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{poly}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" fill="{color}" font-size="11"'
                   f' text-anchor="end">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# diagnostics


def simplex_grid(d: int, resolution: int) -> np.ndarray:
    """All x >= 0 with sum(x) = 1 whose entries are multiples of 1/resolution."""
    rows = [c for c in itertools.product(range(resolution + 1), repeat=d - 1) if sum(c) <= resolution]
    grid = np.array([list(c) + [resolution - sum(c)] for c in rows], dtype=np.float64)
    return grid / resolution


@dataclass
class UniformDiagnostic:
    grid: np.ndarray
    n_schedule: Tuple[int, ...]
    errors: np.ndarray  # len(n_schedule) x len(grid) pointwise |empirical - exact|

    @property
    def sup_errors(self) -> np.ndarray:
        return self.errors.max(axis=1)

    def rows(self):
        for n, row in zip(self.n_schedule, self.errors):
            i = int(np.argmax(row))
            yield n, float(row[i]), self.grid[i]


def uniform_convergence_diagnostic(
    instance: PortfolioInstance,
    grid_resolution: int,
    n_schedule: Sequence[int],
    sampler: Sampler | str,
    rep_seed: int,
    factorization: Factorization | str = Factorization.CHOLESKY,
) -> UniformDiagnostic:
    """Sup over a feasible simplex grid of |empirical CVaR - exact Gaussian CVaR|, per n."""
    if instance.d > 3:
        raise ValueError(f"grid diagnostic supports d <= 3, got d={instance.d}")
    if instance.model is not Model.NORMAL:
        raise ValueError("the diagnostic needs the normal model for exact CVaR values")
    grid = simplex_grid(instance.d, grid_resolution)
    grid = grid[grid @ instance.mu >= instance.r_target - 1e-12]
    if grid.size == 0:
        raise ValueError("no grid point satisfies the return constraint")
    std = np.sqrt(np.maximum(np.einsum("gi,ij,gj->g", grid, instance.sigma, grid), 0.0))
    exact = -grid @ instance.mu + std * normal_cvar_coefficient(instance.beta)
    spec = instance.gaussian_spec(factorization)
    errors = []
    for n in n_schedule:
        xi = gaussian_transform(generate_points(sampler, n, instance.d, rep_seed), spec)
        emp = cvar_of_samples(-xi @ grid.T, instance.beta, axis=0)
        errors.append(np.abs(emp - exact))
    return UniformDiagnostic(grid, tuple(n_schedule), np.array(errors))


def wasserstein_diagnostic(sampler: Sampler | str, n_schedule: Sequence[int], seed: int,
                           p: float = 2.0) -> List[Tuple[int, float]]:
    """Quantile distance between the empirical law of normal scores and N(0, 1)."""
    out = []
    for n in n_schedule:
        u = generate_points(sampler, n, 1, seed).points[:, 0]
        z = norm_inv_cdf(clamp_unit(u))
        out.append((n, wasserstein_to_normal(empirical_from_values(z), p)))
    return out


def stratification_diagnostic(n: int, d: int, scramble_seeds: Sequence[int] = (0, 1, 2)):
    """Per (variant, dimension): does each dyadic cell of width 1/n hold one point?

    Also reports the measured 2-D t-value of the pair (1, j).
    """
    variants = [("sobol", sobol_points(n, d))]
    variants += [(f"sobol-scrambled(seed={s})", sobol_points(n, d, scramble_seed=s)) for s in scramble_seeds]
    rows = []
    for name, ps in variants:
        ok = dyadic_stratification(ps.points)
        for j in range(d):
            t = net_t_value(ps.points, (0, j)) if j > 0 else 0
            rows.append((name, j + 1, bool(ok[j]), t))
    return rows
