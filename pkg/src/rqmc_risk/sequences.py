"""Monte Carlo and low-discrepancy point sets in the unit cube.

All generators are pure functions of ``(seed, n, d)`` and return an immutable
:class:`PointSet`.  Sobol' points use the Joe--Kuo direction numbers shipped in
``data/new-joe-kuo-6.64.txt`` (64 dimensions) and can be randomized with an
Owen-style nested uniform scramble.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Sampler",
    "PointSet",
    "DirectionNumberTable",
    "load_direction_numbers",
    "mc_points",
    "sobol_points",
    "sobol_integers",
    "owen_scramble",
    "halton_points",
    "shift_mod1",
    "radical_inverse",
    "radical_inverse_array",
    "lhs_points",
    "generate_points",
    "dyadic_stratification",
    "net_t_value",
    "PRIMES",
]

MASK64 = (1 << 64) - 1
SOBOL_BITS = 32
OUTPUT_BITS = 53
_ONE_MINUS = np.nextafter(1.0, 0.0)

PRIMES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
    71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149,
    151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229,
    233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307, 311,
)


class Sampler(str, enum.Enum):
    MC = "mc"
    SOBOL = "sobol"
    SOBOL_SCRAMBLED = "sobol-scrambled"
    HALTON = "halton"
    HALTON_SHIFTED = "halton-shifted"
    LHS = "lhs"

    @property
    def randomized(self) -> bool:
        return self not in (Sampler.SOBOL, Sampler.HALTON)


@dataclass(frozen=True)
class PointSet:
    """An ``n x d`` array of points in ``[0, 1)^d`` plus how it was made."""

    points: np.ndarray
    sampler: Sampler
    seed: Optional[int]
    n: int = field(init=False)
    d: int = field(init=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2:
            raise ValueError(f"points must be 2-D, got shape {pts.shape}")
        if pts.size and (pts.min() < 0.0 or pts.max() >= 1.0):
            raise ValueError("points must lie in [0, 1)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "n", pts.shape[0])
        object.__setattr__(self, "d", pts.shape[1])

    def __len__(self):
        return self.n


# ---------------------------------------------------------------------------
# hashing helpers (numpy uint64 arithmetic wraps modulo 2**64)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _as_u64(seed: int) -> np.ndarray:
    return np.array([int(seed) & MASK64], dtype=np.uint64)


# ---------------------------------------------------------------------------
# direction numbers


@dataclass(frozen=True)
class DirectionNumberTable:
    """Primitive polynomials and initial direction integers per dimension.

    Dimension 1 is the van der Corput sequence and carries no polynomial;
    ``degrees[0] == 0``.
    """

    degrees: tuple
    coefficients: tuple
    initial: tuple

    @property
    def max_dim(self) -> int:
        return len(self.degrees)

    def direction_integers(self, bits: int = SOBOL_BITS) -> np.ndarray:
        """Return a ``max_dim x bits`` uint64 array; entry ``[j, k]`` is v_{k+1} of dim j+1."""
        return _direction_integers(self, bits)


@functools.lru_cache(maxsize=None)
def _direction_integers(table: DirectionNumberTable, bits: int) -> np.ndarray:
    v = np.zeros((table.max_dim, bits), dtype=np.uint64)
    for k in range(bits):
        v[0, k] = 1 << (bits - 1 - k)
    for j in range(1, table.max_dim):
        s, a = table.degrees[j], table.coefficients[j]
        m = list(table.initial[j])
        for k in range(s, bits):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    new ^= m[k - i] << i
            m.append(new)
        for k in range(bits):
            v[j, k] = m[k] << (bits - 1 - k)
    v.setflags(write=False)
    return v


def parse_direction_numbers(text: str) -> DirectionNumberTable:
    """Parse the Joe--Kuo layout ``d s a m_1 ... m_s`` (header line optional)."""
    degrees, coeffs, initial = [0], [0], [()]
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or not parts[0].isdigit():
            continue
        dim, s, a, *m = (int(p) for p in parts)
        if dim != len(degrees) + 1:
            raise ValueError(f"line {lineno}: expected dimension {len(degrees) + 1}, got {dim}")
        if len(m) != s:
            raise ValueError(f"line {lineno}: degree {s} but {len(m)} initial integers")
        for k, mk in enumerate(m, 1):
            if mk % 2 == 0 or mk >= (1 << k):
                raise ValueError(f"line {lineno}: m_{k}={mk} must be odd and < 2^{k}")
        degrees.append(s)
        coeffs.append(a)
        initial.append(tuple(m))
    return DirectionNumberTable(tuple(degrees), tuple(coeffs), tuple(initial))


@functools.lru_cache(maxsize=None)
def load_direction_numbers(path: Optional[str] = None) -> DirectionNumberTable:
    if path is None:
        text = resources.files("rqmc_risk").joinpath("data/new-joe-kuo-6.64.txt").read_text()
    else:
        text = Path(path).read_text()
    return parse_direction_numbers(text)


# ---------------------------------------------------------------------------
# generators


def mc_points(seed: int, n: int, d: int) -> PointSet:
    """iid Uniform[0,1)^d draws from numpy's PCG64 generator."""
    _check_size(n, d)
    rng = np.random.default_rng(int(seed) & MASK64)
    return PointSet(rng.random((n, d)), Sampler.MC, seed)


def sobol_integers(n: int, d: int, table: Optional[DirectionNumberTable] = None) -> np.ndarray:
    """First ``n`` Sobol' points as 32-bit integers in Gray-code order (``n x d`` uint64)."""
    table = table or load_direction_numbers()
    _check_size(n, d)
    if n & (n - 1):
        raise ValueError(f"Sobol' sample size must be a power of two, got n={n}")
    if n > 1 << SOBOL_BITS:
        raise ValueError(f"n={n} exceeds 2^{SOBOL_BITS}")
    if d > table.max_dim:
        raise ValueError(f"dimension {d} exceeds direction-number table ({table.max_dim})")
    v = table.direction_integers()
    idx = np.arange(n, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    out = np.zeros((n, d), dtype=np.uint64)
    zero = np.uint64(0)
    for k in range(n.bit_length() - 1):
        bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        out ^= np.where(bit[:, None], v[:d, k][None, :], zero)
    return out


def owen_scramble(x: np.ndarray, seed: int, dim: int, bits: int = OUTPUT_BITS) -> np.ndarray:
    """Nested uniform scramble of ``bits``-digit binary fractions ``x / 2**bits``.

    The flip applied to digit ``k`` is a hash of ``(seed, dim, k, digits 1..k-1)``,
    so points that share a digit prefix share the permutation below it.
    """
    x = np.asarray(x, dtype=np.uint64)
    salt = np.array([dim + 1], dtype=np.uint64) * np.uint64(0xD1B54A32D192ED03)
    key = _splitmix64(_splitmix64(_as_u64(seed)) ^ salt)
    out = np.zeros_like(x)
    one = np.uint64(1)
    for k in range(bits):
        shift = np.uint64(bits - 1 - k)
        prefix = x >> (shift + one)
        node = prefix | np.uint64(1 << k)  # heap index of the tree node
        flip = _splitmix64(node ^ key) >> np.uint64(63)
        out |= (((x >> shift) & one) ^ flip) << shift
    return out


def sobol_points(n: int, d: int, scramble_seed: Optional[int] = None) -> PointSet:
    """First ``n`` Sobol' points, optionally Owen-scrambled per dimension."""
    ints = sobol_integers(n, d)
    if scramble_seed is None:
        return PointSet(ints.astype(np.float64) / 2.0**SOBOL_BITS, Sampler.SOBOL, None)
    wide = ints << np.uint64(OUTPUT_BITS - SOBOL_BITS)
    cols = [owen_scramble(wide[:, j], scramble_seed, j) for j in range(d)]
    pts = np.stack(cols, axis=1).astype(np.float64) / 2.0**OUTPUT_BITS
    return PointSet(pts, Sampler.SOBOL_SCRAMBLED, scramble_seed)


def radical_inverse(index: int, base: int) -> float:
    if base < 2:
        raise ValueError("base must be >= 2")
    if index < 0:
        raise ValueError("index must be nonnegative")
    result, f = 0.0, 1.0 / base
    while index:
        index, digit = divmod(index, base)
        result += digit * f
        f /= base
    return result


def radical_inverse_array(index: np.ndarray, base: int) -> np.ndarray:
    i = np.array(index, dtype=np.int64, copy=True)
    result = np.zeros(i.shape, dtype=np.float64)
    f = 1.0 / base
    while np.any(i):
        result += (i % base) * f
        i //= base
        f /= base
    return np.minimum(result, _ONE_MINUS)


def shift_mod1(points: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Add ``shift`` row-wise modulo 1, keeping every entry in [0, 1)."""
    out = np.mod(np.asarray(points) + np.asarray(shift), 1.0)
    out[out >= 1.0] = 0.0
    return out


def halton_points(n: int, d: int, shift_seed: Optional[int] = None) -> PointSet:
    """Halton points for indices 1..n; coordinate j uses the j-th prime base."""
    _check_size(n, d)
    if d > len(PRIMES):
        raise ValueError(f"Halton dimension {d} exceeds limit {len(PRIMES)}")
    idx = np.arange(1, n + 1, dtype=np.int64)
    pts = np.stack([radical_inverse_array(idx, b) for b in PRIMES[:d]], axis=1)
    if shift_seed is None:
        return PointSet(pts, Sampler.HALTON, None)
    shift = np.random.default_rng(int(shift_seed) & MASK64).random(d)
    return PointSet(shift_mod1(pts, shift), Sampler.HALTON_SHIFTED, shift_seed)


def lhs_points(seed: int, n: int, d: int) -> PointSet:
    """Latin hypercube sample: one point per stratum [k/n, (k+1)/n) in every coordinate."""
    _check_size(n, d)
    rng = np.random.default_rng(int(seed) & MASK64)
    pts = np.empty((n, d))
    for j in range(d):
        pts[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return PointSet(np.minimum(pts, _ONE_MINUS), Sampler.LHS, seed)


def generate_points(sampler: Sampler | str, n: int, d: int, seed: int = 0) -> PointSet:
    sampler = Sampler(sampler)
    if sampler is Sampler.MC:
        return mc_points(seed, n, d)
    if sampler is Sampler.SOBOL:
        return sobol_points(n, d)
    if sampler is Sampler.SOBOL_SCRAMBLED:
        return sobol_points(n, d, scramble_seed=seed)
    if sampler is Sampler.HALTON:
        return halton_points(n, d)
    if sampler is Sampler.HALTON_SHIFTED:
        return halton_points(n, d, shift_seed=seed)
    return lhs_points(seed, n, d)


def _check_size(n: int, d: int) -> None:
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")


# ---------------------------------------------------------------------------
# net diagnostics


def dyadic_stratification(points: np.ndarray) -> np.ndarray:
    """Per coordinate, whether each dyadic cell of width 1/n holds exactly one point.

    ``n`` must be a power of two.  Returns a boolean vector of length ``d``.
    """
    pts = np.asarray(points)
    n = pts.shape[0]
    if n & (n - 1):
        raise ValueError("stratification check needs a power-of-two sample size")
    cells = np.floor(pts * n).astype(np.int64)
    return np.array([np.array_equal(np.sort(cells[:, j]), np.arange(n)) for j in range(pts.shape[1])])


def net_t_value(points: np.ndarray, dims: Sequence[int] = (0, 1)) -> int:
    """Smallest t such that the projection on ``dims`` is a (t, m, 2)-net in base 2.

    Every elementary box [a/2^k1, (a+1)/2^k1) x [b/2^k2, (b+1)/2^k2) with
    k1 + k2 = m - t must contain exactly 2^t points.
    """
    pts = np.asarray(points)[:, list(dims)]
    n = pts.shape[0]
    m = n.bit_length() - 1
    if n != 1 << m:
        raise ValueError("net check needs a power-of-two sample size")
    for t in range(m + 1):
        if _is_net(pts, m, t):
            return t
    return m


def _is_net(pts: np.ndarray, m: int, t: int) -> bool:
    q = m - t
    for k1 in range(q + 1):
        k2 = q - k1
        a = np.floor(pts[:, 0] * (1 << k1)).astype(np.int64)
        b = np.floor(pts[:, 1] * (1 << k2)).astype(np.int64)
        counts = np.bincount(a * (1 << k2) + b, minlength=1 << q)
        if np.any(counts != (1 << t)):
            return False
    return True
