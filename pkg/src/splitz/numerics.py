"""Numerical primitives: seeded random streams, the normal quantile function,
exact binomial tails and confidence bounds, and power-iteration spectral norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by ``(seed, stream_id)``.

    Backed by the Philox4x64 counter-based generator keyed with the two
    64-bit words, so every stream is fixed by its address alone and does not
    depend on how many other streams were drawn before it.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= value <= _MASK64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {value}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        """Derive a sub-stream; distinct indices give unrelated streams."""
        mixed = (self.stream_id * 0x9E3779B97F4A7C15 + index + 1) & _MASK64
        return RngStream(self.seed, mixed)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def gaussian_sample(rng, dim: int, sigma: float, size: int | None = None) -> np.ndarray:
    """Draw i.i.d. N(0, sigma^2) entries: shape ``(dim,)`` or ``(size, dim)``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    shape = (dim,) if size is None else (size, dim)
    if sigma == 0:
        return np.zeros(shape)
    return sigma * as_generator(rng).standard_normal(shape)


# ---------------------------------------------------------------------------
# normal distribution

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Acklam's rational approximation, relative error about 1.15e-9
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549671010173206e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def phi(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / _SQRT2)


def _acklam_lower(p: float) -> float:
    # valid for 0 < p <= 0.5
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def phi_inverse(p: float) -> float:
    """Standard normal quantile, accurate to about 1e-12 in absolute terms.

    Works on the lower half and reflects, so ``phi_inverse(1 - p)`` is exactly
    ``-phi_inverse(p)`` whenever ``1 - p`` is representable.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"phi_inverse requires 0 < p < 1, got {p}")
    if p > 0.5:
        return -phi_inverse(1.0 - p)
    if p == 0.5:
        return 0.0
    x = _acklam_lower(p)
    for _ in range(2):
        err = phi(x) - p
        x -= err / (_INV_SQRT_2PI * math.exp(-0.5 * x * x))
    return x


# ---------------------------------------------------------------------------
# binomial confidence bounds

@lru_cache(maxsize=64)
def _log_binom_coeffs(n: int) -> np.ndarray:
    j = np.arange(1, n + 1, dtype=float)
    out = np.zeros(n + 1)
    out[1:] = np.cumsum(np.log((n - j + 1) / j))
    out.setflags(write=False)
    return out


def binomial_tail(n: int, p: float, k: int) -> float:
    """Exact ``P[Binomial(n, p) >= k]`` by log-space summation of the terms."""
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be a probability, got {p}")
    if k == 0:
        return 1.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    j = np.arange(k, n + 1)
    logs = _log_binom_coeffs(n)[k:] + j * math.log(p) + (n - j) * math.log1p(-p)
    top = logs.max()
    return float(min(1.0, math.exp(top) * np.exp(logs - top).sum()))


def clopper_pearson_lower(k: int, n: int, alpha: float, iters: int = 60) -> float:
    """One-sided exact lower confidence bound on a binomial proportion.

    Returns the smallest ``p`` for which observing ``k`` or more successes
    out of ``n`` has probability at least ``alpha``; found by bisection on
    :func:`binomial_tail`, keeping the lower end of the bracket.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if k == 0:
        return 0.0
    return _cp_lower_cached(int(k), int(n), float(alpha), iters)


@lru_cache(maxsize=4096)
def _cp_lower_cached(k: int, n: int, alpha: float, iters: int) -> float:
    lo, hi = 0.0, k / n
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if binomial_tail(n, mid, k) < alpha:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# spectral norms

def power_iteration(m, max_iters: int = 100, tol: float = 1e-9, rng=None):
    """Largest singular value of ``m`` with its singular vectors.

    Returns ``(sigma, u, v)`` with ``m @ v ~ sigma * u``. Iterates on
    ``m.T @ m`` from a normalized all-ones start plus seeded jitter, and stops
    once successive estimates agree to relative ``tol``.
    """
    m = np.asarray(m, dtype=float)
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    rows, cols = m.shape
    if not np.any(m):
        return 0.0, np.zeros(rows), np.zeros(cols)
    gen = as_generator(rng if rng is not None else RngStream(0))
    v = np.ones(cols) / math.sqrt(cols) + 1e-2 * gen.standard_normal(cols) / math.sqrt(cols)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iters):
        mv = m @ v
        new_sigma = float(np.linalg.norm(mv))
        if new_sigma == 0.0:
            # start landed in the null space; re-seed along the largest column
            v = np.zeros(cols)
            v[int(np.argmax(np.linalg.norm(m, axis=0)))] = 1.0
            continue
        w = m.T @ mv
        v = w / np.linalg.norm(w)
        converged = abs(new_sigma - sigma) <= tol * new_sigma
        sigma = new_sigma
        if converged:
            break
    mv = m @ v
    sigma = float(np.linalg.norm(mv))
    u = mv / sigma if sigma > 0 else np.zeros(rows)
    return sigma, u, v


def spectral_norm(m, max_iters: int = 100, tol: float = 1e-9, rng=None) -> float:
    """Power-iteration estimate of the spectral norm ``||m||_2``."""
    return power_iteration(m, max_iters, tol, rng)[0]


def exact_spectral_norm(m) -> float:
    """Spectral norm from a full SVD; an upper-bound-safe reference value."""
    m = np.asarray(m, dtype=float)
    if m.size == 0 or not np.any(m):
        return 0.0
    return float(np.linalg.norm(m, 2))


def top_singular_triplets(stack: np.ndarray):
    """Top singular value and vectors for each matrix in a ``(B, r, c)`` stack."""
    u, s, vt = np.linalg.svd(stack, full_matrices=False)
    return s[:, 0], u[:, :, 0], vt[:, 0, :]
