"""Monte-Carlo randomized smoothing of the right half ``f_R``.

Gaussian noise is added to the hidden representation ``h = f_L(x)``, never
to the raw input (unless the split index is 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network, forward_left, forward_right
from .numerics import as_generator, clopper_pearson_lower, phi_inverse

ABSTAIN = -1
_CHUNK = 8192


@dataclass
class SmoothingCertificate:
    top_class: int
    counts: np.ndarray
    p_a_lower: float
    rs_radius: float
    abstained: bool


def sample_counts(net: Network, h, n: int, sigma: float, rng) -> np.ndarray:
    """Class histogram of ``argmax f_R(h + delta)`` over ``n`` noise draws."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    gen = as_generator(rng)
    h = np.asarray(h, dtype=float)
    counts = np.zeros(net.num_classes, dtype=np.int64)
    done = 0
    while done < n:
        size = min(_CHUNK, n - done)
        noisy = h + sigma * gen.standard_normal((size, h.shape[0]))
        labels = np.argmax(forward_right(net, noisy), axis=1)
        counts += np.bincount(labels, minlength=net.num_classes)
        done += size
    return counts


def smooth_predict(net: Network, x, n0: int, sigma: float, rng) -> int:
    """Majority vote of the noisy right half at ``f_L(x)``; ties to the lowest class."""
    counts = sample_counts(net, forward_left(net, x), n0, sigma, rng)
    return int(np.argmax(counts))


def rs_radius(sigma: float, p_a_lower: float) -> float:
    """One-sided smoothing radius ``sigma * Phi^-1(p_a_lower)``; 0 at or below 1/2."""
    if p_a_lower <= 0.5:
        return 0.0
    if p_a_lower >= 1.0:
        raise ValueError("p_a_lower must be below 1")
    return sigma * phi_inverse(p_a_lower)


def rs_radius_two_sided(sigma: float, p_a_lower: float, p_b_upper: float) -> float:
    """``(sigma / 2) * (Phi^-1(p_a_lower) - Phi^-1(p_b_upper))``, floored at 0."""
    for name, p in (("p_a_lower", p_a_lower), ("p_b_upper", p_b_upper)):
        if not 0.0 < p < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {p}")
    return max(0.0, 0.5 * sigma * (phi_inverse(p_a_lower) - phi_inverse(p_b_upper)))


def certify_smoothing(net: Network, x, n0: int, n1: int, sigma: float, alpha: float,
                      rng) -> SmoothingCertificate:
    """Select the top class from ``n0`` draws, then bound its probability from ``n1`` fresh draws."""
    if n0 < 1 or n1 < 1:
        raise ValueError("n0 and n1 must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    gen = as_generator(rng)
    h = forward_left(net, x)
    top = int(np.argmax(sample_counts(net, h, n0, sigma, gen)))
    counts = sample_counts(net, h, n1, sigma, gen)
    p_a_lower = clopper_pearson_lower(int(counts[top]), n1, alpha)
    if p_a_lower <= 0.5:
        return SmoothingCertificate(top, counts, p_a_lower, 0.0, True)
    return SmoothingCertificate(top, counts, p_a_lower, rs_radius(sigma, p_a_lower), False)
