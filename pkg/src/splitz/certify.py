"""Certified radius of the split classifier.

For any ball size ``gamma`` the radius ``min(R / L(gamma), gamma)`` is valid,
where ``R`` is the smoothing radius in hidden space and ``L(gamma)`` the
local Lipschitz bound of ``f_L``. The search over ``gamma`` only decides
which valid radius gets reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .lipschitz import local_lipschitz_bound
from .network import Network, backward, forward_left, forward_right
from .numerics import as_generator, gaussian_sample
from .smoothing import ABSTAIN, certify_smoothing, smooth_predict


@dataclass
class GammaSearchConfig:
    mode: str = "one_step"
    gamma_lo: float = 1e-3
    gamma_hi: float = 10.0
    max_iters: int = 40
    tol: float = 1e-4
    calibration_mean_lipschitz: float | None = None
    initial_gamma: float = 1.0

    def __post_init__(self):
        if self.mode not in ("binary", "one_step"):
            raise ValueError(f"unknown gamma search mode {self.mode!r}")
        if not 0 <= self.gamma_lo < self.gamma_hi:
            raise ValueError("need 0 <= gamma_lo < gamma_hi")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class SplitzCertificate:
    prediction: int
    p_a_lower: float
    rs_radius: float
    gamma_star: float
    lipschitz_bound: float
    splitz_radius: float

    @property
    def abstained(self) -> bool:
        return self.prediction == ABSTAIN


def _ratio(rs: float, bound: float) -> float:
    if rs == 0.0:
        return 0.0
    return math.inf if bound == 0.0 else rs / bound


def splitz_radius_at_gamma(net: Network, x, gamma: float, rs_radius: float) -> float:
    """``min(rs_radius / L(gamma), gamma)`` with ``L`` the local bound at ``x``."""
    if rs_radius < 0:
        raise ValueError("rs_radius must be nonnegative")
    bound = local_lipschitz_bound(net, x, gamma).bound
    return min(_ratio(rs_radius, bound), gamma)


def optimize_gamma_binary(net: Network, x, rs_radius: float, cfg: GammaSearchConfig):
    """Bisect on the sign of ``R / L(gamma) - gamma`` inside the bracket.

    ``L`` is nondecreasing in ``gamma`` so the sign changes once. ``L`` is
    also piecewise constant, and when the crossing falls on a jump the
    search converges to the jump instead of a true fixed point. Returns
    ``(gamma_star, bound_at_gamma_star)``; whichever end of the final bracket
    gives the larger radius is kept.
    """
    lo, hi = cfg.gamma_lo, cfg.gamma_hi
    bound = lambda g: local_lipschitz_bound(net, x, g).bound  # noqa: E731
    b_lo = bound(lo)
    if rs_radius == 0.0:
        return lo, b_lo
    if _ratio(rs_radius, b_lo) <= lo:
        return lo, b_lo
    b_hi = bound(hi)
    if _ratio(rs_radius, b_hi) >= hi:
        return hi, b_hi
    for _ in range(cfg.max_iters):
        if hi - lo <= cfg.tol:
            break
        mid = 0.5 * (lo + hi)
        b_mid = bound(mid)
        if _ratio(rs_radius, b_mid) >= mid:
            lo, b_lo = mid, b_mid
        else:
            hi, b_hi = mid, b_mid
    if min(_ratio(rs_radius, b_hi), hi) > min(_ratio(rs_radius, b_lo), lo):
        return hi, b_hi
    return lo, b_lo


def calibrate_mean_lipschitz(net: Network, xs, gamma: float = 1.0) -> float:
    """Mean local bound over calibration inputs, the one-step starting estimate."""
    xs = np.atleast_2d(xs)
    return float(np.mean([local_lipschitz_bound(net, x, gamma).bound for x in xs]))


def optimize_gamma_onestep(net: Network, x, rs_radius: float, cfg: GammaSearchConfig):
    """Two bound evaluations starting from the calibration mean.

    ``gamma' = R / L_mean``, then ``gamma* = R / L(gamma')`` using this input's
    own bound; both are capped at ``cfg.gamma_hi``. Returns
    ``(gamma_star, bound_at_gamma_star)``.
    """
    if cfg.calibration_mean_lipschitz is None:
        raise ValueError("one-step search needs calibration_mean_lipschitz")
    gamma_1 = min(_ratio(rs_radius, cfg.calibration_mean_lipschitz), cfg.gamma_hi)
    gamma_star = min(_ratio(rs_radius, local_lipschitz_bound(net, x, gamma_1).bound), cfg.gamma_hi)
    return gamma_star, local_lipschitz_bound(net, x, gamma_star).bound


def certify_splitz(net: Network, x, sigma: float, n0: int, n1: int, alpha: float,
                   cfg: GammaSearchConfig, rng) -> SplitzCertificate:
    """Smoothing certificate at ``f_L(x)`` combined with a searched ball size."""
    smooth = certify_smoothing(net, x, n0, n1, sigma, alpha, rng)
    if smooth.abstained:
        return SplitzCertificate(ABSTAIN, smooth.p_a_lower, 0.0, 0.0, 0.0, 0.0)
    rs = smooth.rs_radius
    if net.split_index == 0:
        # identity left half: L = 1 for every ball, best ball is gamma = R
        return SplitzCertificate(smooth.top_class, smooth.p_a_lower, rs, rs, 1.0, rs)
    if cfg.mode == "binary":
        gamma_star, bound = optimize_gamma_binary(net, x, rs, cfg)
    else:
        gamma_star, bound = optimize_gamma_onestep(net, x, rs, cfg)
    radius = min(_ratio(rs, bound), gamma_star)
    return SplitzCertificate(smooth.top_class, smooth.p_a_lower, rs, gamma_star, bound, radius)


def margin_direction(net: Network, x, target: int, sigma: float, rng, samples: int = 256) -> np.ndarray:
    """Unit input direction that most decreases the noisy margin of ``target``.

    Averages the input gradient of ``runner_up - target`` logits over noise
    draws at the split point.
    """
    gen = as_generator(rng)
    noise = gaussian_sample(gen, net.hidden_dim, sigma, size=samples)
    xs = np.repeat(np.asarray(x, dtype=float)[None, :], samples, axis=0)
    logits = forward_right(net, forward_left(net, xs) + noise)
    masked = logits.copy()
    masked[:, target] = -np.inf
    runner_up = np.argmax(masked, axis=1)
    g = np.zeros_like(logits)
    g[np.arange(samples), runner_up] = 1.0
    g[:, target] -= 1.0
    direction = backward(net, xs, g, split_noise=noise).inputs.sum(axis=0)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        direction = gen.standard_normal(direction.shape)
        norm = np.linalg.norm(direction)
    return direction / norm


def soundness_attack(net: Network, x, certificate: SplitzCertificate, grid_points: int, rng, *,
                     sigma: float, n_samples: int = 20000, radius_scale: float = 0.99) -> int:
    """Count smoothed-prediction flips at ``radius_scale * splitz_radius``.

    The first probe follows the margin gradient, the rest point in random
    directions. Every probe reuses one noise seed, so flips are not
    artefacts of independent Monte-Carlo error between probes.
    """
    if certificate.abstained or certificate.splitz_radius <= 0.0 or grid_points < 1:
        return 0
    gen = as_generator(rng)
    vote_seed = int(gen.integers(0, 2**63))
    x = np.asarray(x, dtype=float)
    eps = radius_scale * certificate.splitz_radius
    directions = [margin_direction(net, x, certificate.prediction, sigma, gen)]
    for _ in range(grid_points - 1):
        d = gen.standard_normal(x.shape[0])
        directions.append(d / np.linalg.norm(d))
    flips = 0
    for d in directions:
        vote_rng = np.random.Generator(np.random.Philox(key=vote_seed))
        if smooth_predict(net, x + eps * d, n_samples, sigma, vote_rng) != certificate.prediction:
            flips += 1
    return flips


def inflate(certificate: SplitzCertificate, factor: float) -> SplitzCertificate:
    """Copy of a certificate with its radius scaled, for negative controls."""
    return replace(certificate, splitz_radius=certificate.splitz_radius * factor)
