"""Local Lipschitz upper bounds for the left half of a split network.

Around an input ``x`` and an l2 ball of radius ``gamma``, interval bounds on
each pre-activation tell which clipped-ReLU units can change their output.
Units that cannot change contribute nothing to the Jacobian, so the rows
and columns they own are masked out of the weight matrices before taking
spectral norms. The product of those reduced norms bounds the Lipschitz
constant of ``f_L`` over the ball.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network, forward_left
from .numerics import as_generator, exact_spectral_norm, power_iteration, top_singular_triplets


@dataclass
class LayerBounds:
    """Pre-activation bounds for each affine layer of ``f_L``."""

    lower: list[np.ndarray]
    upper: list[np.ndarray]
    gamma: float

    def __len__(self):
        return len(self.lower)


@dataclass
class LipschitzCertificate:
    gamma: float
    bound: float
    per_layer_norms: list[float]
    identity: bool = False  # f_L is the identity map (split_index 0)


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input must have {net.input_dim} features, got shape {x.shape}")
    return x


def _propagate(net: Network, x: np.ndarray, gamma, n_layers: int):
    # x is (B, d); gamma is a scalar or a (B,) array
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("gamma must be nonnegative")
    lowers, uppers = [], []
    theta = net.clip_threshold
    for k in range(n_layers):
        layer = net.layers[k]
        w = layer.weight
        if k == 0:
            center = x @ w.T + layer.bias
            radius = np.linalg.norm(w, axis=1)[None, :] * np.reshape(gamma, (-1, 1))
            lo, hi = center - radius, center + radius
        else:
            a_lo = np.clip(lowers[-1], 0.0, theta)
            a_hi = np.clip(uppers[-1], 0.0, theta)
            w_pos, w_neg = np.maximum(w, 0.0), np.minimum(w, 0.0)
            lo = a_lo @ w_pos.T + a_hi @ w_neg.T + layer.bias
            hi = a_hi @ w_pos.T + a_lo @ w_neg.T + layer.bias
        lowers.append(lo)
        uppers.append(hi)
    return lowers, uppers


def interval_propagate(net: Network, x, gamma: float, n_layers: int | None = None) -> LayerBounds:
    """Sound pre-activation bounds for every ``x'`` with ``||x' - x||_2 <= gamma``.

    The first layer uses exact row-norm bounds for the l2 ball; later layers
    use interval arithmetic on the clipped box. Covers the ``split_index``
    layers of ``f_L`` unless ``n_layers`` says otherwise.
    """
    x = _check_input(net, x)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    n = net.split_index if n_layers is None else n_layers
    lowers, uppers = _propagate(net, x[None, :], gamma, n)
    return LayerBounds([l[0] for l in lowers], [u[0] for u in uppers], float(gamma))


def indicator_matrices(bounds: LayerBounds, theta_act: float) -> list[np.ndarray]:
    """0/1 diagonals marking units whose clipped output varies over the ball."""
    return [((u > 0.0) & (l < theta_act)).astype(float)
            for l, u in zip(bounds.lower, bounds.upper)]


def reduced_matrices(net: Network, masks: list[np.ndarray]) -> list[np.ndarray]:
    """Weight matrices of ``f_L`` with frozen rows and columns zeroed.

    Layer ``k`` keeps the columns of units varying at layer ``k-1`` and, when
    it is followed by an activation, only the rows of its own varying units.
    Works on single masks ``(n_k,)`` or batched masks ``(B, n_k)``.
    """
    out = []
    for k in range(net.split_index):
        w = net.layers[k].weight
        m = w
        if k > 0:
            m = m * masks[k - 1][..., None, :]
        if k < net.depth - 1:
            m = m * masks[k][..., :, None]
        out.append(m)
    return out


def _norm(m: np.ndarray, power_iters: int | None) -> float:
    if power_iters is None:
        return exact_spectral_norm(m)
    return power_iteration(m, max_iters=power_iters, tol=0.0)[0]


def local_lipschitz_bound(net: Network, x, gamma: float,
                          power_iters: int | None = None) -> LipschitzCertificate:
    """Upper bound on the ``gamma``-local Lipschitz constant of ``f_L`` at ``x``.

    Spectral norms come from a full SVD by default; a certificate built on
    truncated power iteration (``power_iters``) can underestimate.
    """
    if net.split_index == 0:
        return LipschitzCertificate(float(gamma), 1.0, [], identity=True)
    n_masked = min(net.split_index, net.depth - 1)
    bounds = interval_propagate(net, x, gamma, n_masked)
    masks = indicator_matrices(bounds, net.clip_threshold)
    norms = [_norm(m, power_iters) for m in reduced_matrices(net, masks)]
    return LipschitzCertificate(float(gamma), float(np.prod(norms)), norms)


@dataclass
class BatchLipschitz:
    """Per-example factors of the reduced-norm product, for training."""

    bounds: np.ndarray          # (B,)
    norms: np.ndarray           # (B, s)
    left: list[np.ndarray]      # top left singular vectors per factor, (B, out_k)
    right: list[np.ndarray]     # top right singular vectors per factor, (B, in_k)
    masks: list[np.ndarray]     # (B, n_k) indicators for the masked layers


def batch_local_lipschitz(net: Network, xs, gamma: float,
                          power_iters: int | None = None) -> BatchLipschitz:
    """Vectorized :func:`local_lipschitz_bound` keeping singular vectors.

    With ``power_iters`` set, each factor is estimated by that many power
    iterations per example instead of an SVD.
    """
    xs = _check_input(net, np.atleast_2d(xs))
    batch = xs.shape[0]
    s = net.split_index
    if s == 0:
        return BatchLipschitz(np.ones(batch), np.ones((batch, 0)), [], [], [])
    n_masked = min(s, net.depth - 1)
    lowers, uppers = _propagate(net, xs, gamma, n_masked)
    theta = net.clip_threshold
    masks = [((u > 0.0) & (l < theta)).astype(float) for l, u in zip(lowers, uppers)]
    norms, left, right = [], [], []
    for k, m in enumerate(reduced_matrices(net, masks)):
        if m.ndim == 2:
            m = np.broadcast_to(m, (batch, *m.shape))
        if power_iters is None:
            sv, u, v = top_singular_triplets(m)
        else:
            sv, u, v = _batched_power(m, power_iters)
        norms.append(sv)
        left.append(u)
        right.append(v)
    norms = np.stack(norms, axis=1)
    return BatchLipschitz(np.prod(norms, axis=1), norms, left, right, masks)


def _batched_power(m: np.ndarray, iters: int):
    batch, rows, cols = m.shape
    v = np.ones((batch, cols)) / np.sqrt(cols)
    for _ in range(max(iters, 1)):
        w = np.einsum("bij,bi->bj", m, np.einsum("bij,bj->bi", m, v))
        n = np.linalg.norm(w, axis=1, keepdims=True)
        v = np.where(n > 0, w / np.where(n > 0, n, 1.0), v)
    mv = np.einsum("bij,bj->bi", m, v)
    sv = np.linalg.norm(mv, axis=1)
    u = np.where(sv[:, None] > 0, mv / np.where(sv > 0, sv, 1.0)[:, None], 0.0)
    return sv, u, v


def global_lipschitz_bound(net: Network) -> float:
    """Product of full spectral norms over the layers of ``f_L``."""
    return float(np.prod([exact_spectral_norm(l.weight) for l in net.layers[: net.split_index]]))


def per_layer_norms(net: Network) -> list[float]:
    """Spectral norm of every affine layer of the whole network, in order."""
    return [exact_spectral_norm(l.weight) for l in net.layers]


def sample_ball(rng, center: np.ndarray, radius: float, size: int) -> np.ndarray:
    """Uniform samples from the l2 ball of ``radius`` around ``center``."""
    gen = as_generator(rng)
    d = center.shape[0]
    direction = gen.standard_normal((size, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    scale = radius * gen.random(size) ** (1.0 / d)
    return center + direction * scale[:, None]


def brute_force_local_lipschitz(net: Network, x, gamma: float, samples: int, rng) -> float:
    """Largest sampled difference quotient of ``f_L`` inside ``B(x, gamma)``.

    Half the pairs are independent points of the ball; the other half are
    close neighbours, which probe directional derivatives. The result is a
    lower bound on the true local Lipschitz constant.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    x = _check_input(net, x)
    gen = as_generator(rng)
    first = sample_ball(gen, x, gamma, samples)
    second = sample_ball(gen, x, gamma, samples)
    n_close = samples // 2
    if n_close:
        # shrink so the neighbour stays inside the ball
        first[:n_close] = x + (first[:n_close] - x) * (1.0 - 1e-4)
        step = gen.standard_normal((n_close, x.shape[0]))
        step *= (1e-4 * max(gamma, 1e-12)) / np.linalg.norm(step, axis=1, keepdims=True)
        second[:n_close] = first[:n_close] + step
    dx = np.linalg.norm(first - second, axis=1)
    df = np.linalg.norm(forward_left(net, first) - forward_left(net, second), axis=1)
    keep = dx > 0
    if not np.any(keep):
        return 0.0
    return float(np.max(df[keep] / dx[keep]))
