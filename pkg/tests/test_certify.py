import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitz.certify import (
    GammaSearchConfig,
    SplitzCertificate,
    calibrate_mean_lipschitz,
    certify_splitz,
    inflate,
    optimize_gamma_binary,
    optimize_gamma_onestep,
    soundness_attack,
    splitz_radius_at_gamma,
)
from splitz.lipschitz import local_lipschitz_bound
from splitz.network import AffineLayer, Network
from splitz.numerics import RngStream
from splitz.smoothing import ABSTAIN, certify_smoothing

from conftest import linear_left_net, random_net
from oracles import normal_quantile_mp

X0 = np.zeros(3)


def decided_net(norm=1.0):
    """linear_left_net with a logit bias so large that class 0 always wins."""
    base = linear_left_net(norm)
    w2 = base.layers[1]
    return Network([base.layers[0], AffineLayer(w2.weight, [1e6, 0.0])], split_index=1)


def binary_cfg(**kw):
    return GammaSearchConfig(mode="binary", **kw)


def test_radius_at_gamma_examples():
    net = linear_left_net(0.5)
    assert splitz_radius_at_gamma(net, X0, 2.0, 1.0) == pytest.approx(2.0)
    assert splitz_radius_at_gamma(net, X0, 1.0, 1.0) == pytest.approx(1.0)
    assert splitz_radius_at_gamma(net, X0, 3.0, 1.0) == pytest.approx(2.0)
    assert splitz_radius_at_gamma(net, X0, 1.0, 0.0) == 0.0


@pytest.mark.parametrize("norm,want", [(0.5, 2.0), (1.0, 1.0), (2.0, 0.5)])
def test_binary_constant_bound(norm, want):
    cfg = binary_cfg()
    gamma, bound = optimize_gamma_binary(linear_left_net(norm), X0, 1.0, cfg)
    assert abs(gamma - want) <= cfg.tol
    assert bound == pytest.approx(norm, rel=1e-12)
    assert min(1.0 / bound, gamma) == pytest.approx(want, rel=1e-12)


def test_binary_zero_rs_returns_lower_end():
    cfg = binary_cfg()
    gamma, _ = optimize_gamma_binary(linear_left_net(1.0), X0, 0.0, cfg)
    assert gamma == cfg.gamma_lo
    assert splitz_radius_at_gamma(linear_left_net(1.0), X0, gamma, 0.0) == 0.0


def test_binary_saturates_at_upper_end():
    cfg = binary_cfg(gamma_hi=2.0)
    gamma, _ = optimize_gamma_binary(linear_left_net(0.1), X0, 1.0, cfg)
    assert gamma == 2.0


@pytest.mark.parametrize("norm", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("calibration", [0.3, 1.0, 4.0])
def test_one_step_exact_on_constant_bound(norm, calibration):
    cfg = GammaSearchConfig(calibration_mean_lipschitz=calibration)
    gamma, bound = optimize_gamma_onestep(linear_left_net(norm), X0, 1.0, cfg)
    assert gamma == pytest.approx(1.0 / norm, rel=1e-12)
    assert bound == pytest.approx(norm, rel=1e-12)


def test_one_step_requires_calibration():
    with pytest.raises(ValueError):
        optimize_gamma_onestep(linear_left_net(1.0), X0, 1.0, GammaSearchConfig())


def test_calibration_mean():
    net = linear_left_net(2.0)
    assert calibrate_mean_lipschitz(net, np.zeros((4, 3))) == pytest.approx(2.0)


@pytest.mark.parametrize("kw", [dict(mode="grid"), dict(gamma_lo=2.0, gamma_hi=1.0), dict(tol=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        GammaSearchConfig(**kw)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 3.0))
def test_search_results_are_valid_radii(seed, rs):
    rng = np.random.default_rng(seed)
    net = random_net(rng, [3, 6, 5, 2], split_index=2, scale=1.5)
    x = rng.standard_normal(3)
    for gamma, bound in (
        optimize_gamma_binary(net, x, rs, binary_cfg()),
        optimize_gamma_onestep(net, x, rs, GammaSearchConfig(calibration_mean_lipschitz=1.0)),
    ):
        radius = min(rs / bound if bound else np.inf, gamma)
        assert radius <= gamma
        assert radius * bound <= rs + 1e-9
        assert bound == local_lipschitz_bound(net, x, gamma).bound
        assert radius == pytest.approx(splitz_radius_at_gamma(net, x, gamma, rs), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 3.0))
def test_one_step_never_beats_binary_by_more_than_tol(seed, rs):
    rng = np.random.default_rng(seed)
    net = random_net(rng, [3, 6, 5, 2], split_index=2, scale=1.5)
    x = rng.standard_normal(3)
    cfg = binary_cfg()
    g_b, _ = optimize_gamma_binary(net, x, rs, cfg)
    g_o, _ = optimize_gamma_onestep(net, x, rs, GammaSearchConfig(calibration_mean_lipschitz=1.0))
    r_b = splitz_radius_at_gamma(net, x, g_b, rs)
    r_o = splitz_radius_at_gamma(net, x, min(max(g_o, cfg.gamma_lo), cfg.gamma_hi), rs)
    assert r_o <= r_b + cfg.tol


def test_pipeline_on_decided_net():
    net = decided_net(1.0)
    want = 0.5 * normal_quantile_mp(0.001 ** 0.01)  # 0.750237512...
    cert = certify_splitz(net, X0, 0.5, 10, 100, 0.001, binary_cfg(), RngStream(0))
    assert cert.prediction == 0
    assert cert.p_a_lower == pytest.approx(0.9332543, abs=1e-6)
    assert cert.rs_radius == pytest.approx(want, abs=1e-9)
    assert cert.lipschitz_bound == pytest.approx(1.0, rel=1e-12)
    assert cert.splitz_radius == pytest.approx(want, abs=1e-4)
    one = certify_splitz(net, X0, 0.5, 10, 100, 0.001,
                         GammaSearchConfig(calibration_mean_lipschitz=1.0), RngStream(0))
    assert one.splitz_radius == pytest.approx(want, abs=1e-9)


def test_split_zero_is_plain_smoothing():
    rng = np.random.default_rng(3)
    net = random_net(rng, [3, 6, 3], split_index=0, scale=2.0)
    for i in range(5):
        x = rng.standard_normal(3)
        cert = certify_splitz(net, x, 0.3, 20, 500, 0.01, binary_cfg(), RngStream(i))
        plain = certify_smoothing(net, x, 20, 500, 0.3, 0.01, RngStream(i))
        if plain.abstained:
            assert cert.abstained
            continue
        assert cert.prediction == plain.top_class
        assert cert.splitz_radius == plain.rs_radius
        assert cert.gamma_star == plain.rs_radius and cert.lipschitz_bound == 1.0


def test_abstain_certificate():
    # class 0 and 1 logits tie except for noise: sum(h) vs -sum(h) with h near 0
    net = Network([AffineLayer(np.zeros((3, 3)), np.zeros(3)),
                   AffineLayer([[1.0, 0, 0], [-1.0, 0, 0]], [0.0, 0.0])], split_index=1)
    cert = certify_splitz(net, X0, 1.0, 100, 1000, 0.001, binary_cfg(), RngStream(5))
    assert cert.abstained and cert.prediction == ABSTAIN
    assert cert.splitz_radius == 0.0 and cert.rs_radius == 0.0


def test_attack_skips_empty_certificate():
    net = decided_net()
    cert = SplitzCertificate(0, 0.9, 0.0, 0.001, 1.0, 0.0)
    assert soundness_attack(net, X0, cert, 10, RngStream(0), sigma=0.5) == 0
    abstain = SplitzCertificate(ABSTAIN, 0.4, 0.0, 0.0, 0.0, 0.0)
    assert soundness_attack(net, X0, abstain, 10, RngStream(0), sigma=0.5) == 0


def _half_plane_net():
    # 1-D input; class 1 wins when x > 0 (up to noise). Left half is the identity-like layer.
    return Network([AffineLayer([[0.2]], [0.5]), AffineLayer([[-1.0], [1.0]], [0.5, -0.5])],
                   split_index=1)


def test_attack_respects_true_certificate_and_catches_inflated():
    net = _half_plane_net()
    x = np.array([-1.0])
    cert = certify_splitz(net, x, 0.1, 100, 2000, 0.001, binary_cfg(), RngStream(1))
    assert cert.prediction == 0 and cert.splitz_radius > 0
    assert soundness_attack(net, x, cert, 5, RngStream(2), sigma=0.1, n_samples=4000) == 0
    big = inflate(cert, 10.0)
    assert big.splitz_radius == pytest.approx(10 * cert.splitz_radius)
    assert soundness_attack(net, x, big, 5, RngStream(2), sigma=0.1, n_samples=4000) >= 1
