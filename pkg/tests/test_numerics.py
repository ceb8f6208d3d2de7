import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitz.numerics import (
    RngStream,
    binomial_tail,
    clopper_pearson_lower,
    gaussian_sample,
    phi_inverse,
    power_iteration,
    spectral_norm,
)

from oracles import (
    binomial_tail_enumerate,
    binomial_tail_exact,
    clopper_pearson_oracle,
    normal_cdf_mp,
    normal_quantile_mp,
    sampled_operator_norm,
)


# -- random streams ---------------------------------------------------------

def test_stream_is_reproducible():
    a = RngStream(7, 3).generator().standard_normal(5)
    b = RngStream(7, 3).generator().standard_normal(5)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = RngStream(7, 3).generator().standard_normal(100)
    b = RngStream(7, 4).generator().standard_normal(100)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.3
    assert not np.array_equal(a, b)


def test_stream_rejects_out_of_range_seed():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(1 << 64)


def test_gaussian_zero_sigma():
    assert np.array_equal(gaussian_sample(RngStream(7), 3, 0.0), np.zeros(3))


def test_gaussian_mean():
    n = 10**6
    draws = gaussian_sample(RngStream(1), n, 1.0)
    assert abs(draws.mean()) < 4 / math.sqrt(n)
    assert abs(draws.mean()) < 0.01


def test_gaussian_variance():
    draws = gaussian_sample(RngStream(2), 10**6, 0.5)
    assert draws.var() == pytest.approx(0.25, abs=0.005)


def test_gaussian_negative_sigma():
    with pytest.raises(ValueError):
        gaussian_sample(RngStream(0), 3, -1.0)


# -- normal quantile ----------------------------------------------------------

def test_phi_inverse_median():
    assert phi_inverse(0.5) == 0.0


def test_phi_inverse_975():
    # mpmath bisection gives 1.959963984540054...
    assert phi_inverse(0.975) == pytest.approx(1.9599639845, abs=1e-9)
    assert phi_inverse(0.975) == pytest.approx(normal_quantile_mp(0.975), abs=1e-12)


def test_phi_inverse_of_phi_one():
    assert phi_inverse(0.8413447461) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("p", [1e-12, 1e-9, 1e-6, 0.001, 0.02425, 0.1, 0.3, 0.7, 0.97575, 0.999,
                               1 - 1e-6, 1 - 1e-9, 1 - 1e-12])
def test_phi_inverse_matches_oracle(p):
    assert abs(phi_inverse(p) - normal_quantile_mp(p)) <= 1e-9


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_phi_inverse_domain(p):
    with pytest.raises(ValueError):
        phi_inverse(p)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-6, max_value=6))
def test_phi_inverse_inverts_cdf(x):
    p = normal_cdf_mp(x)
    if 0 < p < 1:
        assert phi_inverse(p) == pytest.approx(x, abs=1e-7)


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=1e-12, max_value=1 - 1e-12))
def test_phi_inverse_antisymmetric(p):
    # use the rounded partner q so that (q, 1 - q) is an exactly complementary pair
    q = 1 - p
    assert phi_inverse(1 - q) == pytest.approx(-phi_inverse(q), abs=1e-12)


# -- binomial tail and Clopper-Pearson ---------------------------------------

def test_binomial_tail_trivial():
    assert binomial_tail(10, 0.0, 1) == 0.0
    assert binomial_tail(10, 1.0, 10) == 1.0


def test_binomial_tail_enumeration():
    assert binomial_tail(4, 0.5, 2) == pytest.approx(11 / 16, abs=1e-15)
    assert binomial_tail_enumerate(4, 0.5, 2) == pytest.approx(11 / 16, abs=1e-15)


@pytest.mark.parametrize("n,p,k", [(12, 0.3, 4), (12, 0.9, 12), (50, 0.55, 30), (1000, 0.9, 905)])
def test_binomial_tail_matches_exact_sum(n, p, k):
    assert binomial_tail(n, p, k) == pytest.approx(binomial_tail_exact(n, p, k), rel=1e-10, abs=1e-300)


def test_binomial_tail_against_enumeration_small():
    for k in range(9):
        assert binomial_tail(8, 0.37, k) == pytest.approx(binomial_tail_enumerate(8, 0.37, k), abs=1e-13)


def test_cp_zero_successes():
    assert clopper_pearson_lower(0, 100, 0.001) == 0.0


def test_cp_all_successes():
    # closed form: p^n = alpha
    assert clopper_pearson_lower(100, 100, 0.001) == pytest.approx(0.9332543, abs=1e-6)
    assert clopper_pearson_lower(100, 100, 0.001) == pytest.approx(0.001 ** 0.01, abs=1e-12)


def test_cp_interior_value():
    v = clopper_pearson_lower(80, 100, 0.05)
    assert binomial_tail_exact(100, v, 80) == pytest.approx(0.05, abs=1e-6)
    assert v == pytest.approx(clopper_pearson_oracle(80, 100, 0.05), abs=1e-12)


@pytest.mark.parametrize("k,n,alpha", [(-1, 10, 0.1), (11, 10, 0.1), (1, 0, 0.1), (5, 10, 0.0), (5, 10, 1.0)])
def test_cp_domain(k, n, alpha):
    with pytest.raises(ValueError):
        clopper_pearson_lower(k, n, alpha)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.data())
def test_cp_monotone_in_k(n, data):
    k = data.draw(st.integers(0, n - 1))
    alpha = data.draw(st.sampled_from([0.001, 0.01, 0.05, 0.2]))
    lo, hi = clopper_pearson_lower(k, n, alpha), clopper_pearson_lower(k + 1, n, alpha)
    assert lo <= hi
    assert hi <= (k + 1) / n


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.data())
def test_cp_nonincreasing_in_alpha(n, data):
    k = data.draw(st.integers(0, n))
    assert clopper_pearson_lower(k, n, 0.001) <= clopper_pearson_lower(k, n, 0.05)


def test_cp_coverage():
    rng = np.random.default_rng(11)
    trials, n, p, alpha = 10**4, 1000, 0.9, 0.05
    ks = rng.binomial(n, p, size=trials)
    misses = sum(clopper_pearson_lower(int(k), n, alpha) > p for k in ks)
    assert misses / trials <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / trials)


# -- spectral norm ------------------------------------------------------------

def test_spectral_norm_diagonal():
    assert spectral_norm(np.diag([2.0, 2.0, 1.0])) == pytest.approx(2.0, abs=1e-9)


def test_spectral_norm_identity():
    assert spectral_norm(np.eye(5)) == pytest.approx(1.0, abs=1e-12)


def test_spectral_norm_zero():
    assert spectral_norm(np.zeros((3, 4))) == 0.0


def test_spectral_norm_dominates_sampling():
    rng = np.random.default_rng(5)
    m = rng.standard_normal((8, 8))
    est = spectral_norm(m, max_iters=1000, tol=1e-12)
    assert est >= sampled_operator_norm(m, 10**5, rng) - 1e-6
    assert est == pytest.approx(np.linalg.norm(m, 2), rel=1e-9)


def test_power_iteration_vectors():
    rng = np.random.default_rng(6)
    m = rng.standard_normal((5, 7))
    sigma, u, v = power_iteration(m, max_iters=2000, tol=1e-14)
    assert np.allclose(m @ v, sigma * u, atol=1e-8)
    assert np.linalg.norm(u) == pytest.approx(1.0)
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_power_iteration_deterministic():
    m = np.random.default_rng(8).standard_normal((6, 6))
    assert spectral_norm(m, 3, rng=RngStream(4)) == spectral_norm(m, 3, rng=RngStream(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 6), st.integers(2, 6))
def test_spectral_norm_probe_bound(seed, r, c):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((r, c))
    v = rng.standard_normal(c)
    est = spectral_norm(m, max_iters=2000, tol=1e-13)
    assert est >= np.linalg.norm(m @ v) / np.linalg.norm(v) - 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 6), st.integers(2, 6))
def test_appending_row_never_decreases_norm(seed, r, c):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((r, c))
    bigger = np.vstack([m, rng.standard_normal(c)])
    assert spectral_norm(bigger, 2000, 1e-13) >= spectral_norm(m, 2000, 1e-13) - 1e-9
