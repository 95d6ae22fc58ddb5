import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import crandn
from nlprecode.bussgang import (LinkMetrics, NoiseSpec, PrecodingMatrix, bussgang_mc, distortion_cov, gain_matrix,
                                input_cov, output_power_analytic, output_power_mc, snidr_analytic, snidr_mc,
                                sum_rate, sum_rate_analytic)
from nlprecode.errors import NegativeSnidr
from nlprecode.pa import THIRD_ORDER_M3DB, IboSpec, LinearPa, PolynomialPa, RappPa, appendix_coeffs, fit_polynomial
from nlprecode.precoders import zf, zf_alpha

LINEAR = PolynomialPa([1.0])
PA11 = appendix_coeffs(-3.0)


def test_input_cov_identity():
    assert np.allclose(input_cov(np.eye(3)), np.eye(3))


def test_input_cov_rank_one(rng):
    w = crandn(rng, 4, 1)
    C = input_cov(w)
    assert np.allclose(C, w @ w.conj().T)
    assert np.linalg.matrix_rank(C) == 1


def test_input_cov_hermitian_psd(rng):
    C = input_cov(crandn(rng, 5, 3))
    assert np.allclose(C, C.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(C).min() > -1e-12


def test_gain_linear_is_identity(rng):
    assert np.allclose(gain_matrix(crandn(rng, 4, 2), LINEAR), np.eye(4))


def test_gain_third_order_formula():
    w = np.array([[np.sqrt(0.7)]])
    b1, b3 = THIRD_ORDER_M3DB.coeffs
    assert gain_matrix(w, THIRD_ORDER_M3DB)[0, 0] == pytest.approx(b1 + 2 * b3 * 0.7, rel=1e-12)


@pytest.mark.parametrize("pa,p", [(THIRD_ORDER_M3DB, 0.7), (PA11, 1.0)])
def test_gain_matches_monte_carlo(pa, p):
    w = np.array([[np.sqrt(p)]])
    g_mc, _ = bussgang_mc(w, pa, n_mc=1 << 20, seed=3)
    g = gain_matrix(w, pa)[0, 0]
    assert abs(g - g_mc[0]) / abs(g_mc[0]) < 0.01


def test_distortion_linear_is_zero(rng):
    assert np.allclose(distortion_cov(crandn(rng, 4, 2), LINEAR), 0)


def test_distortion_scalar_third_order():
    p = 0.8
    Ce = distortion_cov(np.array([[np.sqrt(p)]]), THIRD_ORDER_M3DB)
    b3 = THIRD_ORDER_M3DB.coeffs[1]
    assert Ce[0, 0].real == pytest.approx(2 * abs(b3) ** 2 * p**3, rel=1e-12)
    _, Ce_mc = bussgang_mc(np.array([[np.sqrt(p)]]), THIRD_ORDER_M3DB, n_mc=1 << 20, seed=1)
    assert abs(Ce[0, 0] - Ce_mc[0, 0]) / abs(Ce_mc[0, 0]) < 0.02


def test_distortion_matches_monte_carlo_eleventh_order(rng):
    W = crandn(rng, 2, 2) * 0.8
    Ce = distortion_cov(W, PA11)
    _, Ce_mc = bussgang_mc(W, PA11, n_mc=1 << 20, seed=5)
    assert np.linalg.norm(Ce - Ce_mc) / np.linalg.norm(Ce_mc) < 0.02


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4))
def test_distortion_hermitian_psd(seed, M, K):
    r = np.random.default_rng(seed)
    W = crandn(r, M, K)
    Ce = distortion_cov(W, PA11)
    assert np.allclose(Ce, Ce.conj().T, atol=1e-9 * max(1.0, np.abs(Ce).max()))
    assert np.linalg.eigvalsh(Ce).min() >= -1e-9 * np.real(np.trace(Ce))


def test_snidr_linear_zf(rng):
    H = crandn(rng, 8, 2)
    W = zf(H, 8.0)
    alpha = zf_alpha(H, 8.0)
    m = snidr_analytic(H, W, LINEAR, NoiseSpec(0.1))
    assert np.allclose(m.snidr, alpha**2 / 0.1, rtol=1e-9)
    assert m.sum_rate == pytest.approx(2 * np.log2(1 + alpha**2 / 0.1), rel=1e-9)


def test_snidr_vanishes_with_huge_noise(rng):
    H = crandn(rng, 4, 2)
    m = snidr_analytic(H, zf(H, 4.0), PA11, NoiseSpec(1e12))
    assert np.all(m.snidr < 1e-10) and m.sum_rate < 1e-9


def test_snidr_matches_monte_carlo(rng):
    H = crandn(rng, 4, 2)
    W = zf(H, 4.0)
    noise = NoiseSpec(0.05)
    a = snidr_analytic(H, W, PA11, noise)
    b = snidr_mc(H, W, PA11, noise, n_mc=1 << 20, seed=2)
    assert np.all(np.abs(a.snidr - b.snidr) / b.snidr < 0.02)


def test_snidr_mc_linear_matches_analytic(rng):
    H = crandn(rng, 4, 2)
    W = zf(H, 4.0)
    noise = NoiseSpec(0.1)
    a = snidr_analytic(H, W, LINEAR, noise)
    b = snidr_mc(H, W, LinearPa(), noise, n_mc=1 << 20, seed=2)
    assert np.all(np.abs(a.snidr - b.snidr) / a.snidr < 0.01)


def _rapp_vs_fit(rng):
    spec = IboSpec(-3.0, 1.0)
    rapp = RappPa(10**0.3)
    fit = fit_polynomial(rapp, spec, 5)
    H = crandn(rng, 8, 2)
    W = zf(H, 8.0)
    noise = NoiseSpec(8e-3)
    return snidr_mc(H, W, rapp, noise, n_mc=1 << 18, seed=1), snidr_analytic(H, W, fit, noise)


@pytest.mark.xfail(strict=True, reason="the polynomial underestimates Rapp distortion by about 30% at 30 dB; "
                                       "the published coefficients show the same gap")
def test_snidr_mc_rapp_vs_fit(rng):
    a, b = _rapp_vs_fit(rng)
    assert np.all(np.abs(a.snidr - b.snidr) / a.snidr < 0.05)


def test_sum_rate_rapp_vs_fit(rng):
    a, b = _rapp_vs_fit(rng)
    assert abs(a.sum_rate - b.sum_rate) / a.sum_rate < 0.10


def test_snidr_mc_zero_precoder(rng):
    m = snidr_mc(crandn(rng, 3, 2), np.zeros((3, 2)), PA11, NoiseSpec(1.0), n_mc=2000)
    assert np.all(m.snidr == 0)


def test_snidr_mc_warns_on_few_samples(rng):
    with pytest.warns(RuntimeWarning):
        snidr_mc(crandn(rng, 3, 1), crandn(rng, 3, 1), LinearPa(), NoiseSpec(1.0), n_mc=100)


def test_snidr_mc_reproducible(rng):
    H, W = crandn(rng, 3, 2), crandn(rng, 3, 2)
    a = snidr_mc(H, W, PA11, NoiseSpec(0.1), n_mc=5000, seed=9)
    b = snidr_mc(H, W, PA11, NoiseSpec(0.1), n_mc=5000, seed=9)
    assert np.array_equal(a.snidr, b.snidr)


@pytest.mark.parametrize("snidr,expected", [([1, 1], 2.0), ([3], 2.0), ([0, 0, 0, 0], 0.0)])
def test_sum_rate_examples(snidr, expected):
    assert sum_rate(snidr) == expected


def test_sum_rate_negative():
    with pytest.raises(NegativeSnidr):
        sum_rate([1.0, -0.1])


@given(st.integers(0, 10_000))
def test_user_permutation_covariance(seed):
    r = np.random.default_rng(seed)
    H, W = crandn(r, 5, 3), crandn(r, 5, 3)
    perm = r.permutation(3)
    a = snidr_analytic(H, W, PA11, NoiseSpec(0.3))
    b = snidr_analytic(H[:, perm], W[:, perm], PA11, NoiseSpec(0.3))
    assert np.allclose(b.snidr, a.snidr[perm], rtol=1e-10)
    assert b.sum_rate == pytest.approx(a.sum_rate, rel=1e-12)


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3), st.floats(1.0, 100.0))
def test_sum_rate_monotone_in_noise(seed, s2, c):
    r = np.random.default_rng(seed)
    H, W = crandn(r, 4, 2), crandn(r, 4, 2)
    assert sum_rate_analytic(H, W, PA11, s2 * c) <= sum_rate_analytic(H, W, PA11, s2) + 1e-12


def test_batched_sum_rate_matches_loop(rng):
    H, W = crandn(rng, 3, 4, 2), crandn(rng, 3, 4, 2)
    batched = sum_rate_analytic(H, W, PA11, 0.2)
    single = [snidr_analytic(h, w, PA11, NoiseSpec(0.2)).sum_rate for h, w in zip(H, W)]
    assert np.allclose(batched, single, rtol=1e-12)


def test_output_power_analytic_vs_mc(rng):
    W = crandn(rng, 3, 2) * 0.7
    a = output_power_analytic(W, PA11)
    b = output_power_mc(W, PA11, n_mc=1 << 19, seed=4)
    assert np.allclose(a, b, rtol=0.01)


def test_noise_spec():
    assert NoiseSpec.from_snr_db(16.0, 20.0).sigma2 == pytest.approx(0.16)
    with pytest.raises(ValueError):
        NoiseSpec(0.0)


def test_precoding_matrix_power_budget():
    PrecodingMatrix(np.eye(2), 2.0)
    with pytest.raises(ValueError):
        PrecodingMatrix(np.eye(2), 1.0)


def test_link_metrics_serialisation(rng):
    H = crandn(rng, 4, 2)
    m = snidr_analytic(H, zf(H, 4.0), PA11, NoiseSpec(0.1))
    d = json.loads(m.to_json())
    assert len(d["per_user"]) == 2
    assert d["sum_rate"] == pytest.approx(m.sum_rate)
    row = m.csv_row(ibo_db=-3.0)
    assert set(row) == {"ibo_db", "sum_rate", "snidr_0", "snidr_1"}
    assert isinstance(m, LinkMetrics)
