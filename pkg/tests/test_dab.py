import numpy as np
import pytest

from conftest import crandn
from nlprecode.bussgang import NoiseSpec, output_power_analytic, output_power_mc, sum_rate_analytic
from nlprecode.dab import DabConfig, dab_precode, fd_gradient, project_output_power
from nlprecode.errors import NoBracket
from nlprecode.pa import THIRD_ORDER_M3DB, PolynomialPa, SoftLimiterPa, appendix_coeffs
from nlprecode.precoders import z3ro, zf

LINEAR = PolynomialPa([1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        DabConfig(restarts=0)
    with pytest.raises(ValueError):
        DabConfig(fd_delta=0.0)
    with pytest.raises(ValueError):
        DabConfig(step="newton")


def test_fd_gradient_quadratic(rng):
    W = crandn(rng, 3, 2)
    g = fd_gradient(lambda w: np.sum(np.abs(w) ** 2), W, 1e-6)
    assert np.allclose(g, 2 * W, atol=1e-4)


def test_fd_gradient_constant(rng):
    assert np.all(fd_gradient(lambda w: 4.0, crandn(rng, 2, 2)) == 0)


def test_fd_gradient_batched_matches(rng):
    W = crandn(rng, 3, 2)
    f = lambda w: np.sum(np.abs(w) ** 4, axis=(-2, -1))
    assert np.allclose(fd_gradient(f, W, batched=True), fd_gradient(f, W))


def test_project_linear_is_input_normalisation(rng):
    W = crandn(rng, 4, 2)
    out = project_output_power(W, LINEAR, 5.0)
    assert np.allclose(out, W * np.sqrt(5.0 / np.sum(np.abs(W) ** 2)))


def test_project_polynomial_output_power(rng):
    pa = appendix_coeffs(-3.0)
    W = project_output_power(crandn(rng, 3, 4, 2), pa, 4.0)
    assert np.allclose(output_power_analytic(W, pa).sum(axis=-1), 4.0, rtol=1e-3)


def test_project_mc_softlimiter(rng):
    pa = SoftLimiterPa(1.0)
    W = project_output_power(crandn(rng, 3, 1), pa, 2.0, n_mc=1 << 14)
    assert output_power_mc(W, pa, n_mc=1 << 14).sum() == pytest.approx(2.0, rel=1e-3)


def test_project_softlimiter_ceiling(rng):
    with pytest.raises(NoBracket):
        project_output_power(crandn(rng, 2, 1), SoftLimiterPa(1.0), 3.0, n_mc=4096)


def test_dab_linear_single_user(rng):
    h = crandn(rng, 4, 1)
    noise = NoiseSpec(0.04)
    res = dab_precode(h, LINEAR, noise, 4.0, DabConfig(restarts=3, iterations=50))
    ref = sum_rate_analytic(h, zf(h, 4.0), LINEAR, noise.sigma2)
    assert res.rate >= ref - 1e-3


def test_dab_reaches_z3ro(rng):
    h = crandn(rng, 4, 1)
    P_T = 4.0
    noise = NoiseSpec.from_snr_db(P_T, 20.0)
    res = dab_precode(h, THIRD_ORDER_M3DB, noise, P_T, DabConfig(restarts=10, iterations=200))
    w3 = project_output_power(z3ro(h, P_T), THIRD_ORDER_M3DB, P_T)
    ref = sum_rate_analytic(h, w3, THIRD_ORDER_M3DB, noise.sigma2)
    assert res.rate >= 0.99 * ref


def test_dab_trace_and_determinism(rng):
    H = crandn(rng, 4, 2)
    noise = NoiseSpec(0.1)
    cfg = DabConfig(restarts=4, iterations=30)
    a = dab_precode(H, appendix_coeffs(-3.0), noise, 4.0, cfg)
    b = dab_precode(H, appendix_coeffs(-3.0), noise, 4.0, cfg)
    assert np.array_equal(a.W, b.W) and a.rate == b.rate
    assert a.trace.shape == (4, 31)
    assert np.all(np.diff(a.best_so_far()) >= 0)
    assert len(list(a.trace_rows())) == 4 * 31
    # the returned precoder meets the output-power constraint
    assert output_power_analytic(a.W, appendix_coeffs(-3.0)).sum() == pytest.approx(4.0, rel=1e-3)


@pytest.mark.parametrize("step", ["decaying", "fixed"])
def test_dab_other_step_rules(rng, step):
    H = crandn(rng, 4, 1)
    res = dab_precode(H, THIRD_ORDER_M3DB, NoiseSpec(0.04), 4.0, DabConfig(restarts=2, iterations=20, step=step))
    assert np.isfinite(res.rate) and res.trace.shape == (2, 21)


def test_dab_finite_difference_flag(rng):
    H = crandn(rng, 3, 1)
    cfg = DabConfig(restarts=2, iterations=5)
    a = dab_precode(H, THIRD_ORDER_M3DB, NoiseSpec(0.04), 3.0, cfg)
    b = dab_precode(H, THIRD_ORDER_M3DB, NoiseSpec(0.04), 3.0, DabConfig(restarts=2, iterations=5, fd=True))
    assert b.rate == pytest.approx(a.rate, rel=1e-3)
