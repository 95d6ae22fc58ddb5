import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import crandn
from nlprecode.errors import SingularChannel, ZeroChannel, ZeroGainSaturatedAntenna, ZeroMatrix
from nlprecode.precoders import mrt, normalize_power, third_order_residual, z3ro, zf, zf_alpha


def _power(W):
    return float(np.sum(np.abs(W) ** 2))


def test_normalize_identity():
    assert np.allclose(normalize_power(np.eye(2), 8.0), 2 * np.eye(2))


def test_normalize_idempotent(rng):
    W = normalize_power(crandn(rng, 4, 2), 3.0)
    assert np.allclose(normalize_power(W, 3.0), W, rtol=1e-14)


def test_normalize_zero():
    with pytest.raises(ZeroMatrix):
        normalize_power(np.zeros((2, 2)), 1.0)


def test_mrt_real_channel():
    h = np.array([[1.0], [2.0], [0.5]])
    w = mrt(h, 3.0)
    assert np.allclose(w.imag, 0)
    assert np.allclose(w[:, 0] / h[:, 0], w[0, 0] / h[0, 0])


def test_mrt_unit_scale(rng):
    h = crandn(rng, 6, 1)
    h *= np.sqrt(6) / np.linalg.norm(h)
    assert np.allclose(mrt(h, 6.0), h.conj())


def test_mrt_equals_zf_single_user(rng):
    h = crandn(rng, 5, 1)
    assert np.allclose(mrt(h, 5.0), zf(h, 5.0))


def test_mrt_zero_channel():
    with pytest.raises(ZeroChannel):
        mrt(np.zeros((3, 1)), 1.0)


def test_zf_orthogonal_columns_is_mrt():
    H = np.array([[1, 0], [0, 1j], [0, 0]], dtype=complex)
    W = zf(H, 2.0)
    assert np.allclose(W, mrt(H, 2.0))


def test_zf_diagonalises(rng):
    H = crandn(rng, 8, 2)
    W = zf(H, 8.0)
    alpha = zf_alpha(H, 8.0)
    assert np.linalg.norm(H.T @ W - alpha * np.eye(2)) / (alpha * np.sqrt(2)) < 1e-9


def test_zf_too_many_users(rng):
    with pytest.raises(SingularChannel):
        zf(crandn(rng, 2, 3), 1.0)


def test_zf_rank_deficient(rng):
    h = crandn(rng, 4, 1)
    with pytest.raises(SingularChannel):
        zf(np.hstack([h, h]), 1.0)


def test_zf_batched(rng):
    H = crandn(rng, 3, 6, 2)
    W = zf(H, 6.0)
    for h, w in zip(H, W):
        assert np.allclose(w, zf(h, 6.0))


def test_z3ro_two_antennas():
    w = z3ro(np.array([1.0, 1.0]), 2.0)
    assert np.allclose(w[:, 0], [-1.0, 1.0])


def test_z3ro_gamma_four_antennas():
    w = z3ro(np.ones(4), 4.0)
    assert -w[0, 0] / w[1, 0] == pytest.approx(3 ** (1 / 3), rel=1e-12)
    assert 3 ** (1 / 3) == pytest.approx(1.4422, abs=1e-4)


@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 3))
def test_z3ro_third_order_null(seed, M, M_s):
    if M_s >= M:
        M_s = M - 1
    r = np.random.default_rng(seed)
    h = crandn(r, M)
    w = z3ro(h, float(M), M_s)
    res, scale = third_order_residual(h, w)
    assert res < 1e-9 * scale
    assert _power(w) == pytest.approx(M, rel=1e-9)


def test_z3ro_zero_saturated_gain():
    with pytest.raises(ZeroGainSaturatedAntenna):
        z3ro(np.array([0.0, 1.0, 1.0]), 3.0)


def test_z3ro_invalid_inputs():
    with pytest.raises(ValueError):
        z3ro(np.ones((3, 2)), 1.0)
    with pytest.raises(ValueError):
        z3ro(np.ones(3), 1.0, M_s=3)


@given(st.integers(0, 10_000), st.integers(2, 8), st.floats(0.1, 100))
def test_power_and_antenna_permutation(seed, M, P_T):
    r = np.random.default_rng(seed)
    H = crandn(r, M, 2)
    perm = r.permutation(M)
    for f in (mrt, zf):
        W = f(H, P_T)
        assert _power(W) == pytest.approx(P_T, rel=1e-9)
        assert np.allclose(f(H[perm], P_T), W[perm], atol=1e-10)
