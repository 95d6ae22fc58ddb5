import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlprecode.channel import (ChannelSet, LosGeometry, gen_los, gen_los_set, gen_rayleigh, load_channels,
                               save_channels, steering_vector)
from nlprecode.errors import AngleOutOfRange, BadMagic, DimensionMismatch, InvalidDimensions


def test_rayleigh_is_deterministic():
    a = gen_rayleigh(2, 1, 1, seed=7)
    b = gen_rayleigh(2, 1, 1, seed=7)
    assert np.array_equal(a.samples, b.samples)
    assert a.fingerprint() == b.fingerprint()


def test_rayleigh_different_seeds_differ():
    assert not np.array_equal(gen_rayleigh(4, 2, 3, 1).samples, gen_rayleigh(4, 2, 3, 2).samples)


def test_rayleigh_moments():
    h = gen_rayleigh(16, 2, 10_000, seed=3).as_complex128()
    assert abs(np.mean(np.abs(h) ** 2) - 1) < 0.05
    assert abs(np.mean(h)) < 0.02
    # real and imaginary parts each carry half the power
    assert abs(np.var(h.real) - 0.5) < 0.02
    assert abs(np.var(h.imag) - 0.5) < 0.02


@pytest.mark.parametrize("M,K,n", [(1, 2, 1), (4, 0, 1), (4, 2, 0)])
def test_rayleigh_invalid_dimensions(M, K, n):
    with pytest.raises(InvalidDimensions):
        gen_rayleigh(M, K, n, seed=0)


def test_los_first_antenna_is_one():
    H = gen_los(8, LosGeometry((33.0, 150.0)))
    assert np.allclose(H[0], 1.0)


def test_los_broadside_all_ones():
    H = gen_los(8, LosGeometry((90.0,)))
    assert np.allclose(H, 1.0, atol=1e-15)


def test_los_phase_at_150_degrees():
    H = gen_los(4, LosGeometry((150.0,)))
    assert np.angle(H[1, 0]) == pytest.approx(-np.pi * np.cos(np.deg2rad(150.0)), abs=1e-12)
    assert np.angle(H[1, 0]) == pytest.approx(2.7207, abs=1e-4)


@given(st.lists(st.floats(0, 180), min_size=1, max_size=4), st.floats(0.1, 1.0))
def test_los_modulus_and_constant_phase_step(angles, spacing):
    beta = np.linspace(0.5, 2.0, len(angles))
    H = gen_los(6, LosGeometry(tuple(angles), tuple(beta), spacing))
    assert np.allclose(np.abs(H), np.sqrt(beta)[None, :], rtol=0, atol=1e-12)
    ratio = H[1:] / H[:-1]
    assert np.allclose(ratio, ratio[0], atol=1e-12)


def test_los_angle_out_of_range():
    with pytest.raises(AngleOutOfRange):
        gen_los(4, LosGeometry((190.0,)))


def test_steering_matches_los():
    assert np.allclose(steering_vector(5, 40.0), gen_los(5, LosGeometry((40.0,)))[:, 0])


def test_los_set_uses_integer_angles():
    cset = gen_los_set(8, 2, 5, seed=1)
    assert cset.distribution == "los"
    # every column is a steering vector at an integer angle
    for H in cset.as_complex128():
        for k in range(2):
            theta = np.rad2deg(np.arccos(np.clip(-np.angle(H[1, k] / H[0, k]) / np.pi, -1, 1)))
            assert abs(theta - round(theta)) < 1e-3


def test_round_trip(tmp_path):
    cset = gen_rayleigh(4, 2, 3, seed=11)
    path = tmp_path / "c.mmc"
    save_channels(cset, path)
    back = load_channels(path)
    assert back == cset
    assert back.seed == 11 and back.distribution == "rayleigh"
    assert np.array_equal(back.samples, cset.samples)


def test_header_layout(tmp_path):
    path = tmp_path / "c.mmc"
    save_channels(gen_rayleigh(3, 2, 4, seed=5), path)
    raw = path.read_bytes()
    assert raw[:4] == b"MMC1"
    assert raw[4] == 1 and raw[5] == 0
    assert len(raw) == 32 + 4 * 3 * 2 * 8


def test_truncated_file(tmp_path):
    path = tmp_path / "c.mmc"
    path.write_bytes(b"MMC1\x01")
    with pytest.raises(BadMagic):
        load_channels(path)


def test_wrong_magic(tmp_path):
    path = tmp_path / "c.mmc"
    save_channels(gen_rayleigh(2, 1, 1, seed=0), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        load_channels(path)


def test_payload_length_mismatch(tmp_path):
    path = tmp_path / "c.mmc"
    save_channels(gen_rayleigh(2, 1, 3, seed=0), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DimensionMismatch):
        load_channels(path)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_channels(tmp_path / "nope.mmc")


def test_channelset_is_immutable():
    cset = gen_rayleigh(2, 1, 2, seed=0)
    with pytest.raises(ValueError):
        cset.samples[0, 0, 0] = 1.0


def test_channelset_rejects_k_above_m():
    with pytest.raises(InvalidDimensions):
        ChannelSet(np.zeros((1, 1, 2)), seed=0)
