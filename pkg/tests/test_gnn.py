import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import crandn
from nlprecode import gnn
from nlprecode.errors import ShapeMismatch, VersionMismatch, ZeroMatrix
from nlprecode.pa import PolynomialPa, appendix_coeffs
from nlprecode.precoders import zf

SMALL = gnn.GnnArch(layers=3, hidden=8)
PA11 = appendix_coeffs(-3.0)


def test_arch_widths_and_count():
    arch = gnn.GnnArch()
    assert arch.widths == [2] + [128] * 7 + [2]
    w = arch.widths
    assert arch.param_count() == sum(3 * w[l + 1] * w[l] for l in range(8))
    assert gnn.GnnParams.init(arch).count() == arch.param_count()


def test_arch_validation():
    with pytest.raises(ValueError):
        gnn.GnnArch(layers=1)
    with pytest.raises(ValueError):
        gnn.GnnArch(in_dim=4)


def test_param_count_independent_of_size(rng):
    params = gnn.GnnParams.init(SMALL, 0)
    for M, K in [(4, 2), (9, 3)]:
        assert gnn.gnn_forward(params, SMALL, crandn(rng, M, K), float(M)).shape == (M, K)


@given(st.integers(0, 10_000), st.integers(2, 7), st.integers(1, 4))
def test_permutation_equivariance(seed, M, K):
    r = np.random.default_rng(seed)
    params = gnn.GnnParams.init(SMALL, seed)
    H = crandn(r, M, K)
    pa, pu = r.permutation(M), r.permutation(K)
    W = gnn.gnn_forward(params, SMALL, H, float(M))
    Wp = gnn.gnn_forward(params, SMALL, H[pa][:, pu], float(M))
    assert np.max(np.abs(Wp - W[pa][:, pu])) < 1e-12


@given(st.integers(0, 10_000), st.floats(0.1, 100))
def test_output_power(seed, P_T):
    r = np.random.default_rng(seed)
    W = gnn.gnn_forward(gnn.GnnParams.init(SMALL, seed), SMALL, crandn(r, 5, 2), P_T)
    assert np.sum(np.abs(W) ** 2) == pytest.approx(P_T, rel=1e-9)


def test_zero_weights(rng):
    with pytest.raises(ZeroMatrix):
        gnn.gnn_forward(gnn.GnnParams.zeros(SMALL), SMALL, crandn(rng, 4, 2), 4.0)


def test_input_shape_checks(rng):
    params = gnn.GnnParams.init(SMALL, 0)
    with pytest.raises(ShapeMismatch):
        gnn.gnn_forward(params, SMALL, crandn(rng, 4, 2), 4.0, snr_feature=0.5)
    arch3 = gnn.GnnArch(layers=3, hidden=8, in_dim=3)
    with pytest.raises(ShapeMismatch):
        gnn.gnn_forward(gnn.GnnParams.init(arch3, 0), arch3, crandn(rng, 4, 2), 4.0)


def test_exclude_self_changes_output(rng):
    H = crandn(rng, 4, 2)
    params = gnn.GnnParams.init(SMALL, 0)
    other = gnn.GnnArch(layers=3, hidden=8, include_self=False)
    assert not np.allclose(gnn.gnn_forward(params, SMALL, H, 4.0), gnn.gnn_forward(params, other, H, 4.0))


def test_gradcheck_loss(rng):
    M, K = 4, 2
    H = crandn(rng, 2, M, K)
    params = gnn.GnnParams.init(SMALL, 3)
    _, grads = gnn.loss_and_grad(params, SMALL, H, PA11, 0.1, float(M))
    arrays = params.arrays()
    err = 0.0
    delta = 1e-5
    r = np.random.default_rng(0)
    for i, a in enumerate(arrays):
        for flat in r.choice(a.size, size=min(6, a.size), replace=False):
            idx = np.unravel_index(flat, a.shape)
            vals = []
            for s in (1, -1):
                b = [x.copy() for x in arrays]
                b[i][idx] += s * delta
                vals.append(gnn.loss(params.with_arrays(b), SMALL, H, PA11, 0.1, float(M)))
            fd = (vals[0] - vals[1]) / (2 * delta)
            scale = max(np.max(np.abs(g)) for g in grads)
            err = max(err, abs(fd - grads[i][idx]) / scale)
    assert err < 1e-4


def test_loss_of_identical_batch_is_single_loss(rng):
    H = crandn(rng, 4, 2)
    params = gnn.GnnParams.init(SMALL, 1)
    single = gnn.loss(params, SMALL, H[None], PA11, 0.1, 4.0)
    batch = gnn.loss(params, SMALL, np.stack([H] * 5), PA11, 0.1, 4.0)
    assert batch == pytest.approx(single, rel=1e-12)


def test_loss_above_interference_free_bound(rng):
    H = crandn(rng, 4, 2)
    linear = PolynomialPa([1.0])
    value = gnn.loss(gnn.GnnParams.init(SMALL, 1), SMALL, H[None], linear, 0.1, 4.0)
    bound = -2 * np.log2(1 + 4.0 * np.linalg.eigvalsh(H.conj().T @ H).max() / 0.1)
    assert value >= bound


def test_snr_feature_spec():
    spec = gnn.SnrFeatureSpec()
    assert spec.feature(15.0) == pytest.approx(0.5)
    assert spec.feature(45.0) == 1.0
    assert gnn.SnrFeatureSpec(scale="linear").feature(30.0) == pytest.approx(1.0)
    assert spec.train_db == tuple(range(-30, 31, 5))
    assert np.allclose(np.diff(spec.test_grid()), 2.5)
    with pytest.raises(ValueError):
        gnn.SnrFeatureSpec(snr_max_db=0)


def test_snr_feature_changes_output(rng):
    arch = gnn.GnnArch(layers=3, hidden=8, in_dim=3)
    params = gnn.GnnParams.init(arch, 0)
    H = crandn(rng, 4, 2)
    assert not np.allclose(gnn.gnn_forward(params, arch, H, 4.0, -0.5), gnn.gnn_forward(params, arch, H, 4.0, 0.5))


def _data(rng, n, M=4, K=2):
    return crandn(rng, n, M, K)


def test_zero_epochs_returns_init(rng):
    init = gnn.GnnParams.init(SMALL, 5)
    cfg = gnn.TrainConfig(epochs=0, batch_size=8)
    res = gnn.train(SMALL, cfg, _data(rng, 16), _data(rng, 8), PA11, 4.0, init=init)
    assert res.params.equals(init) and res.history == []


def test_training_improves_and_is_deterministic(rng):
    tr, va = _data(rng, 256), _data(rng, 64)
    cfg = gnn.TrainConfig(epochs=4, batch_size=32, lr=1e-2)
    a = gnn.train(SMALL, cfg, tr, va, PA11, 4.0)
    b = gnn.train(SMALL, cfg, tr, va, PA11, 4.0)
    assert a.params.equals(b.params)
    init_val = -np.mean(gnn.evaluate(gnn.GnnParams.init(SMALL, 0), SMALL, va, PA11, 4.0, 30.0))
    best_val = min(h["val_loss"] for h in a.history)
    assert best_val < init_val
    assert len(a.history) == 4 and {"train_loss", "val_loss", "lr"} <= set(a.history[0])


def test_training_with_snr_range(rng):
    arch = gnn.GnnArch(layers=3, hidden=8, in_dim=3)
    cfg = gnn.TrainConfig(epochs=1, batch_size=32, snr_db=None)
    res = gnn.train(arch, cfg, _data(rng, 64), _data(rng, 26), PA11, 4.0, snr_spec=gnn.SnrFeatureSpec())
    assert res.params.matches(arch)


def test_training_rejects_small_dataset(rng):
    with pytest.raises(ValueError):
        gnn.train(SMALL, gnn.TrainConfig(batch_size=64), _data(rng, 10), _data(rng, 4), PA11, 4.0)


def test_evaluate_matches_zf_shape(rng):
    H = _data(rng, 7)
    rates = gnn.evaluate(gnn.GnnParams.init(SMALL, 0), SMALL, H, PA11, 4.0, 30.0, batch=3)
    assert rates.shape == (7,) and np.all(rates > 0)
    assert np.isfinite(zf(H, 4.0)).all()


def test_checkpoint_round_trip(tmp_path):
    params = gnn.GnnParams.init(SMALL, 9)
    path = tmp_path / "m.json"
    gnn.save_params(path, params, SMALL, gnn.TrainConfig(), seed=9, dataset_fingerprint="abc")
    back, arch, header = gnn.load_params(path)
    assert back.equals(params) and arch == SMALL
    assert header["seed"] == 9 and header["dataset_fingerprint"] == "abc"
    assert header["config"]["batch_size"] == 64


def test_checkpoint_shape_mismatch(tmp_path):
    path = tmp_path / "m.json"
    gnn.save_params(path, gnn.GnnParams.init(SMALL, 0), SMALL)
    with pytest.raises(ShapeMismatch):
        gnn.load_params(path, gnn.GnnArch(layers=3, hidden=16))


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "m.json"
    gnn.save_params(path, gnn.GnnParams.init(SMALL, 0), SMALL)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        gnn.load_params(path)


def test_checkpoint_runs_on_other_array_size(tmp_path, rng):
    path = tmp_path / "m.json"
    gnn.save_params(path, gnn.GnnParams.init(SMALL, 0), SMALL)
    params, arch, _ = gnn.load_params(path)
    assert gnn.gnn_forward(params, arch, crandn(rng, 11, 3), 11.0).shape == (11, 3)


def test_params_shape_validation():
    with pytest.raises(ShapeMismatch):
        gnn.GnnParams([(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 2)))])
