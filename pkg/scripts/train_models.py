"""Train the GNN checkpoints used by the acceptance suite.

    python3 scripts/train_models.py single-user   # M=16, K=1, 3rd-order PA, 20 dB
    python3 scripts/train_models.py multi-user    # M=16, K=2, 11th-order PA, 30 dB
    python3 scripts/train_models.py snr-range     # M=16, K=2, SNR as an input feature

Checkpoints land in ``artifacts/`` (or --out). Every run is deterministic
given its seeds; the settings below are the ones the tests expect.
"""
import argparse
import logging
import time
from pathlib import Path

import numpy as np

from nlprecode import gnn
from nlprecode.bussgang import sum_rate_analytic
from nlprecode.channel import gen_rayleigh
from nlprecode.pa import THIRD_ORDER_M3DB, appendix_coeffs, pa_to_dict
from nlprecode.precoders import z3ro, zf

M = 16
HIDDEN = 64
SETUPS = {
    "single-user": dict(K=1, pa=THIRD_ORDER_M3DB, snr_db=20.0, epochs=30, budget=1500.0, file="single_user.ckpt.json"),
    "multi-user": dict(K=2, pa=appendix_coeffs(-3.0), snr_db=30.0, epochs=40, budget=1500.0,
                       file="multi_user.ckpt.json"),
    "snr-range": dict(K=2, pa=appendix_coeffs(-3.0), snr_db=None, epochs=40, budget=2400.0,
                      file="snr_range.ckpt.json"),
}
TRAIN_SEED, VAL_SEED, TEST_SEED = 1, 2, 3


def datasets(K, n_train=20_000, n_val=1000):
    train = gen_rayleigh(M, K, n_train, TRAIN_SEED)
    val = gen_rayleigh(M, K, n_val, VAL_SEED)
    return train, val


def train_setup(name: str, out_dir: Path, budget: float | None = None) -> Path:
    s = SETUPS[name]
    train, val = datasets(s["K"])
    snr_spec = gnn.SnrFeatureSpec() if s["snr_db"] is None else None
    arch = gnn.GnnArch(hidden=HIDDEN, in_dim=3 if snr_spec else 2)
    cfg = gnn.TrainConfig(epochs=s["epochs"], snr_db=s["snr_db"], seed=0)
    t0 = time.perf_counter()
    res = gnn.train(arch, cfg, train.as_complex128(), val.as_complex128(), s["pa"], float(M),
                    snr_spec=snr_spec, time_budget_s=budget or s["budget"])
    extra = {"setup": name, "pa": pa_to_dict(s["pa"]), "best_epoch": res.best_epoch,
             "train_seconds": time.perf_counter() - t0, "history": res.history}
    if snr_spec:
        extra["snr_spec"] = {"snr_max_db": snr_spec.snr_max_db, "scale": snr_spec.scale}
    path = out_dir / s["file"]
    gnn.save_params(path, res.params, arch, cfg, seed=cfg.seed, dataset_fingerprint=train.fingerprint(), extra=extra)
    return path


def report(name: str, path: Path, n_test: int = 2000):
    s = SETUPS[name]
    params, arch, header = gnn.load_params(path)
    H = gen_rayleigh(M, s["K"], n_test, TEST_SEED).as_complex128()
    snr = s["snr_db"] if s["snr_db"] is not None else 30.0
    spec = gnn.SnrFeatureSpec() if arch.in_dim == 3 else None
    rate = gnn.evaluate(params, arch, H, s["pa"], float(M), snr, spec).mean()
    ref = z3ro if s["K"] == 1 else None
    W_ref = np.stack([ref(h, float(M)) for h in H]) if ref else zf(H, float(M))
    base = sum_rate_analytic(H, W_ref, s["pa"], float(M) / 10 ** (snr / 10)).mean()
    print(f"{name}: gnn {rate:.3f} reference {base:.3f} "
          f"({header['extra']['train_seconds']:.0f} s, best epoch {header['extra']['best_epoch']})")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("setups", nargs="+", choices=sorted(SETUPS))
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "artifacts"))
    ap.add_argument("--budget", type=float, help="wall-clock budget per run in seconds")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.setups:
        report(name, train_setup(name, out, args.budget))


if __name__ == "__main__":
    main()
