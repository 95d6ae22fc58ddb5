"""Command-line experiment harness.

    nlprecode gen-channels --config cfg.json
    nlprecode train --config cfg.json
    nlprecode eval --config cfg.json --precoders zf,mrt,gnn --snr-db -10..30:5

Every run writes ``manifest.json`` (resolved config, its hash, seeds, version)
next to its CSV/JSON outputs. Exit codes: 0 success, 2 configuration error,
3 numerical failure. ``NLPRECODE_THREADS`` caps the worker pool used for
sweeps.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, channel, gnn
from .bussgang import NoiseSpec, snidr_mc, sum_rate_analytic
from .config import DatasetCfg, ExperimentConfig, load_config, parse_snr_range
from .dab import DabConfig, dab_precode
from .errors import ConfigError, NlPrecodeError, UnknownIbo
from .pa import (APPENDIX_TABLE, IboSpec, LinearPa, PolynomialPa, RappPa, fit_polynomial, pa_from_dict, pa_to_dict,
                 psat_from_ibo)
from .precoders import mrt, z3ro, zf

log = logging.getLogger("nlprecode")

SPLITS = ("train", "val", "test")


# ------------------------------------------------------------------ helpers

def _threads() -> int:
    raw = os.environ.get("NLPRECODE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"NLPRECODE_THREADS must be an integer, got {raw!r}") from exc
    return max(n, 1)


def pool_map(fn, items) -> list:
    """Map in a thread pool capped by NLPRECODE_THREADS; results keep input order."""
    items = list(items)
    n = min(_threads(), len(items)) or 1
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_csv(path, rows, fieldnames=None):
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        w.writerows(rows)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


class Run:
    """Resolved configuration plus the output directory of one invocation."""

    def __init__(self, cfg: ExperimentConfig, command: str, argv: list):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        write_json(self.out / "manifest.json", {
            "command": command,
            "argv": argv,
            "version": _version(),
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "train_seed": cfg.train.seed,
            "created_unix": int(time.time()),
            "config": cfg.to_dict(),
        })

    @property
    def P_T(self) -> float:
        return self.cfg.system.p_total

    def pa(self, ibo_db: float | None = None):
        d = dict(self.cfg.pa)
        if ibo_db is not None:
            d["ibo_db"] = ibo_db
        try:
            return pa_from_dict(d)
        except UnknownIbo as exc:
            raise ConfigError(f"pa.ibo_db: {exc.args[0]}") from exc
        except KeyError as exc:
            raise ConfigError(f"pa section is missing {exc.args[0]!r}") from exc

    def dataset_dir(self) -> Path:
        if self.cfg.dataset is None:
            raise ConfigError("this command needs a 'dataset' section with a 'path'")
        return Path(self.cfg.dataset.path)

    def split(self, name: str) -> channel.ChannelSet:
        path = self.dataset_dir() / f"{name}.mmc"
        if not path.exists():
            raise ConfigError(f"dataset.path: {path} does not exist (run gen-channels first)")
        cset = channel.load_channels(path)
        if (cset.M, cset.K) != (self.cfg.system.M, self.cfg.system.K):
            raise ConfigError(f"dataset {path} has M={cset.M}, K={cset.K}; "
                              f"system asks for M={self.cfg.system.M}, K={self.cfg.system.K}")
        return cset


def _override(cfg: ExperimentConfig, args) -> ExperimentConfig:
    sysc = cfg.system
    for flag, attr in (("M", "M"), ("K", "K"), ("P_T", "P_T"), ("snr_db_point", "snr_db")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(sysc, attr, v)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "ibo_db", None) is not None:
        cfg.pa = dict(cfg.pa, ibo_db=args.ibo_db)
        cfg.pa.pop("coeffs", None)
    if getattr(args, "order", None) is not None:
        cfg.pa = dict(cfg.pa, order=args.order)
        cfg.pa.pop("coeffs", None)
    if getattr(args, "pa_kind", None):
        cfg.pa = dict(cfg.pa, kind=args.pa_kind)
    if getattr(args, "dataset", None):
        base = cfg.dataset or DatasetCfg()
        cfg.dataset = dataclasses.replace(base, path=args.dataset)
    return cfg


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return _override(cfg, args)


def _load_gnn(path):
    if not path:
        raise ConfigError("the gnn precoder needs a checkpoint (eval.checkpoint or --checkpoint)")
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    params, arch, header = gnn.load_params(path)
    spec = None
    if arch.in_dim == 3:
        spec = gnn.SnrFeatureSpec(**header.get("extra", {}).get("snr_spec", {}))
    return params, arch, spec


def precode(name: str, H: np.ndarray, P_T: float, pa=None, snr_db: float | None = None,
            model=None, dab_cfg: DabConfig | None = None) -> np.ndarray:
    """Precoders for a batch of channels (B, M, K)."""
    if name == "mrt":
        return np.stack([mrt(h, P_T) for h in H])
    if name == "zf":
        return zf(H, P_T)
    if name == "z3ro":
        if H.shape[-1] != 1:
            raise ConfigError("z3ro is a single-user precoder (K must be 1)")
        return np.stack([z3ro(h, P_T) for h in H])
    if name == "gnn":
        params, arch, spec = model
        feat = spec.feature(snr_db) if arch.in_dim == 3 else None
        return gnn.gnn_forward(params, arch, H, P_T, feat)
    if name == "dab":
        if not isinstance(pa, PolynomialPa):
            raise ConfigError("dab needs a polynomial PA")
        noise = NoiseSpec.from_snr_db(P_T, snr_db)
        return np.stack([dab_precode(h, pa, noise, P_T, dab_cfg).W for h in H])
    raise ConfigError(f"unknown precoder {name!r}")


def link_rates(H, W, pa, P_T: float, snr_db: float, n_mc: int = 1 << 16, seed: int = 0) -> np.ndarray:
    """Per-instance sum rates: analytic for polynomial PAs, Monte-Carlo otherwise."""
    sigma2 = P_T / 10 ** (snr_db / 10)
    if isinstance(pa, LinearPa):
        pa = PolynomialPa([1.0])
    if isinstance(pa, PolynomialPa):
        return sum_rate_analytic(H, W, pa, sigma2)
    noise = NoiseSpec(sigma2)
    return np.array([snidr_mc(h, w, pa, noise, n_mc=n_mc, seed=seed).sum_rate for h, w in zip(H, W)])


def _dab_cfg(cfg: ExperimentConfig) -> DabConfig:
    d = cfg.dab
    return DabConfig(restarts=d.restarts, iterations=d.iterations, step=d.step, mu0=d.mu0, fd=d.fd,
                     fd_delta=d.fd_delta, seed=cfg.seed)


def _test_channels(run: Run, n: int | None) -> np.ndarray:
    H = run.split("test").as_complex128()
    return H[:n] if n else H


def _models_for(path_template, ibo):
    if path_template and "{ibo}" in path_template:
        return _load_gnn(path_template.format(ibo=ibo))
    return _load_gnn(path_template)


# ------------------------------------------------------------------ commands

def cmd_gen_channels(args, run: Run):
    cfg = run.cfg
    ds = cfg.dataset
    if ds is None:
        raise ConfigError("gen-channels needs a 'dataset' section with a 'path'")
    out = Path(ds.path)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {"train": ds.n_train, "val": ds.n_val, "test": ds.n_test}
    summary = {}
    for i, split in enumerate(SPLITS):
        seed = cfg.seed * 1000 + i
        n = sizes[split]
        if ds.distribution == "rayleigh":
            cset = channel.gen_rayleigh(cfg.system.M, cfg.system.K, n, seed)
        else:
            cset = channel.gen_los_set(cfg.system.M, cfg.system.K, n, seed)
        channel.save_channels(cset, out / f"{split}.mmc")
        summary[split] = {"n": n, "seed": seed, "fingerprint": cset.fingerprint()}
    write_json(run.out / "channels.json", summary)
    return summary


def cmd_pa_fit(args, run: Run):
    spec = IboSpec(args.ibo_db if args.ibo_db is not None else -3.0, args.p_in)
    rapp = RappPa(psat_from_ibo(spec))
    order = args.order or 11
    pa, info = fit_polynomial(rapp, spec, (order - 1) // 2, method=args.method, amp_max=args.amp_max,
                              return_info=True)
    amp = np.linspace(0, 2, 2001)
    out = {"ibo_db": spec.ibo_db, "p_in": spec.p_in, "order": order, "method": args.method,
           "coeffs": [[c.real, c.imag] for c in pa.coeffs], **info,
           "am_am_rmse_vs_rapp_0_2": float(np.sqrt(np.mean((np.abs(pa(amp)) - np.abs(rapp(amp))) ** 2)))}
    if order == 11 and spec.p_in == 1.0 and spec.ibo_db in APPENDIX_TABLE:
        table = PolynomialPa(APPENDIX_TABLE[spec.ibo_db])
        out["am_am_rmse_vs_table_0_2"] = float(np.sqrt(np.mean((np.abs(pa(amp)) - np.abs(table(amp))) ** 2)))
    write_json(run.out / "pa_fit.json", out)
    return out


def cmd_pa_dump_table(args, run: Run):
    rows = []
    for ibo, coeffs in sorted(APPENDIX_TABLE.items()):
        row = {"ibo_db": ibo}
        for n, c in enumerate(coeffs):
            row[f"b{2 * n + 1}_re"] = c.real
            row[f"b{2 * n + 1}_im"] = c.imag
        rows.append(row)
    write_csv(run.out / "pa_table.csv", rows)
    write_json(run.out / "pa_table.json", {str(r["ibo_db"]): pa_to_dict(PolynomialPa(APPENDIX_TABLE[r["ibo_db"]]))
                                           for r in rows})
    return rows


def _train_one(run: Run, pa, ckpt_path: Path, snr_range: bool):
    cfg = run.cfg
    g = cfg.gnn
    snr_feature = g.snr_feature or snr_range
    arch = gnn.GnnArch(layers=g.layers, hidden=g.hidden, include_self=g.include_self,
                       in_dim=3 if snr_feature else 2)
    spec = gnn.SnrFeatureSpec(snr_max_db=g.snr_max_db, scale=g.snr_scale) if snr_feature else None
    t = cfg.train
    tcfg = gnn.TrainConfig(batch_size=t.batch_size, lr=t.lr, epochs=t.epochs, plateau_factor=t.plateau_factor,
                           plateau_patience=t.plateau_patience, early_stop=t.early_stop,
                           snr_db=None if snr_range else (t.snr_db if t.snr_db is not None else cfg.system.snr_db),
                           seed=t.seed)
    if not isinstance(pa, PolynomialPa):
        raise ConfigError("training needs a polynomial PA (the loss uses the analytic sum rate)")
    train_set = run.split("train")
    val_set = run.split("val")
    res = gnn.train(arch, tcfg, train_set.as_complex128(), val_set.as_complex128(), pa, run.P_T,
                    snr_spec=spec, time_budget_s=t.time_budget_s)
    extra = {"pa": pa_to_dict(pa), "system": dataclasses.asdict(cfg.system), "best_epoch": res.best_epoch}
    if spec is not None:
        extra["snr_spec"] = {"snr_max_db": spec.snr_max_db, "scale": spec.scale}
    gnn.save_params(ckpt_path, res.params, arch, tcfg, seed=t.seed,
                    dataset_fingerprint=train_set.fingerprint(), extra=extra)
    return res


def cmd_train(args, run: Run):
    ckpt = Path(args.checkpoint or run.cfg.train.checkpoint)
    if not ckpt.is_absolute():
        ckpt = run.out / ckpt
    res = _train_one(run, run.pa(), ckpt, args.snr_range)
    write_csv(run.out / "history.csv", res.history,
              fieldnames=["epoch", "train_loss", "val_loss", "lr", "seconds"])
    return {"checkpoint": str(ckpt), "best_epoch": res.best_epoch, "epochs_run": len(res.history)}


def cmd_eval(args, run: Run):
    cfg = run.cfg
    precoders = args.precoders.split(",") if args.precoders else cfg.eval.precoders
    snrs = parse_snr_range(args.snr_db if args.snr_db is not None else cfg.eval.snr_db)
    pa = run.pa()
    H = _test_channels(run, args.n_test or cfg.eval.n_test)
    if "dab" in precoders:
        H_dab = H[:cfg.dab.n_channels]
    model = _load_gnn(args.checkpoint or cfg.eval.checkpoint) if "gnn" in precoders else None

    def point(job):
        snr, name = job
        Hs = H_dab if name == "dab" else H
        W = precode(name, Hs, run.P_T, pa, snr, model, _dab_cfg(cfg))
        r = link_rates(Hs, W, pa, run.P_T, snr, seed=cfg.seed)
        return {"snr_db": snr, "precoder": name, "sum_rate": float(np.mean(r)),
                "sum_rate_std": float(np.std(r)), "n": int(r.size)}

    rows = pool_map(point, [(s, p) for s in snrs for p in precoders])
    rows.sort(key=lambda r: (r["precoder"], r["snr_db"]))
    write_csv(run.out / "rate_vs_snr.csv", rows)
    return rows


def cmd_sweep_ibo(args, run: Run):
    cfg = run.cfg
    sw = cfg.sweep_ibo
    precoders = args.precoders.split(",") if args.precoders else sw.precoders
    H = _test_channels(run, sw.n_test)
    snr = cfg.system.snr_db
    rows = []
    for ibo in sw.ibo_db:
        pa = run.pa(ibo)
        model = None
        if "gnn" in precoders:
            if sw.retrain or args.retrain:
                ckpt = run.out / f"gnn_ibo{ibo:+.1f}.ckpt.json"
                _train_one(run, pa, ckpt, snr_range=False)
                model = _load_gnn(ckpt)
            else:
                model = _models_for(args.checkpoint or cfg.eval.checkpoint, ibo)
        for name in precoders:
            Hs = H[:cfg.dab.n_channels] if name == "dab" else H
            W = precode(name, Hs, run.P_T, pa, snr, model, _dab_cfg(cfg))
            r = link_rates(Hs, W, pa, run.P_T, snr, seed=cfg.seed)
            rows.append({"ibo_db": ibo, "precoder": name, "sum_rate": float(np.mean(r)), "n": int(r.size)})
    rows.sort(key=lambda r: (r["precoder"], r["ibo_db"]))
    write_csv(run.out / "rate_vs_ibo.csv", rows)
    return rows


def cmd_radiation(args, run: Run):
    cfg = run.cfg
    rc = cfg.radiation
    angles = [float(a) for a in (args.angles.split(",") if args.angles else rc.angles_deg)]
    precoders = args.precoders.split(",") if args.precoders else rc.precoders
    M = cfg.system.M
    H = channel.gen_los(M, channel.LosGeometry(angles))
    if H.shape[1] != cfg.system.K:
        log.info("radiation: using K=%d users from the angle list", H.shape[1])
    pa = run.pa()
    model = _load_gnn(args.checkpoint or rc.checkpoint or cfg.eval.checkpoint) if "gnn" in precoders else None
    theta = np.arange(0.0, 180.0 + 1e-9, rc.theta_step_deg)
    out = {}
    for name in precoders:
        W = precode(name, H[None], run.P_T, pa, cfg.system.snr_db, model, _dab_cfg(cfg))[0]
        pat = analysis.radiation_pattern(W, pa, theta, method=rc.method, seed=cfg.seed)
        path = run.out / f"radiation_{name}.csv"
        pat.write_csv(path)
        out[name] = {"csv": str(path), "peak_lin_deg": float(theta[np.argmax(pat.p_lin)]),
                     "peak_dist_deg": float(theta[np.argmax(pat.p_dist)])}
    write_json(run.out / "radiation.json", {"angles_deg": angles, "patterns": out})
    return out


def cmd_power(args, run: Run):
    cfg = run.cfg
    pc = cfg.power
    precoders = args.precoders.split(",") if args.precoders else pc.precoders
    H = _test_channels(run, pc.n_test)
    snr = cfg.system.snr_db
    p_in = float(cfg.pa.get("p_in", 1.0))
    rows = []
    for ibo in pc.ibo_db:
        pa = run.pa(ibo)
        p_sat = psat_from_ibo(IboSpec(ibo, p_in))
        model = _models_for(args.checkpoint or pc.checkpoint or cfg.eval.checkpoint, ibo) if "gnn" in precoders else None
        for name in precoders:
            Hs = H[:cfg.dab.n_channels] if name == "dab" else H
            W = precode(name, Hs, run.P_T, pa, snr, model, _dab_cfg(cfg))
            rate = link_rates(Hs, W, pa, run.P_T, snr, seed=cfg.seed)
            pcons = [analysis.pa_consumed_power(w, pa, p_sat, seed=cfg.seed) for w in W]
            rows.append({"ibo_db": ibo, "precoder": name, "p_cons": float(np.mean(pcons)),
                         "sum_rate": float(np.mean(rate))})
    rows.sort(key=lambda r: (r["precoder"], r["ibo_db"]))
    write_csv(run.out / "power_vs_ibo.csv", [{k: r[k] for k in ("ibo_db", "precoder", "p_cons")} for r in rows])
    write_csv(run.out / "rate_vs_power.csv",
              sorted(rows, key=lambda r: (r["precoder"], r["p_cons"])),
              fieldnames=["precoder", "ibo_db", "p_cons", "sum_rate"])
    return rows


def cmd_complexity(args, run: Run):
    c = run.cfg.complexity
    M = args.M if args.M is not None else c.M
    K = args.K if args.K is not None else c.K
    d = args.d or c.d
    L = args.L or c.L
    res = {
        "params": {"M": M, "K": K, "d": d, "L": L, "P": c.P, "I": c.I},
        "gnn": analysis.flops("gnn", M, K, d, L),
        "zf": analysis.flops("zf", M, K),
        "dab": analysis.flops("dab", M, K, P=c.P, I=c.I),
    }
    res["dab_over_gnn"] = res["dab"]["flops"] / res["gnn"]["flops"]
    res["dsp"] = analysis.dsp_sizing(5e9, 10.0, res["gnn"]["flops_total_formula"])
    write_json(run.out / "complexity.json", res)
    return res


def cmd_validate_rapp(args, run: Run):
    """Rate of a polynomial-trained GNN under the polynomial model and under Rapp."""
    cfg = run.cfg
    ibo = float(cfg.pa.get("ibo_db", -3.0))
    p_in = float(cfg.pa.get("p_in", 1.0))
    poly = run.pa()
    rapp = RappPa(psat_from_ibo(IboSpec(ibo, p_in)))
    model = _load_gnn(args.checkpoint or cfg.eval.checkpoint)
    H = _test_channels(run, args.n_test)
    snr = cfg.system.snr_db
    W = precode("gnn", H, run.P_T, poly, snr, model)
    r_poly = link_rates(H, W, poly, run.P_T, snr)
    r_rapp = link_rates(H, W, rapp, run.P_T, snr, n_mc=args.n_mc, seed=cfg.seed)
    out = {"ibo_db": ibo, "snr_db": snr, "n": int(H.shape[0]), "rate_poly": float(np.mean(r_poly)),
           "rate_rapp": float(np.mean(r_rapp))}
    out["rel_diff"] = abs(out["rate_rapp"] - out["rate_poly"]) / out["rate_poly"]
    write_json(run.out / "validate_rapp.json", out)
    return out


def cmd_dab(args, run: Run):
    cfg = run.cfg
    dcfg = _dab_cfg(cfg)
    if args.restarts:
        dcfg.restarts = args.restarts
    if args.iters:
        dcfg.iterations = args.iters
    if args.step:
        dcfg.step = args.step
    if args.fd:
        dcfg.fd = True
    pa = run.pa()
    if not isinstance(pa, PolynomialPa):
        raise ConfigError("dab needs a polynomial PA")
    if cfg.dataset is not None and (Path(cfg.dataset.path) / "test.mmc").exists():
        H = _test_channels(run, cfg.dab.n_channels)
    else:
        H = channel.gen_rayleigh(cfg.system.M, cfg.system.K, cfg.dab.n_channels, cfg.seed).as_complex128()
    snr = cfg.system.snr_db
    noise = NoiseSpec.from_snr_db(run.P_T, snr)
    trace_rows, summary = [], []
    for i, h in enumerate(H):
        res = dab_precode(h, pa, noise, run.P_T, dcfg)
        trace_rows.extend({"channel": i, "restart": p, "iteration": it, "objective": v}
                          for p, it, v in res.trace_rows())
        r_zf = float(sum_rate_analytic(h, zf(h, run.P_T), pa, noise.sigma2))
        summary.append({"channel": i, "dab": res.rate, "zf": r_zf, "best_restart": res.best_restart})
    write_csv(run.out / "dab_trace.csv", trace_rows, fieldnames=["channel", "restart", "iteration", "objective"])
    write_csv(run.out / "dab_summary.csv", summary)
    return summary


# ------------------------------------------------------------------ parser

def _common(p, system=True):
    p.add_argument("--config", help="ExperimentConfig JSON")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int)
    if system:
        p.add_argument("--M", type=int)
        p.add_argument("--K", type=int)
        p.add_argument("--P-T", dest="P_T", type=float)
        p.add_argument("--snr-point", dest="snr_db_point", type=float, help="operating P_T/sigma^2 in dB")
        p.add_argument("--ibo-db", type=float)
        p.add_argument("--order", type=int, help="polynomial PA order (odd)")
        p.add_argument("--pa-kind", choices=["poly", "rapp", "softlimiter", "linear"])
        p.add_argument("--dataset", help="dataset directory (overrides dataset.path)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlprecode", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-channels", help="generate train/val/test channel files")
    _common(p)
    p.set_defaults(fn=cmd_gen_channels)

    pa_p = sub.add_parser("pa", help="PA model utilities")
    pa_sub = pa_p.add_subparsers(dest="pa_command", required=True)
    p = pa_sub.add_parser("fit", help="fit a polynomial to the Rapp model")
    _common(p, system=False)
    p.add_argument("--ibo-db", type=float)
    p.add_argument("--order", type=int)
    p.add_argument("--p-in", type=float, default=1.0)
    p.add_argument("--method", choices=["grid", "gaussian"], default="grid")
    p.add_argument("--amp-max", type=float)
    p.set_defaults(fn=cmd_pa_fit)
    p = pa_sub.add_parser("dump-table", help="export the tabulated 11th-order coefficients")
    _common(p, system=False)
    p.set_defaults(fn=cmd_pa_dump_table)

    p = sub.add_parser("train", help="train the GNN precoder")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--snr-range", action="store_true", help="train the SNR-input variant over the SNR grid")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="sum rate vs SNR for several precoders")
    _common(p)
    p.add_argument("--precoders", help="comma separated, e.g. zf,mrt,gnn")
    p.add_argument("--snr-db", help="'lo..hi:step' or comma list")
    p.add_argument("--checkpoint")
    p.add_argument("--n-test", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep-ibo", help="sum rate vs IBO")
    _common(p)
    p.add_argument("--precoders")
    p.add_argument("--retrain", action="store_true")
    p.add_argument("--checkpoint", help="path, may contain {ibo}")
    p.set_defaults(fn=cmd_sweep_ibo)

    p = sub.add_parser("radiation", help="radiation patterns for LOS users")
    _common(p)
    p.add_argument("--angles", help="comma separated user angles in degrees")
    p.add_argument("--precoders")
    p.add_argument("--checkpoint")
    p.set_defaults(fn=cmd_radiation)

    p = sub.add_parser("power", help="PA consumed power vs IBO and rate vs consumed power")
    _common(p)
    p.add_argument("--precoders")
    p.add_argument("--checkpoint", help="path, may contain {ibo}")
    p.set_defaults(fn=cmd_power)

    p = sub.add_parser("complexity", help="FLOP counts and DSP sizing")
    _common(p, system=False)
    p.add_argument("--M", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--L", type=int)
    p.set_defaults(fn=cmd_complexity)

    p = sub.add_parser("validate-rapp", help="evaluate a polynomial-trained GNN under the Rapp PA")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--n-mc", type=int, default=1 << 16)
    p.set_defaults(fn=cmd_validate_rapp)

    p = sub.add_parser("dab", help="run distortion-aware beamforming")
    _common(p)
    p.add_argument("--restarts", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--step", choices=["backtracking", "decaying", "fixed"])
    p.add_argument("--fd", action="store_true", help="finite-difference gradients")
    p.set_defaults(fn=cmd_dab)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    command = args.command + (f" {args.pa_command}" if args.command == "pa" else "")
    try:
        run = Run(_load(args), command, argv)
        result = args.fn(args, run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NlPrecodeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if args.verbose:
        print(json.dumps(result, indent=2, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
