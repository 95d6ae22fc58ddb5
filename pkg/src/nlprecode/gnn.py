"""Edge message-passing GNN precoder trained on the negative analytic sum rate.

Every antenna-user pair (m, k) is an edge carrying a real feature vector. The
input features are ``[Re h_mk, Im h_mk]`` (plus a normalised SNR for the SNR
variant). Each layer updates

    z'_mk = act(W_e z_mk + W_m mean_k' z_mk' + W_k mean_m' z_m'k)

where the first mean runs over all edges at antenna m and the second over all
edges at user k (both include the edge itself unless ``include_self=False``).
The last layer is linear and emits ``[Re w_mk, Im w_mk]``; a scalar rescale
then sets ``trace(W W^H) = P_T``. Weights act per edge, so one parameter set
runs on any (M, K).
"""
from __future__ import annotations

import base64
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import grad as G
from .errors import Divergence, ShapeMismatch, VersionMismatch, ZeroMatrix
from .grad import CTensor, Tensor
from .objective import sum_rate_tape
from .pa import PolynomialPa

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "nlprecode-gnn"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GnnArch:
    layers: int = 8
    hidden: int = 128
    in_dim: int = 2
    out_dim: int = 2
    slope: float = 0.01
    include_self: bool = True

    def __post_init__(self):
        if self.layers < 2:
            raise ValueError(f"need at least 2 layers, got {self.layers}")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")
        if self.in_dim not in (2, 3):
            raise ValueError(f"in_dim must be 2 (channel) or 3 (channel + SNR), got {self.in_dim}")
        if self.out_dim != 2:
            raise ValueError("out_dim must be 2 (real and imaginary precoder part)")

    @property
    def widths(self) -> list:
        """Feature widths d_0 .. d_L; layer l maps widths[l] -> widths[l + 1]."""
        return [self.in_dim] + [self.hidden] * (self.layers - 1) + [self.out_dim]

    def param_count(self) -> int:
        w = self.widths
        return sum(3 * w[l + 1] * w[l] for l in range(len(w) - 1))


@dataclass(eq=False)
class GnnParams:
    """Per layer a triple (W_edge, W_antenna, W_user), each of shape (d_out, d_in)."""

    layers: list

    def __post_init__(self):
        for l, triple in enumerate(self.layers):
            if len(triple) != 3:
                raise ShapeMismatch(f"layer {l} needs three matrices, got {len(triple)}")
            shapes = {np.shape(w) for w in triple}
            if len(shapes) != 1:
                raise ShapeMismatch(f"layer {l} matrices disagree in shape: {sorted(shapes)}")
        for l in range(len(self.layers) - 1):
            if self.layers[l][0].shape[0] != self.layers[l + 1][0].shape[1]:
                raise ShapeMismatch(f"layer {l} output width does not feed layer {l + 1}")

    @classmethod
    def init(cls, arch: GnnArch, seed: int = 0) -> "GnnParams":
        rng = np.random.default_rng(seed)
        w = arch.widths
        layers = []
        for l in range(arch.layers):
            lim = np.sqrt(6.0 / (w[l] + w[l + 1]))
            layers.append(tuple(rng.uniform(-lim, lim, size=(w[l + 1], w[l])) for _ in range(3)))
        return cls(layers)

    @classmethod
    def zeros(cls, arch: GnnArch) -> "GnnParams":
        w = arch.widths
        return cls([tuple(np.zeros((w[l + 1], w[l])) for _ in range(3)) for l in range(arch.layers)])

    def arrays(self) -> list:
        return [w for triple in self.layers for w in triple]

    def with_arrays(self, arrays) -> "GnnParams":
        it = iter(arrays)
        return GnnParams([tuple(next(it) for _ in range(3)) for _ in self.layers])

    def copy(self) -> "GnnParams":
        return self.with_arrays([w.copy() for w in self.arrays()])

    def count(self) -> int:
        return sum(w.size for w in self.arrays())

    def matches(self, arch: GnnArch) -> bool:
        w = arch.widths
        return len(self.layers) == arch.layers and all(
            self.layers[l][0].shape == (w[l + 1], w[l]) for l in range(arch.layers))

    def equals(self, other: "GnnParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


@dataclass(frozen=True)
class SnrFeatureSpec:
    """How P_T / sigma^2 enters as the third input feature.

    ``scale="db"`` feeds ``clip(SNR_dB / snr_max_db, -1, 1)``; ``scale="linear"``
    feeds ``(P_T / sigma^2) / 10^(snr_max_db / 10)``.
    """

    snr_max_db: float = 30.0
    scale: str = "db"
    train_db: tuple = tuple(float(s) for s in range(-30, 31, 5))
    test_step_db: float = 2.5

    def __post_init__(self):
        if not self.snr_max_db > 0:
            raise ValueError("snr_max_db must be positive")
        if self.scale not in ("db", "linear"):
            raise ValueError(f"unknown SNR scale {self.scale!r}")

    def feature(self, snr_db) -> np.ndarray:
        snr_db = np.asarray(snr_db, dtype=float)
        if self.scale == "db":
            return np.clip(snr_db / self.snr_max_db, -1.0, 1.0)
        return 10 ** (snr_db / 10) / 10 ** (self.snr_max_db / 10)

    def test_grid(self) -> np.ndarray:
        lo, hi = min(self.train_db), max(self.train_db)
        return np.arange(lo, hi + 1e-9, self.test_step_db)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 5e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    early_stop: int = 8
    epochs: int = 50
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    n_train: int = 20_000
    n_val: int = 2_000
    n_test: int = 10_000
    snr_db: float | None = 30.0  # fixed operating point; None means draw from the SNR grid
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "n_train", "n_val", "n_test", "plateau_patience", "early_stop"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0 or not 0 < self.plateau_factor < 1:
            raise ValueError("need lr > 0 and 0 < plateau_factor < 1")


@dataclass
class TrainResult:
    params: GnnParams
    history: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, lr, seconds
    best_epoch: int = -1


def _edge_features(H: np.ndarray, snr_feat=None) -> np.ndarray:
    feats = [H.real, H.imag]
    if snr_feat is not None:
        s = np.asarray(snr_feat, dtype=float).reshape(-1, 1, 1)
        feats.append(np.broadcast_to(s, H.shape))
    return np.stack(feats, axis=-1)


def _means(z: Tensor, include_self: bool):
    """Antenna-node and user-node messages, shapes (B, M, 1, d) and (B, 1, K, d)."""
    M, K = z.shape[1], z.shape[2]
    ant = G.reduce_sum(z, axis=2, keepdims=True)
    usr = G.reduce_sum(z, axis=1, keepdims=True)
    if include_self:
        return G.mul(ant, 1.0 / K), G.mul(usr, 1.0 / M)
    # leave-one-out: subtract the edge itself; a lone edge gets a zero message
    ant = G.sub(ant, z)
    usr = G.sub(usr, z)
    return G.mul(ant, 1.0 / max(K - 1, 1)), G.mul(usr, 1.0 / max(M - 1, 1))


def _forward_tensor(weights, arch: GnnArch, H: np.ndarray, snr_feat, P_T: float) -> CTensor:
    z = Tensor(_edge_features(H, snr_feat))
    for l in range(arch.layers):
        We, Wm, Wk = weights[3 * l:3 * l + 3]
        ant, usr = _means(z, arch.include_self)
        pre = G.add(G.add(G.linear(z, We), G.linear(ant, Wm)), G.linear(usr, Wk))
        z = pre if l == arch.layers - 1 else G.leaky_relu(pre, arch.slope)
    raw = CTensor(G.index(z, (..., 0)), G.index(z, (..., 1)))
    norm2 = G.reduce_sum(raw.abs2(), axis=(1, 2), keepdims=True)
    if np.any(norm2.value == 0):
        raise ZeroMatrix("GNN output is identically zero; cannot normalise")
    scale = G.div(np.sqrt(P_T), G.sqrt(norm2))
    return CTensor(G.mul(raw.re, scale), G.mul(raw.im, scale))


def _check_input(arch: GnnArch, H: np.ndarray, snr_feat):
    if H.ndim != 3:
        raise ShapeMismatch(f"H must be (M, K) or (B, M, K), got shape {H.shape}")
    if (arch.in_dim == 3) != (snr_feat is not None):
        raise ShapeMismatch("an SNR feature is required exactly when the architecture has in_dim=3")


def gnn_forward(params: GnnParams, arch: GnnArch, H, P_T: float, snr_feature=None) -> np.ndarray:
    """Precoders for channel(s) H; returns (M, K) or (B, M, K) complex arrays.

    ``snr_feature`` is the already normalised SNR input (see
    :meth:`SnrFeatureSpec.feature`), scalar or one value per batch entry.
    """
    if not params.matches(arch):
        raise ShapeMismatch("parameters do not match the architecture")
    H = np.asarray(H, dtype=np.complex128)
    single = H.ndim == 2
    Hb = H[None] if single else H
    _check_input(arch, Hb, snr_feature)
    if snr_feature is not None:
        snr_feature = np.broadcast_to(np.asarray(snr_feature, dtype=float), Hb.shape[:1])
    W = _forward_tensor(params.arrays(), arch, Hb, snr_feature, P_T).value
    return W[0] if single else W


def loss_tensor(weights, arch: GnnArch, H, pa: PolynomialPa, sigma2, P_T: float, snr_feature=None) -> Tensor:
    """Negative mean sum rate over the batch, as a tape tensor."""
    W = _forward_tensor(weights, arch, H, snr_feature, P_T)
    rates = sum_rate_tape(H, W, pa, sigma2)
    return G.neg(G.reduce_mean(rates))


def loss(params: GnnParams, arch: GnnArch, H, pa: PolynomialPa, sigma2, P_T: float, snr_feature=None) -> float:
    H = np.asarray(H, dtype=np.complex128)
    H = H[None] if H.ndim == 2 else H
    _check_input(arch, H, snr_feature)
    return float(loss_tensor(params.arrays(), arch, H, pa, sigma2, P_T, snr_feature).value)


def loss_and_grad(params: GnnParams, arch: GnnArch, H, pa: PolynomialPa, sigma2, P_T: float, snr_feature=None):
    """(loss, list of gradient arrays aligned with ``params.arrays()``)."""
    H = np.asarray(H, dtype=np.complex128)
    H = H[None] if H.ndim == 2 else H
    _check_input(arch, H, snr_feature)
    with G.Tape() as tape:
        leaves = [tape.leaf(w) for w in params.arrays()]
        out = loss_tensor(leaves, arch, H, pa, sigma2, P_T, snr_feature)
        tape.backward(out)
    grads = [np.zeros_like(w.value) if w.grad is None else w.grad for w in leaves]
    return float(out.value), grads


class Adam:
    def __init__(self, params: list, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list, grads: list) -> list:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


def _noise_for(snr_db, P_T: float) -> np.ndarray:
    return P_T / 10 ** (np.asarray(snr_db, dtype=float) / 10)


def evaluate(params: GnnParams, arch: GnnArch, H, pa: PolynomialPa, P_T: float, snr_db,
             snr_spec: SnrFeatureSpec | None = None, batch: int = 500) -> np.ndarray:
    """Per-instance analytic sum rates of the GNN precoder at the given SNR(s) in dB."""
    from .bussgang import sum_rate_analytic

    H = np.asarray(H, dtype=np.complex128)
    H = H[None] if H.ndim == 2 else H
    snr_db = np.broadcast_to(np.asarray(snr_db, dtype=float), H.shape[:1])
    out = np.empty(H.shape[0])
    for s in range(0, H.shape[0], batch):
        sl = slice(s, s + batch)
        feat = snr_spec.feature(snr_db[sl]) if arch.in_dim == 3 else None
        W = gnn_forward(params, arch, H[sl], P_T, feat)
        out[sl] = sum_rate_analytic(H[sl], W, pa, _noise_for(snr_db[sl], P_T))
    return out


def train(arch: GnnArch, cfg: TrainConfig, train_H, val_H, pa: PolynomialPa, P_T: float,
          snr_spec: SnrFeatureSpec | None = None, init: GnnParams | None = None,
          time_budget_s: float | None = None) -> TrainResult:
    """Self-supervised Adam training; returns the best-validation parameters.

    With ``cfg.snr_db`` set, every sample uses that SNR. Otherwise each sample
    draws an SNR from ``snr_spec.train_db`` and validation cycles through the
    grid deterministically. The learning rate is multiplied by
    ``plateau_factor`` after ``plateau_patience`` epochs without a validation
    improvement; training stops after ``early_stop`` such epochs.
    """
    train_H = np.asarray(train_H, dtype=np.complex128)
    val_H = np.asarray(val_H, dtype=np.complex128)
    if train_H.shape[0] < cfg.batch_size:
        raise ValueError(f"dataset of {train_H.shape[0]} samples is smaller than one batch ({cfg.batch_size})")
    if arch.in_dim == 3 and snr_spec is None:
        snr_spec = SnrFeatureSpec()
    if cfg.snr_db is None and snr_spec is None:
        raise ValueError("a random-SNR run needs an SnrFeatureSpec")
    rng = np.random.default_rng(cfg.seed)
    params = init.copy() if init is not None else GnnParams.init(arch, cfg.seed)
    if not params.matches(arch):
        raise ShapeMismatch("initial parameters do not match the architecture")

    if cfg.snr_db is not None:
        val_snr = np.full(val_H.shape[0], float(cfg.snr_db))
    else:
        grid = np.asarray(snr_spec.train_db, dtype=float)
        val_snr = grid[np.arange(val_H.shape[0]) % grid.size]

    def val_loss(p):
        return -float(np.mean(evaluate(p, arch, val_H, pa, P_T, val_snr, snr_spec)))

    best = params.copy()
    best_val = val_loss(params)
    result = TrainResult(params=best, history=[], best_epoch=0)
    if cfg.epochs == 0:
        return result
    opt = Adam(params.arrays(), cfg.lr, cfg.betas, cfg.eps)
    stale = 0
    since_drop = 0
    t_start = time.perf_counter()
    n = train_H.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for s in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            Hb = train_H[idx]
            if cfg.snr_db is not None:
                snr = np.full(idx.size, float(cfg.snr_db))
            else:
                snr = rng.choice(np.asarray(snr_spec.train_db, dtype=float), size=idx.size)
            feat = snr_spec.feature(snr) if arch.in_dim == 3 else None
            value, grads = loss_and_grad(params, arch, Hb, pa, _noise_for(snr, P_T), P_T, feat)
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
                raise Divergence(f"non-finite loss or gradient at epoch {epoch}", params=best, history=result.history)
            params = params.with_arrays(opt.step(params.arrays(), grads))
            losses.append(value)
        v = val_loss(params)
        if not np.isfinite(v):
            raise Divergence(f"non-finite validation loss at epoch {epoch}", params=best, history=result.history)
        result.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": v,
                               "lr": opt.lr, "seconds": time.perf_counter() - t0})
        log.info("epoch %d train %.4f val %.4f lr %.2e", epoch, np.mean(losses), v, opt.lr)
        if v < best_val:
            best_val, best = v, params.copy()
            result.best_epoch = epoch
            stale = since_drop = 0
        else:
            stale += 1
            since_drop += 1
            if since_drop >= cfg.plateau_patience:
                opt.lr *= cfg.plateau_factor
                since_drop = 0
            if stale >= cfg.early_stop:
                break
        if time_budget_s is not None and time.perf_counter() - t_start > time_budget_s:
            log.info("time budget reached after epoch %d", epoch)
            break
    result.params = best
    return result


def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def save_params(path, params: GnnParams, arch: GnnArch, cfg: TrainConfig | None = None,
                seed: int | None = None, dataset_fingerprint: str | None = None, extra: dict | None = None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": asdict(arch),
        "config": asdict(cfg) if cfg is not None else None,
        "seed": seed,
        "dataset_fingerprint": dataset_fingerprint,
        "extra": extra or {},
        "layers": [
            {name: {"shape": list(w.shape), "data": _b64(w)} for name, w in zip(("edge", "antenna", "user"), triple)}
            for triple in params.layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path, arch: GnnArch | None = None):
    """Read a checkpoint; returns (params, arch, header dict).

    If ``arch`` is given, the stored weights must fit it (ShapeMismatch otherwise).
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise VersionMismatch(f"not a GNN checkpoint: format={doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {doc.get('version')} != supported {CHECKPOINT_VERSION}")
    stored = doc["arch"]
    stored_arch = GnnArch(**stored)
    layers = []
    for layer in doc["layers"]:
        triple = []
        for name in ("edge", "antenna", "user"):
            blob = layer[name]
            a = np.frombuffer(base64.b64decode(blob["data"]), dtype="<f8").astype(np.float64)
            triple.append(a.reshape(blob["shape"]))
        layers.append(tuple(triple))
    params = GnnParams(layers)
    target = arch or stored_arch
    if not params.matches(target):
        raise ShapeMismatch(f"checkpoint weights (widths {stored_arch.widths}) do not fit widths {target.widths}")
    header = {k: v for k, v in doc.items() if k != "layers"}
    return params, target, header
