"""Distortion-aware beamforming: projected gradient ascent on the analytic sum rate.

All restarts advance together as one batch. After each step the precoder is
rescaled so that the *PA output* power ``E||phi(W s)||^2`` equals ``P_T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .bussgang import NoiseSpec, output_power_mc, sum_rate_analytic, symbol_batches
from .errors import NoBracket
from .objective import sum_rate_value_and_grad
from .pa import PolynomialPa
from .precoders import normalize_power, zf


@dataclass
class DabConfig:
    restarts: int = 50
    iterations: int = 1000
    step: str = "backtracking"  # or "decaying" / "fixed"
    mu0: float = 1e-2
    fd: bool = False
    fd_delta: float = 1e-5
    init_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.iterations < 1:
            raise ValueError("restarts and iterations must be >= 1")
        if not self.fd_delta > 0:
            raise ValueError("fd_delta must be positive")
        if self.step not in ("backtracking", "decaying", "fixed"):
            raise ValueError(f"unknown step rule {self.step!r}")


@dataclass
class DabResult:
    W: np.ndarray
    rate: float
    best_restart: int
    trace: np.ndarray = field(repr=False)  # (restarts, iterations + 1) objective per iterate

    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(self.trace.max(axis=0))

    def trace_rows(self):
        for p in range(self.trace.shape[0]):
            for i in range(self.trace.shape[1]):
                yield p, i, float(self.trace[p, i])


def fd_gradient(objective, W, delta: float = 1e-5, batched: bool = False) -> np.ndarray:
    """Forward-difference gradient d/dRe + j d/dIm of a real objective of a complex matrix.

    With ``batched=True`` the objective must accept a stack (B, M, K) and
    return B values; all 2MK + 1 evaluations are then done in one call.
    """
    W = np.asarray(W, dtype=np.complex128)
    M, K = W.shape
    n = M * K
    eye = np.eye(n).reshape(n, M, K)
    stack = np.concatenate([W[None], W[None] + delta * eye, W[None] + 1j * delta * eye])
    if batched:
        vals = np.asarray(objective(stack), dtype=float)
    else:
        vals = np.array([objective(w) for w in stack], dtype=float)
    base = vals[0]
    g = (vals[1:n + 1] - base) + 1j * (vals[n + 1:] - base)
    return (g / delta).reshape(M, K)


def _output_power_poly(W, pa: PolynomialPa) -> np.ndarray:
    """Total PA output power per batch entry; E|phi(x_m)|^2 only depends on E|x_m|^2."""
    p = np.sum(np.abs(W) ** 2, axis=-1)
    return np.sum(pa.output_power(p), axis=-1)


def _output_power_coeffs(pa: PolynomialPa) -> np.ndarray:
    """e_j with E|phi(x)|^2 = sum_j e_j p^j for x ~ CN(0, p), j = 0 .. 2N+1."""
    b = pa.coeffs
    e = np.zeros(2 * len(b), dtype=complex)
    for n in range(len(b)):
        for m in range(len(b)):
            e[n + m + 1] += b[n] * np.conj(b[m]) * factorial(n + m + 1)
    return e.real


def _scale_poly(W, pa: PolynomialPa, P_T: float):
    """Squared scale t with total output power of sqrt(t) W equal to P_T.

    Output power is sum_j e_j S_j t^j with S_j = sum_m p_m^j, so t is the
    smallest positive real root of that polynomial minus P_T (one batched
    companion-matrix eigenvalue call, then Newton polishing).
    """
    e = _output_power_coeffs(pa)
    J = len(e) - 1
    while J > 0 and e[J] == 0:
        J -= 1
    p = np.sum(W.real**2 + W.imag**2, axis=-1)  # (B, M)
    c = e[None, :J + 1] * np.stack([np.sum(p**j, axis=-1) for j in range(J + 1)], axis=-1)
    c[:, 0] = -P_T
    B = c.shape[0]
    comp = np.zeros((B, J, J))
    comp[:, np.arange(1, J), np.arange(J - 1)] = 1.0
    comp[:, :, -1] = -c[:, :J] / c[:, J:J + 1]
    roots = np.linalg.eigvals(comp)
    real = (np.abs(roots.imag) <= 1e-7 * np.maximum(1.0, np.abs(roots))) & (roots.real > 0)
    if not np.all(np.any(real, axis=-1)):
        raise NoBracket(f"PA output power cannot reach P_T={P_T}; the amplifier saturates below it")
    t = np.where(real, roots.real, np.inf).min(axis=-1)
    powers = np.arange(J + 1)
    for _ in range(3):
        f = np.sum(c * t[:, None] ** powers, axis=-1)
        df = np.sum(c[:, 1:] * powers[1:] * t[:, None] ** (powers[1:] - 1), axis=-1)
        t = np.where(df != 0, t - f / np.where(df != 0, df, 1), t)
    return t


def _bisect_scale(power_of_scale, W, P_T, rtol=1e-10, max_doublings=60):
    """Find c > 0 per batch entry with power_of_scale(c) = P_T."""
    base = np.sqrt(P_T / np.sum(np.abs(W) ** 2, axis=(-2, -1)))
    lo = np.zeros_like(base)
    hi = base.copy()
    for _ in range(max_doublings):
        short = power_of_scale(hi) < P_T
        if not np.any(short):
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, 2 * hi, hi)
    else:
        raise NoBracket(f"PA output power cannot reach P_T={P_T}; the amplifier saturates below it")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = power_of_scale(mid) < P_T
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= rtol * hi):
            break
    return 0.5 * (lo + hi)


def project_output_power(W, pa, P_T: float, n_mc: int = 1 << 16, seed: int = 0, method: str | None = None) -> np.ndarray:
    """Rescale W (single (M, K) or batched) so the expected PA output power equals P_T.

    Polynomial PAs solve the closed-form Gaussian output power for the
    scale; other PAs bisect on a Monte-Carlo estimate over a fixed symbol set
    (common random numbers keep the bisection monotone).
    """
    W = np.asarray(W, dtype=np.complex128)
    if not np.all(np.sum(np.abs(W) ** 2, axis=(-2, -1)) > 0):
        raise ValueError("cannot project a zero precoder")
    if method is None:
        method = "analytic" if isinstance(pa, PolynomialPa) else "mc"
    Wb = W[None] if W.ndim == 2 else W
    if method == "analytic":
        t = _scale_poly(Wb, pa, P_T)
        out = Wb * np.sqrt(t)[:, None, None]
        return out[0] if W.ndim == 2 else out
    if method == "mc":
        K = Wb.shape[-1]
        s = np.concatenate(list(symbol_batches(K, n_mc, seed)), axis=1)
        X = Wb @ s  # (B, M, n)

        def power_of_scale(c):
            y = pa(X * c[:, None, None])
            return np.sum(np.abs(y) ** 2, axis=(1, 2)) / n_mc
    else:
        raise ValueError(f"unknown projection method {method!r}")
    c = _bisect_scale(power_of_scale, Wb, P_T)
    out = Wb * c[:, None, None]
    return out[0] if W.ndim == 2 else out


def _init_restarts(H, P_T, cfg: DabConfig) -> np.ndarray:
    W0 = zf(H, P_T)
    M, K = W0.shape
    rng = np.random.default_rng(cfg.seed)
    scale = cfg.init_scale * np.sqrt(P_T / (M * K))
    noise = (rng.standard_normal((cfg.restarts, M, K)) + 1j * rng.standard_normal((cfg.restarts, M, K))) / np.sqrt(2)
    noise[0] = 0
    return normalize_power(W0[None] + scale * noise, P_T)


def dab_precode(H, pa: PolynomialPa, noise: NoiseSpec, P_T: float, cfg: DabConfig | None = None) -> DabResult:
    cfg = cfg or DabConfig()
    H = np.asarray(H, dtype=np.complex128)
    sigma2 = noise.sigma2
    P = cfg.restarts

    def rates_of(Ws):
        return sum_rate_analytic(H[None], Ws, pa, sigma2)

    def grads_of(Ws):
        if cfg.fd:
            rates = rates_of(Ws)
            g = np.stack([fd_gradient(rates_of, w, cfg.fd_delta, batched=True) for w in Ws])
            return rates, g
        Hb = np.broadcast_to(H, Ws.shape[:1] + H.shape)
        return sum_rate_value_and_grad(Hb, Ws, pa, sigma2)

    W = project_output_power(_init_restarts(H, P_T, cfg), pa, P_T)
    rate, grad = grads_of(W)
    trace = np.empty((P, cfg.iterations + 1))
    trace[:, 0] = rate
    mu = np.full(P, cfg.mu0)
    active = np.ones(P, dtype=bool)  # restarts whose line search still finds ascent
    for i in range(cfg.iterations):
        if cfg.step == "backtracking":
            pending = active.copy()
            new_W = W.copy()
            new_rate = rate.copy()
            for _ in range(40):
                idx = np.flatnonzero(pending)
                if idx.size == 0:
                    break
                cand = project_output_power(W[idx] + mu[idx, None, None] * grad[idx], pa, P_T)
                r = rates_of(cand)
                ok = r > rate[idx]
                new_W[idx[ok]] = cand[ok]
                new_rate[idx[ok]] = r[ok]
                pending[idx[ok]] = False
                mu[idx[~ok]] *= 0.5
            # no ascent within 40 halvings: a (numerical) stationary point, stop that restart
            active &= ~pending
            accepted = new_rate > rate
            mu[accepted] *= 2.0  # let the step grow back after a success
            W, rate = new_W, new_rate
            if np.any(accepted):
                _, g_new = grads_of(W[accepted])
                grad[accepted] = g_new
            trace[:, i + 1] = rate
            if not np.any(active):
                trace[:, i + 2:] = rate[:, None]
                break
        else:
            step = cfg.mu0 / (1 + i / 100) if cfg.step == "decaying" else cfg.mu0
            W = project_output_power(W + step * grad, pa, P_T)
            rate, grad = grads_of(W)
            trace[:, i + 1] = rate
    best = int(np.argmax(rate))  # argmax picks the lowest index on ties
    return DabResult(W=W[best], rate=float(rate[best]), best_restart=best, trace=trace)
