"""Radiation patterns, PA power consumption, FLOP counts and DSP sizing."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .bussgang import gain_diag, input_cov, output_power_analytic, output_power_mc, symbol_batches
from .bussgang import distortion_cov
from .channel import steering_vector
from .pa import PolynomialPa

ETA_MAX_CLASS_B = 0.785
SPEED_OF_LIGHT = 3e8
SDR_CAP_DB = 300.0


@dataclass
class RadiationPattern:
    theta_deg: np.ndarray
    p_lin: np.ndarray
    p_dist: np.ndarray

    @property
    def p_sdr(self) -> np.ndarray:
        """P_lin / P_dist, capped at SDR_CAP_DB where the distortion vanishes."""
        cap = 10 ** (SDR_CAP_DB / 10)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.p_dist > 0, self.p_lin / self.p_dist, cap)
        return np.minimum(r, cap)

    def rows(self):
        def db(x):
            with np.errstate(divide="ignore"):
                return 10 * np.log10(np.maximum(x, 1e-300))
        for t, a, b, c in zip(self.theta_deg, db(self.p_lin), db(self.p_dist), db(self.p_sdr)):
            yield {"theta_deg": float(t), "p_lin_db": float(a), "p_dist_db": float(b), "p_sdr_db": float(c)}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["theta_deg", "p_lin_db", "p_dist_db", "p_sdr_db"])
            w.writeheader()
            w.writerows(self.rows())


def _steering_grid(M: int, theta_deg, spacing: float) -> np.ndarray:
    """(T, M) matrix whose rows are the steering vectors towards each angle."""
    return np.stack([steering_vector(M, t, spacing) for t in np.atleast_1d(theta_deg)])


def _quad(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """a^T C a^* for every row a of A: the power radiated towards each angle."""
    return np.real(np.einsum("tm,mn,tn->t", A, C, np.conj(A)))


def nonlinear_cov(W, pa: PolynomialPa) -> np.ndarray:
    """Covariance of the nonlinear-only term phi(x) - beta_1 x for Gaussian x = W s.

    From E[y y^H] = G C_x G^H + C_e and E[y x^H] = G C_x.
    """
    Cx = input_cov(W)
    g = gain_diag(W, pa)
    b1 = pa.coeffs[0]
    GC = g[:, None] * Cx
    Cy = GC * np.conj(g)[None, :] + distortion_cov(W, pa)
    return Cy - b1 * np.conj(GC).T - np.conj(b1) * GC + abs(b1) ** 2 * Cx


def radiation_pattern(W, pa, theta_deg, spacing: float = 0.5, method: str | None = None,
                      distortion: str = "nonlinear", n_mc: int = 1 << 18, seed: int = 0) -> RadiationPattern:
    """Power radiated towards each angle by the linear part and by the distortion.

    Args:
        W: precoder (M, K).
        pa: PolynomialPa for the analytic path; any callable PA works with
            ``method="mc"``.
        theta_deg: angle grid in degrees.
        spacing: antenna spacing in wavelengths.
        method: "analytic" (default for polynomial PAs) or "mc".
        distortion: "nonlinear" radiates ``sum_{n>=1} beta_{2n+1} x|x|^{2n}``;
            "bussgang" radiates the residual ``phi(x) - G x`` (uncorrelated
            with x). They differ by how the linear gain is attributed.
    """
    W = np.asarray(W, dtype=np.complex128)
    theta = np.asarray(theta_deg, dtype=float)
    A = _steering_grid(W.shape[0], theta, spacing)
    p_lin = _quad(A, input_cov(W))
    if distortion not in ("nonlinear", "bussgang"):
        raise ValueError(f"unknown distortion definition {distortion!r}")
    poly = isinstance(pa, PolynomialPa)
    if method is None:
        method = "analytic" if poly else "mc"
    if method == "analytic":
        if not poly:
            raise TypeError("the analytic radiation pattern needs a PolynomialPa")
        C = nonlinear_cov(W, pa) if distortion == "nonlinear" else distortion_cov(W, pa)
        p_dist = np.maximum(_quad(A, C), 0.0)
    elif method == "mc":
        p_dist = _pattern_mc(W, pa, A, distortion, n_mc, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return RadiationPattern(theta, p_lin, p_dist)


def _pattern_mc(W, pa, A, distortion, n_mc, seed):
    M, K = W.shape
    if distortion == "nonlinear" and isinstance(pa, PolynomialPa):
        def residual(x):
            return pa(x) - pa.coeffs[0] * x
    else:
        # Bussgang gains first, then the residual in a second pass over the same symbols
        xy = np.zeros(M, dtype=complex)
        xx = np.zeros(M)
        for s in symbol_batches(K, n_mc, seed):
            x = W @ s
            xy += np.sum(pa(x) * np.conj(x), axis=1)
            xx += np.sum(np.abs(x) ** 2, axis=1)
        g = np.where(xx > 0, xy / np.where(xx > 0, xx, 1), 0)

        def residual(x):
            return pa(x) - g[:, None] * x
    acc = np.zeros(A.shape[0])
    for s in symbol_batches(K, n_mc, seed):
        e = residual(W @ s)
        r = A @ e  # (T, b)
        acc += np.sum(r.real**2 + r.imag**2, axis=1)
    return acc / n_mc


def pa_consumed_power(W, pa, p_sat: float, eta_max: float = ETA_MAX_CLASS_B, method: str | None = None,
                      n_mc: int = 1 << 20, seed: int = 0) -> float:
    """Class-B PA consumption (sqrt(p_sat) / eta_max) * sum_m sqrt(E|y_m|^2), in units of p_in."""
    p_m = pa_output_powers(W, pa, method, n_mc, seed)
    return float(np.sqrt(p_sat) / eta_max * np.sum(np.sqrt(np.maximum(p_m, 0.0))))


def pa_output_powers(W, pa, method: str | None = None, n_mc: int = 1 << 20, seed: int = 0) -> np.ndarray:
    W = np.asarray(W, dtype=np.complex128)
    poly = isinstance(pa, PolynomialPa)
    if method is None:
        method = "analytic" if poly else "mc"
    if method == "analytic":
        if not poly:
            raise TypeError("analytic output power needs a PolynomialPa")
        return output_power_analytic(W, pa)
    if method == "mc":
        return output_power_mc(W, pa, n_mc, seed)
    raise ValueError(f"unknown method {method!r}")


def power_for_rate(p_cons, rates, target: float) -> float:
    """Least consumed power at which an operating curve reaches ``target`` rate.

    The curve is the set of (p_cons, rate) points of one precoder across IBO
    values. Its best rate for a power budget p is the running maximum over
    points with p_cons <= p, linearly interpolated between points. Returns
    ``inf`` when no point reaches the target.
    """
    p = np.asarray(p_cons, dtype=float)
    r = np.asarray(rates, dtype=float)
    order = np.argsort(p)
    p, r = p[order], np.maximum.accumulate(r[order])
    if target <= r[0]:
        return float(p[0])
    if target > r[-1]:
        return float("inf")
    i = int(np.searchsorted(r, target))  # first point with r[i] >= target; r[i - 1] < target
    frac = (target - r[i - 1]) / (r[i] - r[i - 1])
    return float(p[i - 1] + frac * (p[i] - p[i - 1]))


# ---------------------------------------------------------------- complexity

def _gnn_mults(M, K, d, L):
    return M * K * (6 * d + (L - 2) * 3 * d * d + 6 * d)


def _gnn_adds(M, K, d, L, message_layers):
    per_edge = 5 * d + 2 * (M - 1 + K - 1) + (L - 2) * (3 * d * d - d) + message_layers * d * (M - 1 + K - 1) + 6 * d - 2
    return M * K * per_edge


def flops(precoder: str, M: int, K: int, d: int = 128, L: int = 8, P: int = 50, I: int = 1000) -> dict:
    """Real multiplication / addition counts of one precoder evaluation.

    GNN additions count the message sums of every layer after the input one
    (L - 1 of them). ``adds_total_formula`` additionally reports the
    closed-form total that only charges L - 2 such layers; it is the figure
    behind the usual quoted forward-pass cost (about 164.6 MFLOP at M=64, K=4).
    ``serial_flops`` is the work left for one edge when all edges run in
    parallel.
    """
    for name, v in (("M", M), ("K", K), ("d", d), ("L", L), ("P", P), ("I", I)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    if precoder == "gnn":
        if L < 2:
            raise ValueError("the GNN needs L >= 2")
        mults = _gnn_mults(M, K, d, L)
        adds = _gnn_adds(M, K, d, L, L - 1)
        adds_total = _gnn_adds(M, K, d, L, L - 2)
        return {"precoder": "gnn", "mults": mults, "adds": adds, "flops": mults + adds,
                "adds_total_formula": adds_total, "flops_total_formula": mults + adds_total,
                "serial_flops": (mults + adds) // (M * K)}
    if precoder == "zf":
        mults = 8 * M * K**2 + 2 * K**3 + 6 * K**2
        adds = 8 * M * K**2 + 2 * K**3
        return {"precoder": "zf", "mults": mults, "adds": adds, "flops": mults + adds, "serial_flops": mults + adds}
    if precoder == "dab":
        adds = P * I * (60 * M**4 * K**2 + 24 * M**3 * K**3 + 12 * M**3 * K**2 + 12 * M**2 * K**3
                        + 420 * M**2 * K**2 + 15 * M * K**2 + 4 * M * K)
        mults = P * I * (60 * M**4 * K**2 + 24 * M**3 * K**3 - 24 * M**3 * K**2 + 6 * M**2 * K**3
                         + 324 * M**2 * K**2 - 3 * M * K**3 + 3 * M * K**2 + 6 * M * K)
        return {"precoder": "dab", "mults": mults, "adds": adds, "flops": mults + adds, "serial_flops": mults + adds}
    raise ValueError(f"no FLOP model for precoder {precoder!r}")


class OpCounter:
    """Counts the real scalar multiplies and adds of the primitives it executes."""

    def __init__(self):
        self.mults = 0
        self.adds = 0

    def matvec(self, A: np.ndarray, x: np.ndarray) -> np.ndarray:
        out = np.empty(A.shape[0])
        for i in range(A.shape[0]):
            acc = A[i, 0] * x[0]
            self.mults += 1
            for j in range(1, A.shape[1]):
                acc = acc + A[i, j] * x[j]
                self.mults += 1
                self.adds += 1
            out[i] = acc
        return out

    def vsum(self, vectors) -> np.ndarray:
        acc = np.array(vectors[0], dtype=float)
        for v in vectors[1:]:
            acc = acc + v
            self.adds += acc.size
        return acc


def gnn_forward_counted(params, arch, H, snr_feature=None):
    """Edge-by-edge GNN forward pass that counts its arithmetic.

    Each edge sums its own neighbourhood messages and applies its three
    weight matrices; the 1/|N| of the means is folded into the message
    weights beforehand (a per-network constant, not per-edge work). The
    activation and the final power normalisation are not counted.
    Returns (unnormalised output (M, K, 2), OpCounter).
    """
    H = np.asarray(H, dtype=np.complex128)
    M, K = H.shape
    cnt = OpCounter()
    feats = [H.real, H.imag] + ([np.full(H.shape, float(snr_feature))] if snr_feature is not None else [])
    z = np.stack(feats, axis=-1)
    n_ant = K if arch.include_self else max(K - 1, 1)
    n_usr = M if arch.include_self else max(M - 1, 1)
    for l, (We, Wm, Wk) in enumerate(params.layers):
        Wm_s, Wk_s = Wm / n_ant, Wk / n_usr
        new = np.empty(z.shape[:2] + (We.shape[0],))
        for m in range(M):
            for k in range(K):
                ant_edges = [z[m, kk] for kk in range(K) if arch.include_self or kk != k]
                usr_edges = [z[mm, k] for mm in range(M) if arch.include_self or mm != m]
                ant = cnt.vsum(ant_edges) if ant_edges else np.zeros(z.shape[-1])
                usr = cnt.vsum(usr_edges) if usr_edges else np.zeros(z.shape[-1])
                pre = cnt.vsum([cnt.matvec(We, z[m, k]), cnt.matvec(Wm_s, ant), cnt.matvec(Wk_s, usr)])
                if l < arch.layers - 1:
                    pre = np.maximum(pre, arch.slope * pre)
                new[m, k] = pre
        z = new
    return z, cnt


def dsp_sizing(carrier_hz: float, velocity_mps: float, flops_per_pass: float, duty_fraction: float = 0.10) -> dict:
    """Coherence time T_c = 1 / (2 f_m), f_m = v f_c / c, and the compute rate needed
    to finish one forward pass within ``duty_fraction`` of T_c."""
    for name, v in (("carrier_hz", carrier_hz), ("velocity_mps", velocity_mps),
                    ("flops_per_pass", flops_per_pass), ("duty_fraction", duty_fraction)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    f_m = velocity_mps / SPEED_OF_LIGHT * carrier_hz
    t_c = 1 / (2 * f_m)
    return {"doppler_hz": f_m, "coherence_s": t_c, "required_ops_per_s": flops_per_pass / (duty_fraction * t_c)}
