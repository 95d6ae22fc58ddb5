"""Closed-form benchmark precoders and the shared power normalisation.

All functions return plain complex arrays of shape (M, K) (or (..., M, K) for
batched input where noted) scaled so that ``trace(W W^H) = P_T``.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import SingularChannel, ZeroChannel, ZeroGainSaturatedAntenna, ZeroMatrix

PRECODER_NAMES = ("mrt", "zf", "z3ro", "dab", "gnn")


def normalize_power(W_raw, P_T: float) -> np.ndarray:
    W_raw = np.asarray(W_raw, dtype=np.complex128)
    power = np.sum(W_raw.real**2 + W_raw.imag**2, axis=(-2, -1), keepdims=True)
    if np.any(power == 0) or not np.all(np.isfinite(power)):
        raise ZeroMatrix("cannot normalise a zero (or non-finite) precoding matrix")
    return W_raw * np.sqrt(P_T / power)


def mrt(H, P_T: float) -> np.ndarray:
    H = np.asarray(H, dtype=np.complex128)
    if not np.any(H):
        raise ZeroChannel("MRT of an all-zero channel")
    return normalize_power(np.conj(H), P_T)


def zf(H, P_T: float) -> np.ndarray:
    """alpha H^* (H^T H^*)^{-1}, inverting the K x K Gram matrix through Cholesky.

    Accepts (M, K) or batched (..., M, K) channels.
    """
    H = np.asarray(H, dtype=np.complex128)
    M, K = H.shape[-2:]
    if K > M:
        raise SingularChannel(f"zero-forcing needs K <= M, got M={M}, K={K}")
    if H.ndim > 2:
        return np.stack([zf(h, P_T) for h in H.reshape((-1, M, K))]).reshape(H.shape)
    Hc = np.conj(H)
    gram = H.T @ Hc  # Hermitian positive definite when H has full column rank
    try:
        c, low = scipy.linalg.cho_factor(gram, lower=True)
        inv = scipy.linalg.cho_solve((c, low), np.eye(K))
    except np.linalg.LinAlgError as exc:
        raise SingularChannel("channel Gram matrix is not positive definite") from exc
    if not np.all(np.isfinite(inv)) or np.linalg.cond(gram) > 1e12:
        raise SingularChannel("channel Gram matrix is numerically singular")
    return normalize_power(Hc @ inv, P_T)


def zf_alpha(H, P_T: float) -> float:
    """ZF normalisation constant: H^T W_zf = alpha I."""
    W = zf(H, P_T)
    return float(np.real(np.trace(np.asarray(H).T @ W)) / W.shape[1])


def z3ro(h, P_T: float, M_s: int = 1) -> np.ndarray:
    """Single-user precoder that nulls the third-order distortion at the user.

    Antennas ``0..M_s-1`` are driven with opposite phase and gain ``gamma``,
    the rest follow MRT. Returns shape (M, 1).
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim == 2:
        if h.shape[1] != 1:
            raise ValueError(f"Z3RO is single-user; got K={h.shape[1]}")
        h = h[:, 0]
    M = h.shape[0]
    if not 1 <= M_s < M:
        raise ValueError(f"need 1 <= M_s < M, got M_s={M_s}, M={M}")
    a4 = np.abs(h) ** 4
    sat = np.sum(a4[:M_s])
    if sat == 0:
        raise ZeroGainSaturatedAntenna("saturated antennas have zero channel gain")
    gamma = (np.sum(a4[M_s:]) / sat) ** (1 / 3)
    scale = np.ones(M)
    scale[:M_s] = -gamma
    return normalize_power((np.conj(h) * scale)[:, None], P_T)


def third_order_residual(h, w) -> tuple:
    """(|sum_m h_m w_m |w_m|^2|, sum_m |h_m| |w_m|^3) for a single-user precoder."""
    h = np.ravel(h)
    w = np.ravel(w)
    return abs(np.sum(h * w * np.abs(w) ** 2)), float(np.sum(np.abs(h) * np.abs(w) ** 3))
