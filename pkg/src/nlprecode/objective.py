"""Distortion-aware sum rate written with the gradient engine's operations.

Mirrors ``bussgang.sum_rate_analytic`` term by term so that the GNN loss and
the DAB gradient can be differentiated with respect to the precoder.
"""
from __future__ import annotations

from math import comb, factorial

import numpy as np

from . import grad as G
from .grad import CTensor, Tensor
from .pa import PolynomialPa


def _real_poly(d: Tensor, coeffs) -> CTensor:
    """sum_n coeffs[n] * d**n for real tensor d and complex constant coeffs."""
    re = None
    im = None
    for n, c in enumerate(coeffs):
        if c == 0:
            continue
        term = G.power(d, n) if n else None
        if term is None:
            tr = Tensor(np.full(d.shape, c.real))
            ti = Tensor(np.full(d.shape, c.imag))
        else:
            tr = G.mul(term, c.real)
            ti = G.mul(term, c.imag)
        re = tr if re is None else G.add(re, tr)
        im = ti if im is None else G.add(im, ti)
    if re is None:
        zero = Tensor(np.zeros(d.shape))
        return CTensor(zero, zero)
    return CTensor(re, im)


def l_coefficients(pa: PolynomialPa) -> list:
    """Per n = 1..N, the complex polynomial coefficients (in powers of d) of L_n."""
    N = pa.order_index
    out = []
    for n in range(1, N + 1):
        c = np.zeros(N - n + 1, dtype=complex)
        for l in range(n, N + 1):
            c[l - n] = comb(l, n) * factorial(l + 1) * pa.coeffs[l] / np.sqrt(n + 1)
        out.append(c)
    return out


def gain_coefficients(pa: PolynomialPa) -> np.ndarray:
    return np.array([factorial(n + 1) * b for n, b in enumerate(pa.coeffs)])


def sum_rate_tape(H, W: CTensor, pa: PolynomialPa, sigma2) -> Tensor:
    """Per-instance sum rate, shape (B,), for channels H (B, M, K) and precoders W.

    ``sigma2`` is a scalar or a length-B array of noise variances.
    """
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim == 2:
        H = H[None]
    Hc = CTensor.const(H)
    HT = CTensor.const(np.swapaxes(H, -1, -2))

    d = G.reduce_sum(W.abs2(), axis=-1)  # (B, M) per-antenna input power
    g = _real_poly(d, gain_coefficients(pa))
    GW = W * g.expand_dims(-1)
    A = HT @ GW  # (B, K, K), A[k, k'] = h_k^T G w_k'
    P = A.abs2()
    desired = G.diag_extract(P)
    interference = G.sub(G.reduce_sum(P, axis=-1), desired)
    noise_plus = interference

    if not pa.is_linear:
        Cx = W @ W.H()
        a2 = Cx.abs2()
        dist = None
        for n, lc in enumerate(l_coefficients(pa), start=1):
            ln = _real_poly(d, lc)
            U = Hc * ln.expand_dims(-1)  # u_mk = h_mk l_m
            T = Cx.scale(G.power(a2, n))
            V = T @ U.conj()
            term = G.reduce_sum(G.sub(G.mul(U.re, V.re), G.mul(U.im, V.im)), axis=-2)
            dist = term if dist is None else G.add(dist, term)
        noise_plus = G.add(noise_plus, dist)

    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma2.ndim:
        sigma2 = sigma2.reshape(-1, 1)
    snidr = G.div(desired, G.add(noise_plus, sigma2))
    return G.reduce_sum(G.log2(G.add(snidr, 1.0)), axis=-1)


def sum_rate_value_and_grad(H, W: np.ndarray, pa: PolynomialPa, sigma2):
    """Sum rates (B,) and their gradients d/dRe W + j d/dIm W, shape like W."""
    W = np.asarray(W, dtype=np.complex128)
    squeeze = W.ndim == 2
    if squeeze:
        W = W[None]
    with G.Tape() as tape:
        Wt = CTensor(tape.leaf(W.real), tape.leaf(W.imag))
        rates = sum_rate_tape(H, Wt, pa, sigma2)
        total = G.reduce_sum(rates)
        tape.backward(total)
    grad = Wt.grad()
    if squeeze:
        return float(rates.value[0]), grad[0]
    return rates.value, grad
