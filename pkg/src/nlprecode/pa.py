"""Memoryless power-amplifier models.

Three transfer functions are provided: an odd-order complex polynomial, the
modified Rapp model (AM/AM plus AM/PM) and a soft limiter standing in for an
ideal digital predistorter. All of them act element-wise on complex arrays.

The polynomial coefficients used throughout the experiments come from a
least-squares fit of the polynomial to the Rapp model (``fit_polynomial``);
the published 11th-order sets are embedded in ``APPENDIX_TABLE``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Union

import numpy as np

from .errors import IllConditionedBasis, UnknownIbo

ArrayLike = Union[complex, np.ndarray]


@dataclass(frozen=True)
class IboSpec:
    ibo_db: float
    p_in: float = 1.0

    def __post_init__(self):
        if not self.p_in > 0:
            raise ValueError(f"p_in must be positive, got {self.p_in}")


def psat_from_ibo(spec: IboSpec) -> float:
    """Saturation power giving ``IBO = p_in / p_sat`` at the requested back-off."""
    if not spec.p_in > 0:
        raise ValueError("p_in must be positive")
    return spec.p_in / 10 ** (spec.ibo_db / 10)


@dataclass(frozen=True, eq=False)
class PolynomialPa:
    """phi(x) = sum_n coeffs[n] * x * |x|^(2n); coeffs = [b1, b3, ..., b_{2N+1}]."""

    coeffs: np.ndarray
    kind: str = field(default="poly", init=False)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=np.complex128)).copy()
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a non-empty 1-D sequence")
        if c[0] == 0:
            raise ValueError("linear coefficient b1 must be non-zero")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def order_index(self) -> int:
        return self.coeffs.size - 1

    @property
    def order(self) -> int:
        return 2 * self.order_index + 1

    @property
    def is_linear(self) -> bool:
        return self.order_index == 0 or not np.any(self.coeffs[1:])

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return poly_apply(self, x)

    def __eq__(self, other):
        return isinstance(other, PolynomialPa) and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __repr__(self):
        return f"PolynomialPa(order={self.order}, coeffs={self.coeffs.tolist()})"

    # Gaussian-input moments, used by the Bussgang formulas and power checks.
    def bussgang_gain(self, p):
        """E[phi(x) x*] / E|x|^2 for x ~ CN(0, p); vectorised over p."""
        p = np.asarray(p, dtype=float)
        return sum(factorial(n + 1) * b * p**n for n, b in enumerate(self.coeffs))

    def output_power(self, p):
        """E|phi(x)|^2 for x ~ CN(0, p), from E|x|^{2j} = j! p^j."""
        p = np.asarray(p, dtype=float)
        out = np.zeros_like(p, dtype=complex)
        for n, bn in enumerate(self.coeffs):
            for m, bm in enumerate(self.coeffs):
                j = n + m + 1
                out = out + bn * np.conj(bm) * factorial(j) * p**j
        return out.real


@dataclass(frozen=True)
class RappPa:
    p_sat: float
    S: float = 2.0
    q: float = 4.0
    A: float = -0.315
    B: float = 1.137
    kind: str = field(default="rapp", init=False)

    def __post_init__(self):
        if not self.p_sat > 0 or not self.S > 0:
            raise ValueError("p_sat and S must be positive")

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return rapp_apply(self, x)


@dataclass(frozen=True)
class SoftLimiterPa:
    p_sat: float
    kind: str = field(default="softlimiter", init=False)

    def __post_init__(self):
        if not self.p_sat > 0:
            raise ValueError("p_sat must be positive")

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return softlimiter_apply(self, x)


@dataclass(frozen=True)
class LinearPa:
    """Unit-gain ideal amplifier; convenient as a ``pa_fn`` for Monte-Carlo paths."""

    kind: str = field(default="linear", init=False)

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return np.asarray(x)


def poly_apply(pa: PolynomialPa, x: ArrayLike) -> ArrayLike:
    x = np.asarray(x, dtype=np.complex128)
    r2 = x.real**2 + x.imag**2
    # Horner in |x|^2
    acc = np.full_like(x, pa.coeffs[-1])
    for b in pa.coeffs[-2::-1]:
        acc = acc * r2 + b
    return x * acc


def rapp_am_am(pa: RappPa, amp):
    amp = np.asarray(amp, dtype=float)
    return amp / (1 + (amp / np.sqrt(pa.p_sat)) ** (2 * pa.S)) ** (1 / (2 * pa.S))


def rapp_am_pm(pa: RappPa, amp):
    amp = np.asarray(amp, dtype=float)
    return pa.A * amp**pa.q / (1 + (amp / pa.B) ** pa.q)


def rapp_apply(pa: RappPa, x: ArrayLike) -> ArrayLike:
    x = np.asarray(x, dtype=np.complex128)
    amp = np.abs(x)
    out_amp = rapp_am_am(pa, amp)
    # unit phasor of x, with 0 -> 0
    with np.errstate(invalid="ignore", divide="ignore"):
        phasor = np.where(amp > 0, x / np.where(amp > 0, amp, 1.0), 0.0)
    return out_amp * phasor * np.exp(1j * rapp_am_pm(pa, amp))


def softlimiter_apply(pa: SoftLimiterPa, x: ArrayLike) -> ArrayLike:
    x = np.asarray(x, dtype=np.complex128)
    amp = np.abs(x)
    a_sat = np.sqrt(pa.p_sat)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(amp > a_sat, a_sat / np.where(amp > 0, amp, 1.0), 1.0)
    return x * scale


# Upper edge of the amplitude grid used by the default fit.
# These reproduce the published 3rd- and 11th-order coefficient sets.
DEFAULT_AMP_MAX = {1: 3.0}
FALLBACK_AMP_MAX = 8.0


def default_amp_max(order_index: int) -> float:
    return DEFAULT_AMP_MAX.get(order_index, FALLBACK_AMP_MAX)


def fit_polynomial(
    rapp,
    spec: IboSpec,
    order_index: int,
    n_fit: int = 100_000,
    seed: int = 0,
    method: str = "grid",
    amp_max: float | None = None,
    fix_linear: bool = True,
    return_info: bool = False,
):
    """Least-squares fit of a (2N+1)-order polynomial PA to another PA model.

    ``rapp`` may be any callable PA (Rapp, soft limiter, another polynomial).
    With ``method="grid"`` the samples are ``n_fit`` amplitudes evenly spaced
    on ``[0, amp_max]`` (the AM/PM makes the fit complex even on real inputs);
    with ``method="gaussian"`` they are i.i.d. CN(0, p_in) draws. When
    ``fix_linear`` is set, b1 is pinned to 1 and only b3..b_{2N+1} are fitted.

    The basis ``u |u|^{2n}`` is built on inputs scaled by ``sqrt(p_in)`` and
    the coefficients are mapped back afterwards.
    """
    if order_index < 1:
        raise ValueError("order_index must be >= 1")
    if method == "grid":
        if amp_max is None:
            amp_max = default_amp_max(order_index)
        x = np.linspace(0.0, amp_max, n_fit).astype(np.complex128)
    elif method == "gaussian":
        rng = np.random.default_rng(seed)
        x = np.sqrt(spec.p_in / 2) * (rng.standard_normal(n_fit) + 1j * rng.standard_normal(n_fit))
    else:
        raise ValueError(f"unknown fit method {method!r}")

    y = np.asarray(rapp(x), dtype=np.complex128)
    s = np.sqrt(spec.p_in)
    u = x / s
    r2 = np.abs(u) ** 2
    basis = np.stack([u * r2**n for n in range(order_index + 1)], axis=1)
    target = y / s
    if fix_linear:
        target = target - u
        basis = basis[:, 1:]
    cond = np.linalg.cond(basis)
    if not np.isfinite(cond) or cond > 1e14:
        raise IllConditionedBasis(f"fit basis condition number {cond:.3g}")
    gamma, *_ = np.linalg.lstsq(basis, target, rcond=None)
    if fix_linear:
        gamma = np.concatenate([[1.0 + 0j], gamma])
    coeffs = gamma / spec.p_in ** np.arange(order_index + 1)
    pa = PolynomialPa(coeffs)
    if not return_info:
        return pa
    resid = np.asarray(pa(x)) - y
    return pa, {"cond": float(cond), "rmse": float(np.sqrt(np.mean(np.abs(resid) ** 2)))}


# Published 11th-order coefficient sets, b1 = 1, rows keyed by IBO in dB.
# Column scale factors: b3 1e-2, b5 1e-3, b7 1e-5, b9 1e-7, b11 1e-9.
_TABLE_SCALES = (1e-2, 1e-3, 1e-5, 1e-7, 1e-9)
_TABLE_RAW = {
    -9.0: ("-4.38184836-10.1466832j", "1.50490437+8.422084885j", "-3.13452827-28.1868627j",
           "3.49967293+42.06333106j", "-1.59432984-23.1868139j"),
    -7.5: ("-5.79334438-9.36769411j", "2.39315994+7.94859107j", "-5.57663136-26.92641291j",
           "6.65066314+40.4837957j", "-3.14808144-22.4280442j"),
    -6.0: ("-7.50994886-8.42352484j", "3.66782506+7.26453523j", "-9.54049052-24.8371067j",
           "12.2703316+37.5613932j", "-6.13183499-20.8924283j"),
    -4.5: ("-9.35828409-7.41305601j", "5.16172165+6.46522185j", "-14.4481282-22.2483069j",
           "19.4963213+33.7874265j", "-10.0752209-18.8479147j"),
    -3.0: ("-11.1143930-6.30816977j", "6.60156653+5.47141526j", "-19.1451680-18.6610370j",
           "26.2822435+28.0380833j", "-13.6811147-15.4579691j"),
    -1.5: ("-12.903319-5.49758824j", "8.21176444+4.85204392j", "-24.8588087-16.8144990j",
           "35.2215545+25.6527492j", "-18.8139985-14.3562319j"),
    0.0: ("-14.4473655-4.67375592j", "9.58442261+4.13617338j", "-29.6362436-14.3570171j",
          "42.5309097+21.9271142j", "-22.9128062-12.2805850j"),
}

APPENDIX_TABLE = {
    ibo: np.array([1.0 + 0j] + [complex(v) * s for v, s in zip(row, _TABLE_SCALES)])
    for ibo, row in _TABLE_RAW.items()
}

# Third-order model at -3 dB IBO used for the single-user experiments.
THIRD_ORDER_M3DB = PolynomialPa([1.0, -77.82e-3 - 40.12e-3j])


def appendix_coeffs(ibo_db: float) -> PolynomialPa:
    for ibo, coeffs in APPENDIX_TABLE.items():
        if abs(ibo - ibo_db) < 1e-9:
            return PolynomialPa(coeffs)
    raise UnknownIbo(f"no tabulated coefficients at IBO {ibo_db} dB; have {sorted(APPENDIX_TABLE)}")


def rapp_for_ibo(ibo_db: float, p_in: float = 1.0, **kw) -> RappPa:
    return RappPa(p_sat=psat_from_ibo(IboSpec(ibo_db, p_in)), **kw)


def softlimiter_for_ibo(ibo_db: float, p_in: float = 1.0) -> SoftLimiterPa:
    return SoftLimiterPa(p_sat=psat_from_ibo(IboSpec(ibo_db, p_in)))


def pa_to_dict(pa, ibo_db=None, p_in=None) -> dict:
    if isinstance(pa, PolynomialPa):
        d = {"kind": "poly", "coeffs": [[c.real, c.imag] for c in pa.coeffs]}
    elif isinstance(pa, RappPa):
        d = {"kind": "rapp", "p_sat": pa.p_sat, "S": pa.S, "q": pa.q, "A": pa.A, "B": pa.B}
    elif isinstance(pa, SoftLimiterPa):
        d = {"kind": "softlimiter", "p_sat": pa.p_sat}
    elif isinstance(pa, LinearPa):
        d = {"kind": "linear"}
    else:
        raise TypeError(f"cannot serialise {type(pa).__name__}")
    if ibo_db is not None:
        d["ibo_db"] = ibo_db
    if p_in is not None:
        d["p_in"] = p_in
    return d


def pa_from_dict(d: dict):
    """Inverse of :func:`pa_to_dict`.

    A descriptor may give ``ibo_db`` (and ``p_in``) instead of ``p_sat``. A
    ``poly`` descriptor without coefficients takes ``order`` (default 11):
    the tabulated set is used when one exists for that order and IBO, unless
    ``"fit": true``; otherwise the polynomial is fitted to the Rapp model.
    """
    kind = d.get("kind")
    p_in = d.get("p_in", 1.0)
    if kind == "poly":
        if "coeffs" in d:
            return PolynomialPa([complex(*c) if isinstance(c, (list, tuple)) else complex(c) for c in d["coeffs"]])
        order = int(d.get("order", 11))
        if order < 3 or order % 2 == 0:
            raise ValueError(f"polynomial order must be odd and >= 3, got {order}")
        ibo = d["ibo_db"]
        if not d.get("fit", False) and p_in == 1.0:
            if order == 11 and any(abs(ibo - t) < 1e-9 for t in APPENDIX_TABLE):
                return appendix_coeffs(ibo)
            if order == 3 and abs(ibo + 3.0) < 1e-9:
                return THIRD_ORDER_M3DB
        spec = IboSpec(ibo, p_in)
        return fit_polynomial(RappPa(psat_from_ibo(spec)), spec, (order - 1) // 2)
    if kind in ("rapp", "softlimiter"):
        p_sat = d.get("p_sat")
        if p_sat is None:
            p_sat = psat_from_ibo(IboSpec(d["ibo_db"], p_in))
        if kind == "softlimiter":
            return SoftLimiterPa(p_sat)
        extra = {k: d[k] for k in ("S", "q", "A", "B") if k in d}
        return RappPa(p_sat=p_sat, **extra)
    if kind == "linear":
        return LinearPa()
    raise ValueError(f"unknown PA kind {kind!r}")
