"""Channel generation and the binary channel-dataset format.

Dataset layout (little-endian)::

    b"MMC1" | u8 version=1 | u8 dist tag | u16 reserved=0
    | u32 M | u32 K | u64 n | u64 seed
    | n*M*K complex64 entries (f32 re, f32 im), sample-major, antenna-major, then user
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AngleOutOfRange, BadMagic, DimensionMismatch, InvalidDimensions

MAGIC = b"MMC1"
VERSION = 1
DIST_TAGS = {"rayleigh": 0, "los": 1}
_HEADER = struct.Struct("<4sBBHIIQQ")


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """n channel matrices of shape (M, K) stored as complex64, the on-disk precision."""

    samples: np.ndarray
    seed: int
    distribution: str = "rayleigh"
    M: int = field(init=False)
    K: int = field(init=False)

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.complex64)
        if s.ndim != 3:
            raise InvalidDimensions(f"samples must be (n, M, K), got shape {s.shape}")
        n, M, K = s.shape
        if not M >= K >= 1:
            raise InvalidDimensions(f"need M >= K >= 1, got M={M}, K={K}")
        if not np.all(np.isfinite(s)):
            raise ValueError("channel entries must be finite")
        if self.distribution not in DIST_TAGS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "K", K)

    def __len__(self):
        return self.samples.shape[0]

    def __getitem__(self, i):
        return self.samples[i].astype(np.complex128)

    def as_complex128(self) -> np.ndarray:
        return self.samples.astype(np.complex128)

    def __eq__(self, other):
        return (
            isinstance(other, ChannelSet)
            and self.seed == other.seed
            and self.distribution == other.distribution
            and np.array_equal(self.samples, other.samples)
        )

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(f"{self.distribution}:{self.seed}:{self.samples.shape}".encode())
        h.update(self.samples.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class LosGeometry:
    user_angles_deg: tuple
    pathloss: tuple | None = None
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        angles = tuple(float(a) for a in np.atleast_1d(self.user_angles_deg))
        object.__setattr__(self, "user_angles_deg", angles)
        pl = (1.0,) * len(angles) if self.pathloss is None else tuple(float(b) for b in np.atleast_1d(self.pathloss))
        object.__setattr__(self, "pathloss", pl)
        if len(pl) != len(angles):
            raise InvalidDimensions("pathloss and user_angles_deg lengths differ")
        if any(b < 0 for b in pl):
            raise ValueError("pathloss values must be >= 0")
        if not self.spacing_over_wavelength > 0:
            raise ValueError("spacing_over_wavelength must be positive")

    @property
    def K(self):
        return len(self.user_angles_deg)


def _rng(seed: int) -> np.random.Generator:
    # Philox: counter-based, keyed by the 64-bit seed
    return np.random.Generator(np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))


def gen_rayleigh(M: int, K: int, n: int, seed: int) -> ChannelSet:
    """i.i.d. CN(0, 1) entries; real and imaginary parts each have variance 1/2."""
    if K < 1 or K > M or n < 1:
        raise InvalidDimensions(f"need M >= K >= 1 and n >= 1, got M={M}, K={K}, n={n}")
    rng = _rng(seed)
    z = rng.standard_normal((n, M, K, 2))
    h = (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2)
    return ChannelSet(h, seed=int(seed), distribution="rayleigh")


def steering_vector(M: int, theta_deg, spacing_over_wavelength: float = 0.5) -> np.ndarray:
    """ULA response exp(-j m 2pi (d/lambda) cos(theta)); shape (M,) or (M, len(theta))."""
    theta = np.deg2rad(np.asarray(theta_deg, dtype=float))
    m = np.arange(M).reshape((M,) + (1,) * theta.ndim)
    return np.exp(-1j * m * 2 * np.pi * spacing_over_wavelength * np.cos(theta))


def gen_los(M: int, geom: LosGeometry) -> np.ndarray:
    """Deterministic line-of-sight channel, shape (M, K)."""
    angles = np.asarray(geom.user_angles_deg)
    if np.any(angles < 0) or np.any(angles > 180):
        raise AngleOutOfRange(f"user angles must lie in [0, 180] degrees, got {angles.tolist()}")
    if M < geom.K:
        raise InvalidDimensions(f"need M >= K, got M={M}, K={geom.K}")
    H = steering_vector(M, angles, geom.spacing_over_wavelength)
    return H * np.sqrt(np.asarray(geom.pathloss))[None, :]


def gen_los_set(M: int, K: int, n: int, seed: int, spacing_over_wavelength: float = 0.5) -> ChannelSet:
    """LOS channels with user angles drawn from the discrete uniform {0, ..., 180} degrees."""
    if K < 1 or K > M or n < 1:
        raise InvalidDimensions(f"need M >= K >= 1 and n >= 1, got M={M}, K={K}, n={n}")
    rng = _rng(seed)
    angles = rng.integers(0, 181, size=(n, K))
    out = np.stack([gen_los(M, LosGeometry(tuple(a), spacing_over_wavelength=spacing_over_wavelength)) for a in angles])
    return ChannelSet(out, seed=int(seed), distribution="los")


def save_channels(cset: ChannelSet, path) -> None:
    n, M, K = cset.samples.shape
    header = _HEADER.pack(MAGIC, VERSION, DIST_TAGS[cset.distribution], 0, M, K, n, cset.seed & 0xFFFFFFFFFFFFFFFF)
    payload = np.ascontiguousarray(cset.samples, dtype="<c8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_channels(path) -> ChannelSet:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise BadMagic(f"{path}: file too short for a channel header")
    magic, version, tag, reserved, M, K, n, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    dist = {v: k for k, v in DIST_TAGS.items()}.get(tag)
    if dist is None:
        raise BadMagic(f"{path}: unknown distribution tag {tag}")
    payload = data[_HEADER.size:]
    expected = n * M * K * 8
    if len(payload) != expected:
        raise DimensionMismatch(f"{path}: header says {n}x{M}x{K} ({expected} bytes), payload has {len(payload)}")
    samples = np.frombuffer(payload, dtype="<c8").reshape(n, M, K)
    return ChannelSet(samples.astype(np.complex64), seed=int(seed), distribution=dist)
