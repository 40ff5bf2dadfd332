"""Limited-feedback codebooks and channel-direction quantization.

``build_rvq`` draws i.i.d. isotropic unit vectors, ``build_shaped`` colours
them with a covariance square root.  Quantization picks the codeword with
the largest ``|h^H u|`` and returns the quantization error as the pair
``(Z, s)`` with ``g = sqrt(1 - Z) g_hat + sqrt(Z) s``.

When ``2**bits`` is too large to enumerate, :func:`emulate_rvq_error`
draws ``(Z, s)`` directly from the RVQ error law
``P(Z <= z) = 1 - (1 - z**(N_t - 1))**(2**bits)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from coopfb.channel import UserStatistics, crandn
from coopfb.errors import (
    CapacityError,
    DegenerateStatisticsError,
    InvalidDimensionError,
    InvalidInputError,
)

__all__ = [
    "CodebookKind",
    "Codebook",
    "QuantizedDirection",
    "MAX_EXPLICIT_BITS",
    "build_rvq",
    "build_shaped",
    "quantize_direction",
    "emulate_rvq_error",
    "orthogonal_unit",
]

MAX_EXPLICIT_BITS = 24


class CodebookKind(str, Enum):
    ISOTROPIC = "isotropic"
    SHAPED = "shaped"


@dataclass(frozen=True, eq=False)
class Codebook:
    """``vectors`` holds one unit-norm codeword per row."""

    vectors: np.ndarray
    kind: CodebookKind
    generation_seed: int | None = None

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def bits(self) -> int:
        return int(round(np.log2(self.size)))

    @property
    def n_t(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.size

    def __getitem__(self, i) -> np.ndarray:
        return self.vectors[i]

    def inner(self, h: np.ndarray) -> np.ndarray:
        """``u_i^H h`` for every codeword (``h`` may be a matrix of columns)."""
        # conjugating h and the result avoids copying the whole codebook
        return (self.vectors @ np.conj(h)).conj()


@dataclass(frozen=True, eq=False)
class QuantizedDirection:
    index: int
    direction: np.ndarray
    magnitude: float
    error_z: float
    error_direction: np.ndarray

    @property
    def csi(self) -> np.ndarray:
        """Quantized channel ``||h|| g_hat``."""
        return self.magnitude * self.direction


def _check_bits(bits):
    if int(bits) != bits or bits < 1:
        raise InvalidInputError(f"bits must be a positive integer, got {bits}")
    if bits > MAX_EXPLICIT_BITS:
        raise CapacityError(
            f"2**{bits} codewords cannot be enumerated (cap is 2**{MAX_EXPLICIT_BITS}); "
            "use emulate_rvq_error for statistical emulation")
    return int(bits)


def _seed_of(rng):
    try:
        return int(rng.bit_generator.seed_seq.entropy)
    except (AttributeError, TypeError, ValueError):
        return None


def _normalize_rows(V):
    V /= np.sqrt(np.einsum("ij,ij->i", V.real, V.real) + np.einsum("ij,ij->i", V.imag, V.imag))[:, None]
    return V


def _freeze(V):
    V.setflags(write=False)
    return V


def build_rvq(n_t: int, bits: int, rng: np.random.Generator) -> Codebook:
    """RVQ codebook of ``2**bits`` i.i.d. isotropic unit vectors."""
    bits = _check_bits(bits)
    if n_t < 1:
        raise InvalidDimensionError(f"n_t must be >= 1, got {n_t}")
    V = _normalize_rows(crandn(rng, 2 ** bits, n_t))
    return Codebook(_freeze(V), CodebookKind.ISOTROPIC, _seed_of(rng))


def build_shaped(stats: UserStatistics, bits: int, rng: np.random.Generator) -> Codebook:
    """Covariance-shaped codebook ``u_i = R^{1/2} xi_i / ||R^{1/2} xi_i||``."""
    bits = _check_bits(bits)
    if stats.eigenvalues[0] <= 0:
        raise DegenerateStatisticsError("covariance has rank 0")
    xi = crandn(rng, 2 ** bits, stats.n_t)
    V = _normalize_rows(xi @ stats.sqrt_covariance.T)
    return Codebook(_freeze(V), CodebookKind.SHAPED, _seed_of(rng))


def orthogonal_unit(v: np.ndarray) -> np.ndarray:
    """Deterministic unit vector orthogonal to unit vector ``v``.

    Gram-Schmidt of the canonical basis vector on which ``v`` has the
    smallest magnitude.
    """
    e = np.zeros(v.shape[0], dtype=complex)
    e[int(np.argmin(np.abs(v)))] = 1.0
    r = e - v * (v.conj() @ e)
    return r / np.linalg.norm(r)


def _error_pair(g, g_hat):
    c = g_hat.conj() @ g
    z = float(max(0.0, 1.0 - abs(c) ** 2))
    r = g - g_hat * c
    nr = np.linalg.norm(r)
    if z <= 1e-24 or nr <= 1e-12:
        return 0.0, orthogonal_unit(g_hat)
    return z, r / nr


def quantize_direction(h: np.ndarray, cb: Codebook) -> QuantizedDirection:
    """Max-correlation quantization of ``h / ||h||``; ties go to the lowest index."""
    h = np.asarray(h, dtype=complex)
    mag = float(np.linalg.norm(h))
    if mag == 0 or not np.isfinite(mag):
        raise InvalidInputError("cannot quantize a zero (or non-finite) vector")
    if h.shape[0] != cb.n_t:
        raise InvalidDimensionError(f"vector has {h.shape[0]} entries, codebook {cb.n_t}")
    g = h / mag
    idx = int(np.argmax(np.abs(cb.inner(g))))
    g_hat = cb.vectors[idx]
    # rephase so that g_hat^H g is real and positive
    c = g_hat.conj() @ g
    if abs(c) > 0:
        g_hat = g_hat * (c / abs(c))
    z, s = _error_pair(g, g_hat)
    return QuantizedDirection(idx, g_hat, mag, z, s)


def emulate_rvq_error(n_t: int, bits, g: np.ndarray, rng: np.random.Generator,
                      magnitude: float = 1.0) -> QuantizedDirection:
    """Statistical stand-in for RVQ with ``2**bits`` codewords.

    ``Z`` is drawn by inverse transform from the RVQ error CDF; the emulated
    codeword is ``g_hat = sqrt(1 - Z) g - sqrt(Z) t`` with ``t`` isotropic in
    the orthogonal complement of ``g``.  ``bits`` may be ``inf``.
    """
    if bits < 1:
        raise InvalidInputError(f"bits must be >= 1, got {bits}")
    g = np.asarray(g, dtype=complex)
    g = g / np.linalg.norm(g)
    if g.shape[0] != n_t:
        raise InvalidDimensionError(f"g has {g.shape[0]} entries, expected {n_t}")
    u = rng.random()
    t = crandn(rng, n_t)
    if np.isinf(bits):
        z = 0.0
    else:
        # 1 - (1 - u)**(2**-bits), evaluated without cancellation
        inner = -np.expm1(np.log1p(-u) * 2.0 ** (-float(bits)))
        z = float(inner ** (1.0 / (n_t - 1)))
    t = t - g * (g.conj() @ t)
    t = t / np.linalg.norm(t)
    g_hat = np.sqrt(1.0 - z) * g - np.sqrt(z) * t
    if z == 0.0:
        return QuantizedDirection(-1, g, float(magnitude), 0.0, orthogonal_unit(g))
    # closed form of the residual direction; exact even when z is tiny
    s = np.sqrt(z) * g + np.sqrt(1.0 - z) * t
    return QuantizedDirection(-1, g_hat, float(magnitude), z, s)
