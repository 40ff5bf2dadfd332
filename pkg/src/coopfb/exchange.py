"""D2D CSI exchange: subspace projection, KLT and rate-limited quantization.

User ``k`` shares its channel with user ``j`` by projecting onto the
receiver's dominant subspace ``U_j``, decorrelating with the KLT of
``G_kj = U_j^H R_k U_j`` and quantizing the KLT coefficients with
``b_kj`` bits split across coefficients by reverse water-filling.

Two quantizer backends are available:

``ideal-dr``
    A statistical quantizer that realizes the Gaussian distortion-rate
    function exactly through its forward test channel.
``ecsq-uniform``
    Entropy-coded uniform mid-tread scalar quantization of every real
    dimension, with the step chosen so that the output entropy equals the
    allocated rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

from coopfb.channel import UserStatistics, crandn
from coopfb.codebooks import orthogonal_unit
from coopfb.errors import DegenerateStatisticsError, InvalidDimensionError, InvalidInputError

__all__ = [
    "Backend",
    "KltBasis",
    "ExchangedCsi",
    "PartialCsiDecomposition",
    "partial_channel",
    "klt_basis",
    "allocate_bits_within_link",
    "distortion_rate",
    "quantize_ideal_dr",
    "quantize_ecsq_uniform",
    "uniform_step_for_rate",
    "quantized_gaussian_entropy",
    "reconstruct_csi",
    "exchange_csi",
    "decompose_partial_csi",
]

DEFAULT_EIG_FLOOR = 1e-6
_RATE_TOL = 1e-12


class Backend(str, Enum):
    IDEAL_DR = "ideal-dr"
    ECSQ_UNIFORM = "ecsq-uniform"


@dataclass(frozen=True, eq=False)
class KltBasis:
    """Projection and KLT for one ordered user pair ``k -> j``.

    ``projector`` is ``U_j`` (``N_t x Mbar_j``), ``klt_matrix`` is ``U_kj``
    (``Mbar_j x M_kj``), ``eigenvalues`` the retained eigenvalues of
    ``U_j^H R_k U_j`` in descending order.
    """

    projector: np.ndarray
    klt_matrix: np.ndarray
    eigenvalues: np.ndarray

    @property
    def effective_dim(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def transform(self) -> np.ndarray:
        """``U_j U_kj``: KLT coefficients to antenna domain."""
        return self.projector @ self.klt_matrix


@dataclass(frozen=True, eq=False)
class ExchangedCsi:
    reconstructed: np.ndarray
    bits_used: float
    backend: Backend


@dataclass(frozen=True, eq=False)
class PartialCsiDecomposition:
    """``h^(j) = beta U_j g_hat + tau U_j s`` with ``s`` orthogonal to ``g_hat``."""

    beta: complex
    tau: float
    residual_direction: np.ndarray

    def reconstruct(self, g_hat: np.ndarray, projector: np.ndarray | None = None) -> np.ndarray:
        v = self.beta * g_hat + self.tau * self.residual_direction
        return v if projector is None else projector @ v


def _eigs(basis):
    lam = basis.eigenvalues if isinstance(basis, KltBasis) else basis
    return np.atleast_1d(np.asarray(lam, dtype=float))


def partial_channel(h_k: np.ndarray, l_k: float, projector: np.ndarray) -> np.ndarray:
    """``g_k^(j) = U_j^H h_k / sqrt(l_k)``."""
    if l_k <= 0:
        raise InvalidInputError("path loss must be > 0 for a partial channel")
    if projector.shape[0] != h_k.shape[0]:
        raise InvalidDimensionError("projector and channel dimensions disagree")
    return projector.conj().T @ h_k / np.sqrt(l_k)


def klt_basis(stats_k: UserStatistics, projector: np.ndarray,
              eig_floor: float = DEFAULT_EIG_FLOOR) -> KltBasis:
    """KLT of the partial channel covariance ``U_j^H R_k U_j``.

    Modes with eigenvalue at or below ``eig_floor * lambda_max(R_k)`` are
    dropped.  An empty basis (``effective_dim == 0``) means the subspaces do
    not overlap and no exchange is needed.
    """
    if projector.shape[0] != stats_k.n_t:
        raise InvalidDimensionError("projector and covariance dimensions disagree")
    G = projector.conj().T @ stats_k.covariance @ projector
    G = 0.5 * (G + G.conj().T)
    lam, vec = np.linalg.eigh(G)
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    keep = lam > eig_floor * stats_k.eigenvalues[0]
    lam, vec = lam[keep].copy(), vec[:, keep].copy()
    for arr in (lam, vec):
        arr.setflags(write=False)
    return KltBasis(projector, vec, lam)


def allocate_bits_within_link(eigenvalues, total_bits: float):
    """Reverse water-filling of ``total_bits`` over complex Gaussian modes.

    Returns ``(per_element_bits, m_star)``: ``m_star`` is the largest ``m``
    for which ``r_i(m) = b/m + log2(lambda_i / geomean(lambda_1..m))`` is
    non-negative for every ``i <= m``.  Elements beyond ``m_star`` get zero
    bits.
    """
    lam = _eigs(eigenvalues)
    if total_bits < 0:
        raise InvalidInputError("total_bits must be >= 0")
    if lam.size == 0:
        return np.zeros(0), 0
    if np.any(lam <= 0):
        raise InvalidInputError("eigenvalues must be strictly positive")
    if np.any(np.diff(lam) > 1e-12 * lam[0]):
        raise InvalidInputError("eigenvalues must be sorted in descending order")
    log_lam = np.log2(lam)
    cum = np.cumsum(log_lam)
    for m in range(lam.size, 0, -1):
        log_geo = cum[m - 1] / m
        # r_i(m) is decreasing in i, so checking the last active element suffices
        if total_bits / m + log_lam[m - 1] - log_geo >= -_RATE_TOL:
            r = np.zeros(lam.size)
            r[:m] = np.maximum(total_bits / m + log_lam[:m] - log_geo, 0.0)
            return r, m
    raise AssertionError("unreachable: m = 1 is always feasible")


def distortion_rate(eigenvalues, total_bits: float) -> float:
    """Gaussian distortion-rate function of the KLT coefficients."""
    lam = _eigs(eigenvalues)
    if lam.size == 0:
        return 0.0
    _, m = allocate_bits_within_link(lam, total_bits)
    geo = np.exp(np.mean(np.log(lam[:m])))
    return float(m * geo * 2.0 ** (-total_bits / m) + lam[m:].sum())


def _water_level(lam, total_bits):
    _, m = allocate_bits_within_link(lam, total_bits)
    return float(np.exp(np.mean(np.log(lam[:m]))) * 2.0 ** (-total_bits / m)), m


def _check_coeffs(q, lam):
    q = np.asarray(q, dtype=complex)
    if q.shape[-1:] != lam.shape:
        raise InvalidDimensionError(f"q has shape {q.shape}, expected (..., {lam.size})")
    return q


def quantize_ideal_dr(q: np.ndarray, basis, total_bits: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Forward-test-channel quantizer achieving the distortion-rate function.

    Active coefficients are mapped to ``(1 - D/lambda) q + n`` with
    ``n ~ CN(0, D (1 - D/lambda))``, where ``D`` is the common water level;
    inactive coefficients are reconstructed as zero.  ``q`` may carry
    leading batch axes; the last axis runs over KLT coefficients.
    """
    lam = _eigs(basis)
    q = _check_coeffs(q, lam)
    q_hat = np.zeros_like(q)
    if lam.size == 0:
        return q_hat
    theta, m = _water_level(lam, total_bits)
    noise = crandn(rng, *q.shape)
    d = np.minimum(theta, lam[:m])
    shrink = 1.0 - d / lam[:m]
    q_hat[..., :m] = shrink * q[..., :m] + np.sqrt(d * shrink) * noise[..., :m]
    return q_hat


# -- entropy-coded uniform scalar quantization ------------------------------

_HIGH_RATE_STEP = 0.05  # step/sigma below which the high-rate entropy is exact to ~1e-300


def _gauss_tail(x):
    return 0.5 * erfc(x / np.sqrt(2.0))


def _cell_probs(step):
    """Probabilities of the non-negative cells of a unit-variance Gaussian."""
    n_max = int(np.ceil(9.0 / step)) + 2
    edges = (np.arange(n_max + 1) + 0.5) * step
    tail = _gauss_tail(edges)
    p0 = 1.0 - 2.0 * tail[0]
    pn = tail[:-1] - tail[1:]
    return p0, pn, edges


@lru_cache(maxsize=4096)
def quantized_gaussian_entropy(step: float) -> float:
    """Entropy (bits) of a mid-tread uniform quantizer applied to N(0, 1)."""
    if step < _HIGH_RATE_STEP:
        return 0.5 * np.log2(2 * np.pi * np.e) - np.log2(step)
    p0, pn, _ = _cell_probs(step)
    p = np.concatenate(([p0], pn, pn))
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


@lru_cache(maxsize=4096)
def uniform_step_for_rate(rate: float) -> float:
    """Step (in units of sigma) whose output entropy equals ``rate`` bits.

    Returns ``inf`` for a zero rate.
    """
    if rate <= _RATE_TOL:
        return np.inf
    hr = 0.5 * np.log2(2 * np.pi * np.e) - rate
    if hr < np.log2(_HIGH_RATE_STEP):
        return float(2.0 ** hr)
    lo, hi = np.log(_HIGH_RATE_STEP), np.log(60.0)
    if quantized_gaussian_entropy(np.exp(hi)) >= rate:
        return float(np.exp(hi))
    f = lambda s: quantized_gaussian_entropy(np.exp(s)) - rate
    return float(np.exp(brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)))


def _centroid_quantize(x, step):
    """Quantize unit-variance samples, reconstructing at cell centroids.

    ``step`` broadcasts against ``x``; an infinite step maps to zero.
    """
    step = np.broadcast_to(np.asarray(step, dtype=float), np.shape(x))
    live = np.isfinite(step)
    step = np.where(live, step, 1.0)
    n = np.where(live, np.rint(x / step), 0.0)
    a = (np.abs(n) - 0.5) * step
    b = a + step
    a = np.maximum(a, 0.0)
    den = _gauss_tail(a) - _gauss_tail(b)
    num = (np.exp(-0.5 * a * a) - np.exp(-0.5 * b * b)) / np.sqrt(2 * np.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        centroid = np.where(den > 1e-300, num / den, np.abs(n) * step)
    centroid = np.where(n == 0, 0.0, centroid)
    return np.sign(n) * centroid


def quantize_ecsq_uniform(q: np.ndarray, basis, total_bits: float):
    """Entropy-coded uniform scalar quantization of the KLT coefficients.

    Bits are first split across complex coefficients by reverse
    water-filling, then halved between the real and imaginary parts.  Each
    real dimension uses a mid-tread uniform quantizer whose step makes the
    analytic output entropy equal to its rate; reconstruction points are the
    Gaussian cell centroids.

    Returns ``(q_hat, entropy_bits)`` where ``entropy_bits`` is the analytic
    entropy of the quantizer output summed over the real dimensions of one
    coefficient vector.  ``q`` may carry leading batch axes.
    """
    lam = _eigs(basis)
    q = _check_coeffs(q, lam)
    if lam.size == 0:
        return np.zeros_like(q), 0.0
    rates, _ = allocate_bits_within_link(lam, total_bits)
    steps = np.array([uniform_step_for_rate(float(r) / 2.0) for r in rates])
    sigma = np.sqrt(lam / 2.0)
    re = _centroid_quantize(q.real / sigma, steps)
    im = _centroid_quantize(q.imag / sigma, steps)
    entropy = sum(2.0 * quantized_gaussian_entropy(float(st)) for st in steps if np.isfinite(st))
    return sigma * (re + 1j * im), float(entropy)


def reconstruct_csi(q_hat: np.ndarray, basis: KltBasis, l_k: float,
                    bits_used: float = 0.0,
                    backend: Backend = Backend.IDEAL_DR) -> ExchangedCsi:
    """``h_hat_k^(j) = sqrt(l_k) U_j U_kj q_hat``."""
    q_hat = np.asarray(q_hat, dtype=complex)
    if q_hat.shape != (basis.effective_dim,):
        raise InvalidDimensionError("q_hat does not match the KLT dimension")
    if basis.effective_dim == 0:
        rec = np.zeros(basis.projector.shape[0], dtype=complex)
    else:
        rec = np.sqrt(l_k) * (basis.transform @ q_hat)
    return ExchangedCsi(rec, float(bits_used), Backend(backend))


def exchange_csi(h_k: np.ndarray, l_k: float, basis: KltBasis, bits: float,
                 backend: Backend = Backend.IDEAL_DR,
                 rng: np.random.Generator | None = None) -> ExchangedCsi:
    """Full sender-to-receiver path: project, KLT, quantize, reconstruct."""
    backend = Backend(backend)
    if basis.effective_dim == 0 or l_k <= 0:
        return ExchangedCsi(np.zeros(h_k.shape[0], dtype=complex), 0.0, backend)
    q = basis.klt_matrix.conj().T @ partial_channel(h_k, l_k, basis.projector)
    if backend is Backend.IDEAL_DR:
        if rng is None:
            raise InvalidInputError("the ideal-dr backend needs an rng")
        q_hat, used = quantize_ideal_dr(q, basis, bits, rng), bits
    else:
        q_hat, used = quantize_ecsq_uniform(q, basis, bits)
    return reconstruct_csi(q_hat, basis, l_k, used, backend)


def decompose_partial_csi(g: np.ndarray, g_hat: np.ndarray,
                          path_loss: float = 1.0) -> PartialCsiDecomposition:
    """Split the in-subspace channel ``sqrt(l) g`` along ``g_hat``.

    ``beta = sqrt(l) g_hat^H g / ||g_hat||^2`` and ``tau s`` is the residual
    orthogonal to ``g_hat``.
    """
    g = np.asarray(g, dtype=complex)
    g_hat = np.asarray(g_hat, dtype=complex)
    n2 = float(np.vdot(g_hat, g_hat).real)
    if n2 == 0:
        raise DegenerateStatisticsError("g_hat is the zero vector")
    scale = np.sqrt(path_loss)
    beta_t = np.vdot(g_hat, g) / n2
    r = g - beta_t * g_hat
    nr = float(np.linalg.norm(r))
    if nr <= 1e-14 * max(1.0, float(np.linalg.norm(g))):
        s = orthogonal_unit(g_hat / np.sqrt(n2))
        return PartialCsiDecomposition(complex(scale * beta_t), 0.0, s)
    return PartialCsiDecomposition(complex(scale * beta_t), scale * nr, r / nr)
