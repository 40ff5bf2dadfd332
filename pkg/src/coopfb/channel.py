"""Channel statistics and per-trial channel realizations.

Two statistical models are provided: the i.i.d. Rayleigh model
(``R = I``) and the one-ring model on a uniform linear array, where the
power angular spectrum is a truncated Gaussian around the user's mean
azimuth.  Realizations are drawn as ``h_k = sqrt(l_k) R_k^{1/2} z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import toeplitz

from coopfb.errors import (
    DegenerateStatisticsError,
    IntegrationError,
    InvalidDimensionError,
    InvalidInputError,
)

__all__ = [
    "UserStatistics",
    "OneRingGeometry",
    "ChannelRealization",
    "gen_iid_statistics",
    "one_ring_covariance",
    "steering_vector",
    "gen_channel",
    "dominant_subspace",
    "crandn",
]

_HERMITIAN_TOL = 1e-10
_PSD_TOL = 1e-10


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples, CN(0, 1)."""
    x = rng.standard_normal((*shape, 2)).view(np.complex128)[..., 0]
    x *= np.sqrt(0.5)
    return x


@dataclass(frozen=True, eq=False)
class UserStatistics:
    """Second-order statistics of one user's channel.

    Use :meth:`from_covariance` rather than the constructor; it performs the
    eigen-decomposition, clamps small negative eigenvalues and checks the
    invariants (Hermitian, PSD, ``trace = N_t``).
    """

    path_loss: float
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def from_covariance(cls, covariance, path_loss: float = 1.0,
                        normalize: bool = False) -> "UserStatistics":
        R = np.array(covariance, dtype=complex)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise InvalidDimensionError(f"covariance must be square, got {R.shape}")
        n_t = R.shape[0]
        if n_t < 2:
            raise InvalidDimensionError(f"n_t must be >= 2, got {n_t}")
        if path_loss < 0 or not np.isfinite(path_loss):
            raise InvalidInputError(f"path_loss must be finite and >= 0, got {path_loss}")
        scale = max(1.0, np.abs(R).max())
        if np.abs(R - R.conj().T).max() > _HERMITIAN_TOL * scale:
            raise InvalidInputError("covariance is not Hermitian")
        R = 0.5 * (R + R.conj().T)
        if not np.any(R):
            raise DegenerateStatisticsError("covariance has rank 0")
        if normalize:
            R = R * (n_t / np.trace(R).real)
        trace = np.trace(R).real
        if abs(trace - n_t) > 1e-8 * n_t:
            raise InvalidInputError(f"trace(covariance) = {trace}, expected {n_t}")
        lam, vec = np.linalg.eigh(R)
        if lam[0] < -_PSD_TOL * scale:
            raise InvalidInputError(f"covariance not PSD (min eigenvalue {lam[0]:.3e})")
        order = np.argsort(lam)[::-1]
        lam = np.clip(lam[order], 0.0, None)
        vec = vec[:, order]
        for arr in (R, lam, vec):
            arr.setflags(write=False)
        return cls(float(path_loss), R, lam, vec)

    @property
    def n_t(self) -> int:
        return self.covariance.shape[0]

    @cached_property
    def sqrt_covariance(self) -> np.ndarray:
        """Hermitian square root via the (clamped) eigen-decomposition."""
        lam = self.eigenvalues
        # modes at round-off level are treated as exactly zero
        lam = np.where(lam > self.n_t * np.finfo(float).eps * lam[0], lam, 0.0)
        S = (self.eigenvectors * np.sqrt(lam)) @ self.eigenvectors.conj().T
        S.setflags(write=False)
        return S

    def with_path_loss(self, path_loss: float) -> "UserStatistics":
        return UserStatistics(float(path_loss), self.covariance, self.eigenvalues,
                              self.eigenvectors)


@dataclass(frozen=True)
class OneRingGeometry:
    """One-ring scatterer geometry seen by a ULA.

    Angles are in radians, ``antenna_spacing`` in wavelengths.  The
    truncation half-width defaults to twice the angular spread.
    """

    mean_azimuth: float
    angular_spread: float
    antenna_count: int
    antenna_spacing: float = 0.5
    truncation_halfwidth: float | None = None

    def __post_init__(self):
        if self.truncation_halfwidth is None:
            object.__setattr__(self, "truncation_halfwidth", 2.0 * self.angular_spread)
        if self.angular_spread <= 0:
            raise InvalidInputError("angular_spread must be > 0")
        if self.antenna_spacing <= 0:
            raise InvalidInputError("antenna_spacing must be > 0")
        if self.antenna_count < 2:
            raise InvalidDimensionError("antenna_count must be >= 2")
        if self.truncation_halfwidth < self.angular_spread:
            raise InvalidInputError("truncation_halfwidth must be >= angular_spread")

    @classmethod
    def from_degrees(cls, mean_azimuth_deg, angular_spread_deg, antenna_count,
                     antenna_spacing=0.5, truncation_halfwidth_deg=None):
        trunc = None if truncation_halfwidth_deg is None else np.deg2rad(truncation_halfwidth_deg)
        return cls(float(np.deg2rad(mean_azimuth_deg)), float(np.deg2rad(angular_spread_deg)),
                   int(antenna_count), float(antenna_spacing), trunc)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One Monte Carlo draw; column ``k`` of ``channels`` is ``h_k``."""

    channels: np.ndarray
    seed_tag: int = 0

    @property
    def k_users(self) -> int:
        return self.channels.shape[1]

    def __getitem__(self, k) -> np.ndarray:
        return self.channels[:, k]


def gen_iid_statistics(n_t: int) -> UserStatistics:
    """Unit path loss, identity covariance."""
    if n_t < 2:
        raise InvalidDimensionError(f"n_t must be >= 2, got {n_t}")
    return UserStatistics.from_covariance(np.eye(n_t))


def steering_vector(n_t: int, azimuth: float, spacing: float = 0.5) -> np.ndarray:
    m = np.arange(n_t)
    return np.exp(1j * 2 * np.pi * spacing * m * np.sin(azimuth))


def _one_ring_lags(geom: OneRingGeometry, order: int) -> np.ndarray:
    """First column of the (Toeplitz) one-ring covariance, before scaling."""
    x, w = np.polynomial.legendre.leggauss(order)
    half = geom.truncation_halfwidth
    theta = geom.mean_azimuth + half * x
    weights = w * half * np.exp(-0.5 * ((theta - geom.mean_azimuth) / geom.angular_spread) ** 2)
    lags = np.arange(geom.antenna_count)
    phase = np.exp(1j * 2 * np.pi * geom.antenna_spacing * np.outer(lags, np.sin(theta)))
    return phase @ weights


def one_ring_covariance(geom: OneRingGeometry, order: int | None = None,
                        tol: float = 1e-8) -> UserStatistics:
    """Covariance of the one-ring model, normalized to ``trace = N_t``.

    ``R[m, n] = c * integral p(theta) exp(i 2 pi d (m - n) sin theta)`` over
    the truncation window, evaluated by Gauss-Legendre quadrature of order
    ``4 * N_t``.  The quadrature is repeated at twice the order and an
    :class:`IntegrationError` raised if the two disagree by more than
    ``tol`` (relative to the zero-lag term).
    """
    n_t = geom.antenna_count
    order = order or 4 * n_t
    col = _one_ring_lags(geom, order)
    ref = _one_ring_lags(geom, 2 * order)
    residual = np.abs(col - ref).max() / abs(ref[0])
    if not residual <= tol:
        raise IntegrationError("one-ring quadrature did not converge", residual)
    col = col / col[0].real
    R = toeplitz(col, col.conj())
    return UserStatistics.from_covariance(R, path_loss=1.0, normalize=True)


def gen_channel(stats: list[UserStatistics], rng: np.random.Generator,
                seed_tag: int = 0) -> ChannelRealization:
    """Draw ``h_k ~ CN(0, l_k R_k)`` independently for every user."""
    if not stats:
        raise InvalidDimensionError("need at least one user")
    n_t = stats[0].n_t
    if any(s.n_t != n_t for s in stats):
        raise InvalidDimensionError("all users must share the same n_t")
    z = crandn(rng, n_t, len(stats))
    H = np.empty((n_t, len(stats)), dtype=complex)
    for k, s in enumerate(stats):
        H[:, k] = np.sqrt(s.path_loss) * (s.sqrt_covariance @ z[:, k])
    return ChannelRealization(H, seed_tag)


def dominant_subspace(stats: UserStatistics, energy_fraction: float = 0.995):
    """Smallest set of leading eigenvectors capturing ``energy_fraction``.

    Returns ``(basis, m_bar)`` with ``basis`` of shape ``(N_t, m_bar)``.
    """
    if not 0 < energy_fraction <= 1:
        raise InvalidInputError(f"energy_fraction must lie in (0, 1], got {energy_fraction}")
    lam = stats.eigenvalues
    cum = np.cumsum(lam) / lam.sum()
    m_bar = int(np.searchsorted(cum, energy_fraction - 1e-12) + 1)
    m_bar = min(m_bar, stats.n_t)
    return stats.eigenvectors[:, :m_bar], m_bar
