"""Closed-form interference-leakage bounds and extreme-value constants.

All functions are pure numeric evaluations.  ``rho`` is the per-user
power ``P / K``; ``b_c`` may be ``inf`` for perfect CSI exchange.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import brentq
from scipy.special import gamma, gammainc

from coopfb.errors import InvalidInputError

__all__ = [
    "BoundInputs",
    "leakage_upper_bound",
    "two_user_bound",
    "csi_feedback_bounds",
    "beta_min_mean",
    "rvq_error_bounds",
    "phi_n_exact",
    "phi_n_approx",
    "weibull_mean",
    "phi_k",
    "k_user_leakage",
]


@dataclass(frozen=True)
class BoundInputs:
    n_t: int
    k_users: int
    b_f: float
    b_c: float = math.inf
    rho: float = 1.0

    def __post_init__(self):
        if self.n_t < 2:
            raise InvalidInputError(f"n_t must be >= 2, got {self.n_t}")
        if self.k_users < 2:
            raise InvalidInputError(f"k_users must be >= 2, got {self.k_users}")
        if self.b_f < 0 or self.b_c < 0:
            raise InvalidInputError("bit budgets must be >= 0")
        if not self.rho > 0:
            raise InvalidInputError(f"rho must be > 0, got {self.rho}")


def _exchange_decay(b_c, n_t):
    return 0.0 if math.isinf(b_c) else 2.0 ** (-b_c / (n_t - 1))


def leakage_upper_bound(p: BoundInputs) -> float:
    """Rough K-user bound ``rho 2^(-B_f/(K-1)) + rho (K-1) 2^(-B_c/(N_t-1))``."""
    K = p.k_users
    return p.rho * 2.0 ** (-p.b_f / (K - 1)) + p.rho * (K - 1) * _exchange_decay(p.b_c, p.n_t)


def two_user_bound(p: BoundInputs) -> float:
    """Upper bound on the mean leakage of min-leakage precoder feedback, two users."""
    n = p.n_t
    f = 2.0 ** (-p.b_f)
    return p.rho * n / (n - 1) * (f + (1.0 - (n - 1) / n * f) * _exchange_decay(p.b_c, n))


def csi_feedback_bounds(p: BoundInputs) -> tuple[float, float]:
    """Bracket on the mean leakage of ZF on RVQ-quantized CSI, per interferer."""
    n = p.n_t
    lower = p.rho * 2.0 ** (-p.b_f / (n - 1))
    return lower, lower * n / (n - 1)


def rvq_error_bounds(n_t: int, bits: float) -> tuple[float, float]:
    """Bracket ``((N_t-1)/N_t 2^(-B/(N_t-1)), 2^(-B/(N_t-1)))`` on the mean RVQ error."""
    upper = 2.0 ** (-bits / (n_t - 1))
    return (n_t - 1) / n_t * upper, upper


def beta_min_mean(n_t: int, b_f: float) -> float:
    """Mean of ``min_i |g^H w_i|^2`` over ``2^B_f`` isotropic codewords.

    The minimum is Beta(1, (N_t - 1) 2^B_f) distributed.
    """
    if n_t < 2 or b_f < 0:
        raise InvalidInputError("need n_t >= 2 and b_f >= 0")
    return 1.0 / (1.0 + (n_t - 1) * 2.0 ** b_f)


def phi_n_exact(k_users: int, n_codewords: float) -> float:
    """Solve ``P(K - 1, x) = 1 / N`` for ``x`` (regularized lower incomplete gamma)."""
    if k_users < 2 or n_codewords < 1:
        raise InvalidInputError("need k_users >= 2 and n_codewords >= 1")
    a = k_users - 1
    target = 1.0 / n_codewords
    if a == 1:
        return -math.log1p(-target) if target < 1 else math.inf
    if target >= 1:
        return math.inf
    # solve in log x: the root shrinks like N^(-1/(K-1)) and can be tiny
    log_target = math.log(target)

    def f(u):
        v = gammainc(a, math.exp(u))
        return math.log(v) - log_target if v > 0 else -math.inf

    hi = 0.0
    while f(hi) < 0:
        hi += 1.0
    lo = hi - 1.0
    while f(lo) > 0:
        lo = 2.0 * lo - 1.0
    return math.exp(brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200))


def phi_n_approx(k_users: int, n_codewords: float) -> float:
    """Closed-form approximation ``(N Gamma(K))^(-1/(K-1))`` of :func:`phi_n_exact`.

    Exact at ``K = 2``.  For larger ``K`` it sits a factor
    ``Gamma(K)^(-2/(K-1))`` below the small-``x`` inversion of the
    incomplete gamma, so it understates the large-``N`` constant.
    """
    k = k_users
    return gamma(k) ** (-1.0 / (k - 1)) * n_codewords ** (-1.0 / (k - 1))


def weibull_mean(k_users: int) -> float:
    return float(gamma(k_users / (k_users - 1)))


def phi_k(k_users: int) -> float:
    """``Gamma(K/(K-1)) Gamma(K)^(-1/(K-1))``; equals 1 at K = 2 and decreases."""
    k = k_users
    return float(gamma(k / (k - 1)) * gamma(k) ** (-1.0 / (k - 1)))


def k_user_leakage(p: BoundInputs, use_approx: bool = False) -> float:
    """Extreme-value approximation of the mean leakage with ``K`` users."""
    K, n = p.k_users, p.n_t
    if use_approx:
        precoding = phi_k(K) * 2.0 ** (-p.b_f / (K - 1))
    else:
        precoding = weibull_mean(K) * phi_n_exact(K, 2.0 ** p.b_f)
    residual = n * (K - 1) / (n - 1) - (n - 1) / n * precoding
    return p.rho * precoding + p.rho * residual * _exchange_decay(p.b_c, n)
