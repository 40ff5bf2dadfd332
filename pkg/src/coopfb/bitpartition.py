"""Optimal partition of the D2D bit budget across ordered user pairs.

The partition maximizes the proportional-fair sum of virtual-SLNR lower
bounds, which reduces to the convex program

    minimize   sum_k log( sum_{j != k} w_jk 2^(-b_jk / M_jk) + alpha )
    subject to sum b_jk = B_tot,  b_jk >= 0.

For a fixed multiplier ``mu`` the stationarity conditions of receiver
``k`` form a small linear system in ``x_jk = 2^(-b_jk / M_jk)``; ``mu`` is
found by bisection on the bit-sum constraint.  Links whose stationary
point would need negative bits are clamped to zero and the reduced
system is re-solved.

Index convention: ``bits[j, k]`` is the number of bits user ``j`` spends to
describe its channel to user ``k``; the diagonal is unused.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from coopfb.channel import UserStatistics
from coopfb.errors import InvalidInputError, PartitionError

__all__ = [
    "PartitionProblem",
    "PartitionSolution",
    "build_problem",
    "signal_terms",
    "objective",
    "virtual_slnr_lower_bound",
    "solve_partition",
    "kkt_residual",
    "round_half_even",
]

LN2 = math.log(2.0)
LOOSE_BOUND_BITS_PER_DIM = 2.0


@dataclass(frozen=True, eq=False)
class PartitionProblem:
    weights: np.ndarray
    dims: np.ndarray
    alpha: float
    total_bits: float
    signal_terms: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        d = np.array(self.dims, dtype=int)
        K = w.shape[0]
        if w.shape != (K, K) or d.shape != (K, K):
            raise InvalidInputError("weights and dims must both be K x K")
        np.fill_diagonal(w, 0.0)
        np.fill_diagonal(d, 0)
        if np.any(w < 0):
            raise InvalidInputError("weights must be non-negative")
        w[d < 1] = 0.0
        if self.alpha <= 0:
            raise InvalidInputError("alpha must be > 0")
        if self.total_bits < 0:
            raise InvalidInputError("total_bits must be >= 0")
        w.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dims", d)
        if self.signal_terms is not None:
            object.__setattr__(self, "signal_terms", np.asarray(self.signal_terms, dtype=float))

    @property
    def k_users(self) -> int:
        return self.weights.shape[0]

    @property
    def links(self) -> np.ndarray:
        """Boolean mask of pairs that take part in the partition."""
        return self.weights > 0

    def to_dict(self):
        return {"weights": self.weights.tolist(), "dims": self.dims.tolist(),
                "alpha": self.alpha, "total_bits": self.total_bits}


@dataclass(frozen=True, eq=False)
class PartitionSolution:
    bits: np.ndarray
    mu: float
    kkt_residual: float
    objective: float
    loose_bound: bool = False
    iterations: int = 0

    def rounded(self) -> np.ndarray:
        return round_half_even(self.bits)

    def to_dict(self):
        return {"bits": self.bits.tolist(), "mu": self.mu, "kkt_residual": self.kkt_residual,
                "objective": self.objective, "loose_bound": self.loose_bound}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def round_half_even(x):
    return np.round(np.asarray(x, dtype=float)).astype(int)


def signal_terms(stats: list[UserStatistics]) -> np.ndarray:
    """``l_k * sum_{i >= K} lambda_k^(i)``: energy left after nulling K-1 modes."""
    K = len(stats)
    return np.array([s.path_loss * s.eigenvalues[K - 1:].sum() for s in stats])


def build_problem(stats: list[UserStatistics], klt_bases, alpha: float,
                  total_bits: float) -> PartitionProblem:
    """Assemble weights ``w_jk = l_j * geomean(lambda_jk)`` and dims ``M_jk``.

    ``klt_bases[j][k]`` is the KLT basis of user ``j``'s channel projected on
    user ``k``'s subspace (``None`` on the diagonal).
    """
    K = len(stats)
    weights = np.zeros((K, K))
    dims = np.zeros((K, K), dtype=int)
    for j in range(K):
        for k in range(K):
            if j == k or klt_bases[j][k] is None:
                continue
            lam = klt_bases[j][k].eigenvalues
            dims[j, k] = lam.size
            if lam.size and stats[j].path_loss > 0:
                weights[j, k] = stats[j].path_loss * math.exp(np.mean(np.log(lam)))
    return PartitionProblem(weights, dims, alpha, total_bits, signal_terms(stats))


def _interference_terms(problem, bits):
    w, d = problem.weights, problem.dims
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(problem.links, np.exp2(-np.asarray(bits, float) / np.maximum(d, 1)), 0.0)
    return (w * x).sum(axis=0)


def objective(problem: PartitionProblem, bits) -> float:
    """``sum_k log(sum_j w_jk 2^(-b_jk/M_jk) + alpha)`` (natural log)."""
    return float(np.log(_interference_terms(problem, bits) + problem.alpha).sum())


def virtual_slnr_lower_bound(problem: PartitionProblem, bits) -> np.ndarray:
    """Per-user virtual-SLNR lower bound for a given partition."""
    if problem.signal_terms is None:
        raise InvalidInputError("problem carries no signal terms")
    if np.any(np.asarray(bits)[problem.links] < 0):
        raise InvalidInputError("bits must be >= 0")
    return problem.signal_terms / (_interference_terms(problem, bits) + problem.alpha)


def _gradients(problem, bits):
    """``(ln2 / M_jk) w_jk x_jk / (S_k + alpha)``, i.e. minus the objective gradient."""
    w, d = problem.weights, problem.dims
    denom = _interference_terms(problem, bits) + problem.alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.exp2(-np.asarray(bits, float) / np.maximum(d, 1))
        g = np.where(problem.links, LN2 / np.maximum(d, 1) * w * x / denom[None, :], 0.0)
    return g


def _solve_receiver(w, m, alpha, mu):
    """Bits of the links into one receiver for a fixed multiplier.

    ``w`` and ``m`` are the weights and dims of the participating links.
    Starting from all links active, the link with the weakest marginal value
    ``ln2 w / M`` among those needing negative bits is clamped to zero until
    the solution is consistent; a clamped link is re-activated if its
    gradient exceeds ``mu``.
    """
    n = w.size
    c = LN2 * w / m
    active = np.ones(n, dtype=bool)
    for _ in range(4 * n + 4):
        x = np.ones(n)
        s_inactive = w[~active].sum()
        if active.any():
            wa, ca = w[active], c[active]
            A = np.diag(ca) - mu * np.outer(np.ones(active.sum()), wa)
            rhs = mu * (alpha + s_inactive) * np.ones(active.sum())
            try:
                xa = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                mu = mu * (1 + 1e-12) + 1e-300
                continue
            x[active] = xa
        bad = active & ((x > 1.0) | (x <= 0.0))
        if bad.any():
            worst = np.flatnonzero(bad)[np.argmin(c[bad])]
            active[worst] = False
            continue
        total = (w * x).sum() + alpha
        revive = ~active & (c / total > mu * (1 + 1e-12))
        if revive.any():
            active[np.flatnonzero(revive)[np.argmax(c[revive])]] = True
            continue
        return np.where(active, -m * np.log2(np.where(active, x, 1.0)), 0.0)
    raise PartitionError(f"active-set iteration did not settle at mu={mu:.6e}")


def _bits_for_mu(problem, mu):
    K = problem.k_users
    bits = np.zeros((K, K))
    for k in range(K):
        senders = np.flatnonzero(problem.links[:, k])
        if senders.size == 0:
            continue
        bits[senders, k] = _solve_receiver(problem.weights[senders, k],
                                           problem.dims[senders, k].astype(float),
                                           problem.alpha, mu)
    return bits


def solve_partition(problem: PartitionProblem, tol: float = 1e-10,
                    max_iter: int = 400) -> PartitionSolution:
    """Optimal bit partition by bisection on the multiplier ``mu``."""
    if problem.total_bits <= 0:
        raise InvalidInputError("total_bits must be > 0")
    if not problem.links.any():
        raise InvalidInputError("no pair has a positive weight")
    links = problem.links
    hi = float((LN2 / np.where(links, problem.dims, 1) * problem.weights).max() / problem.alpha)
    lo = 1e-12
    for _ in range(60):
        if _bits_for_mu(problem, lo).sum() >= problem.total_bits:
            break
        lo *= 1e-3
    else:
        raise PartitionError(f"bit sum stays below {problem.total_bits} for mu >= {lo:.3e}")
    log_lo, log_hi = math.log(lo), math.log(hi)
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (log_lo + log_hi)
        total = _bits_for_mu(problem, math.exp(mid)).sum()
        if abs(total - problem.total_bits) <= tol:
            log_lo = log_hi = mid
            break
        if total > problem.total_bits:
            log_lo = mid
        else:
            log_hi = mid
        if log_hi - log_lo < 1e-15:
            break
    mu = math.exp(0.5 * (log_lo + log_hi))
    bits = _bits_for_mu(problem, mu)
    # remove the residual bisection error along the active links, proportionally to M
    gap = problem.total_bits - bits.sum()
    act = bits > 0
    if act.any() and abs(gap) > 0:
        share = np.where(act, problem.dims, 0).astype(float)
        bits = bits + gap * share / share.sum()
    loose = bool(np.any(links & (bits / np.maximum(problem.dims, 1) < LOOSE_BOUND_BITS_PER_DIM)))
    sol = PartitionSolution(bits, mu, 0.0, objective(problem, bits), loose, it)
    res = kkt_residual(problem, sol)
    return PartitionSolution(bits, mu, res, sol.objective, loose, it)


def kkt_residual(problem: PartitionProblem, solution: PartitionSolution,
                 active_tol: float = 1e-9) -> float:
    """Largest violation of the KKT conditions at ``solution``.

    Active links (``b > active_tol``) need gradient equal to ``mu``; clamped
    links need gradient at most ``mu``.  Negative bits and ``mu < 0`` count as
    violations too, and so does any mismatch in the bit-sum constraint.
    """
    bits = np.asarray(solution.bits, dtype=float)
    mu = solution.mu
    links = problem.links
    g = _gradients(problem, np.where(links, bits, 0.0))
    active = links & (bits > active_tol)
    inactive = links & ~active
    res = 0.0
    if active.any():
        res = max(res, float(np.abs(g[active] - mu).max()))
    if inactive.any():
        res = max(res, float(np.maximum(g[inactive] - mu, 0.0).max()))
    res = max(res, float(np.maximum(-bits[links], 0.0).max(initial=0.0)), max(-mu, 0.0))
    res = max(res, abs(bits[links].sum() - problem.total_bits) * 1e-3)
    return res
