"""Independent reference computations used by the test suite.

Each oracle solves a problem by a method unrelated to the library's own
(brute force, generic optimization, finer quadrature) so agreement is
meaningful.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def project_to_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum x = total}`` (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def partition_objective(weights, dims, alpha, bits) -> float:
    w, d = np.asarray(weights, float), np.asarray(dims, float)
    links = w > 0
    x = np.where(links, np.exp2(-np.asarray(bits, float) / np.where(links, d, 1.0)), 0.0)
    return float(np.log((w * x).sum(axis=0) + alpha).sum())


def projected_gradient_partition(weights, dims, alpha, total_bits, max_iter=200_000,
                                 tol=1e-13):
    """Minimize the partition objective by projected gradient with backtracking.

    Works on the flattened vector of links with positive weight and returns
    ``(bits_matrix, objective)``.
    """
    w = np.asarray(weights, float)
    d = np.asarray(dims, float)
    links = np.argwhere(w > 0)
    wl = w[links[:, 0], links[:, 1]]
    dl = d[links[:, 0], links[:, 1]]
    recv = links[:, 1]
    K = w.shape[0]

    def f_and_grad(b):
        x = np.exp2(-b / dl)
        s = np.bincount(recv, weights=wl * x, minlength=K) + alpha
        f = float(np.log(s).sum())
        g = -math.log(2.0) / dl * wl * x / s[recv]
        return f, g

    b = np.full(wl.size, total_bits / wl.size)
    f, g = f_and_grad(b)
    step = 1.0
    for _ in range(max_iter):
        while True:
            cand = project_to_simplex(b - step * g, total_bits)
            fc, gc = f_and_grad(cand)
            if fc <= f + g @ (cand - b) + 0.5 / step * np.sum((cand - b) ** 2) + 1e-16:
                break
            step *= 0.5
        moved = np.abs(cand - b).max()
        b, f, g = cand, fc, gc
        step *= 2.0
        if moved < tol:
            break
    out = np.zeros_like(w)
    out[links[:, 0], links[:, 1]] = b
    return out, f


def grid_allocation_distortion(eigenvalues, total_bits, resolution=0.01):
    """Minimum of ``sum_i lambda_i 2^(-b_i)`` over a bit grid (two or three modes)."""
    lam = np.asarray(eigenvalues, float)
    n = int(round(total_bits / resolution))
    best = math.inf
    for split in itertools.product(range(n + 1), repeat=lam.size - 1):
        rest = n - sum(split)
        if rest < 0:
            continue
        b = np.array([*split, rest]) * resolution
        best = min(best, float((lam * np.exp2(-b)).sum()))
    return best


def brute_argmax_index(vectors: np.ndarray, h: np.ndarray) -> int:
    """Lowest index maximizing ``|u_i^H h|`` by an explicit loop."""
    best, best_i = -1.0, -1
    for i, u in enumerate(vectors):
        v = abs(np.vdot(u, h))
        if v > best:
            best, best_i = v, i
    return best_i


def brute_argmin_leakage(vectors: np.ndarray, interferers) -> int:
    best, best_i = math.inf, -1
    for i, u in enumerate(vectors):
        v = sum(abs(np.vdot(h, u)) ** 2 for h in interferers)
        if v < best:
            best, best_i = v, i
    return best_i


def fine_one_ring_covariance(mean_azimuth, spread, n_t, spacing=0.5, points=None):
    """One-ring covariance by composite Simpson integration on a dense grid."""
    points = points or 40 * n_t + 1
    if points % 2 == 0:
        points += 1
    half = 2.0 * spread
    theta = np.linspace(mean_azimuth - half, mean_azimuth + half, points)
    h = theta[1] - theta[0]
    coef = np.ones(points)
    coef[1:-1:2], coef[2:-1:2] = 4.0, 2.0
    pas = np.exp(-0.5 * ((theta - mean_azimuth) / spread) ** 2) * coef * h / 3.0
    m = np.arange(n_t)
    a = np.exp(1j * 2 * np.pi * spacing * np.outer(m, np.sin(theta)))
    R = (a * pas) @ a.conj().T
    return R * n_t / np.trace(R).real


def plugin_entropy(symbols: np.ndarray) -> float:
    """Empirical entropy in bits of a discrete sample."""
    _, counts = np.unique(symbols, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def random_partition_inputs(rng: np.random.Generator, k_users: int):
    """Weights, dims, alpha and budget of a generic partition problem.

    Weights span three decades so that some links end up clamped to zero.
    """
    w = np.exp(rng.uniform(np.log(1e-2), np.log(10.0), (k_users, k_users)))
    np.fill_diagonal(w, 0.0)
    dims = rng.integers(1, 25, (k_users, k_users))
    np.fill_diagonal(dims, 0)
    alpha = float(np.exp(rng.uniform(np.log(0.01), np.log(2.0))))
    total = float(rng.uniform(5.0, 40.0 * k_users))
    return w, dims, alpha, total
