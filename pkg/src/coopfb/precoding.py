"""Precoder constructions.

BS side: zero-forcing on quantized directions and regularized (MMSE)
precoding on quantized CSI.  User side: continuous SLNR, and
codebook-constrained minimum-leakage and maximum-SLNR selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coopfb.codebooks import Codebook
from coopfb.errors import InvalidInputError, SingularityError

__all__ = [
    "Precoder",
    "ZF_CONDITION_LIMIT",
    "zf_precoder",
    "mmse_precoder",
    "slnr_continuous",
    "select_min_leakage",
    "select_max_slnr",
    "slnr",
    "leakage",
]

ZF_CONDITION_LIMIT = 1e10


@dataclass(frozen=True, eq=False)
class Precoder:
    vectors: np.ndarray
    scheme_tag: str = ""

    def __getitem__(self, k) -> np.ndarray:
        return self.vectors[:, k]


def _unit(v):
    return v / np.linalg.norm(v)


def _stack(vectors, n_t=None):
    if vectors is None or len(vectors) == 0:
        return np.zeros((n_t or 0, 0), dtype=complex)
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        return vectors
    return np.column_stack(vectors)


def zf_precoder(directions: np.ndarray, scheme_tag: str = "zf") -> Precoder:
    """Normalized columns of ``G (G^H G)^{-1}``."""
    G = np.asarray(directions, dtype=complex)
    gram = G.conj().T @ G
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > ZF_CONDITION_LIMIT:
        raise SingularityError("quantized directions are rank deficient", cond)
    W = G @ np.linalg.inv(gram)
    return Precoder(W / np.linalg.norm(W, axis=0), scheme_tag)


def mmse_precoder(global_csi: np.ndarray, user: int, alpha: float) -> np.ndarray:
    """``(H H^H + alpha I)^{-1} h_user``, normalized."""
    if alpha <= 0:
        raise InvalidInputError("alpha must be > 0")
    H = np.asarray(global_csi, dtype=complex)
    A = H @ H.conj().T + alpha * np.eye(H.shape[0])
    return _unit(np.linalg.solve(A, H[:, user]))


def slnr_continuous(h_k: np.ndarray, interferers, alpha: float) -> np.ndarray:
    """Unit vector maximizing ``|h^H w|^2 / (sum_j |h_j^H w|^2 + alpha)``.

    The leakage matrix is rank-deficient plus ``alpha I``, so the generalized
    eigenvector is ``(H_{-k} H_{-k}^H + alpha I)^{-1} h_k`` in closed form.
    """
    if alpha <= 0:
        raise InvalidInputError("alpha must be > 0")
    h_k = np.asarray(h_k, dtype=complex)
    Hi = _stack(interferers, h_k.shape[0])
    A = Hi @ Hi.conj().T + alpha * np.eye(h_k.shape[0])
    return _unit(np.linalg.solve(A, h_k))


def leakage(w: np.ndarray, interferers) -> np.ndarray:
    """``sum_j |h_j^H w|^2``; ``w`` may hold one candidate per row."""
    Hi = _stack(interferers)
    if Hi.shape[1] == 0:
        return np.zeros(np.atleast_2d(w).shape[0]) if np.ndim(w) == 2 else 0.0
    return (np.abs(np.asarray(w) @ Hi.conj()) ** 2).sum(axis=-1)


def slnr(w: np.ndarray, h_k: np.ndarray, interferers, alpha: float):
    num = np.abs(np.asarray(w) @ np.conj(h_k)) ** 2
    return num / (leakage(w, interferers) + alpha)


def select_min_leakage(cb: Codebook, interferer_csi) -> np.ndarray:
    """Codeword minimizing the leakage onto the given CSI; ties go to the lowest index."""
    if cb.size == 0:
        raise InvalidInputError("empty codebook")
    return cb.vectors[int(np.argmin(leakage(cb.vectors, interferer_csi)))]


def select_max_slnr(cb: Codebook, h_k: np.ndarray, interferer_csi, alpha: float) -> np.ndarray:
    """Codeword maximizing the SLNR; ties go to the lowest index."""
    if alpha <= 0:
        raise InvalidInputError("alpha must be > 0")
    if cb.size == 0:
        raise InvalidInputError("empty codebook")
    return cb.vectors[int(np.argmax(slnr(cb.vectors, h_k, interferer_csi, alpha)))]
