"""Orthogonal Procrustes alignment of word vectors, with a one-sided Jacobi SVD.

Target-language vectors are rotated into the source space. Everything is
computed in float64.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import BinaryIO, Tuple

import numpy as np

from .errors import ConvergenceError, DimensionError, FormatError, NoUsablePairsError
from .vectors_io import BilingualDictionary, WordVectors, read_matrix_file, write_matrix_file

__all__ = [
    "OrthogonalMap",
    "DictionaryMatrices",
    "svd",
    "fit_procrustes",
    "build_dictionary_matrices",
    "apply_map",
    "write_rotation",
    "read_rotation",
]

logger = logging.getLogger(__name__)

MAX_SWEEPS = 100
ROTATION_TOL = 1e-12


def _round_robin(m: int):
    """Yield (p, q) index arrays: each round pairs every column with a distinct partner.

    Over the ``m - 1`` (or ``m`` for odd m) rounds of one sweep every pair
    appears exactly once, so rotations within a round touch disjoint columns
    and can be applied together.
    """
    players = list(range(m)) + ([-1] if m % 2 else [])
    n = len(players)
    for _ in range(n - 1):
        p, q = [], []
        for i in range(n // 2):
            a, b = players[i], players[n - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        yield np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)
        players = [players[0], players[-1], *players[1:-1]]


def _complete_basis(Q: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace columns of ``Q`` where ``valid`` is False with an orthonormal completion."""
    Q = Q.copy()
    n = Q.shape[0]
    basis = Q[:, valid]
    candidates = np.eye(n)
    for j in np.flatnonzero(~valid):
        # project every unit vector off the current basis and keep the largest remainder
        for _ in range(2):
            candidates = candidates - (candidates @ basis) @ basis.T
        norms = np.linalg.norm(candidates, axis=1)
        best = int(np.argmax(norms))
        v = candidates[best] / norms[best]
        Q[:, j] = v
        basis = np.column_stack([basis, v])
    return Q


def _jacobi_tall(A: np.ndarray):
    n, m = A.shape
    # columns of [A; I] stored as rows so each round gathers contiguous memory
    W = np.ascontiguousarray(np.vstack([A, np.eye(m)]).T)
    scale = np.linalg.norm(A)
    tiny = np.finfo(np.float64).tiny * 1e3 + (np.finfo(np.float64).eps * scale) ** 2
    rounds = list(_round_robin(m)) if m > 1 else []

    for sweep in range(1, MAX_SWEEPS + 1):
        rotated = False
        for p, q in rounds:
            Wp, Wq = W[p], W[q]
            Up, Uq = Wp[:, :n], Wq[:, :n]
            alpha = np.einsum("ij,ij->i", Up, Up)
            beta = np.einsum("ij,ij->i", Uq, Uq)
            gamma = np.einsum("ij,ij->i", Up, Uq)
            active = (np.abs(gamma) > ROTATION_TOL * np.sqrt(alpha * beta)) & (alpha > tiny) & (beta > tiny)
            if not active.any():
                continue
            rotated = True
            if not active.all():
                p, q, Wp, Wq = p[active], q[active], Wp[active], Wq[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0] = 1.0
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            W[p] = c * Wp - s * Wq
            W[q] = s * Wp + c * Wq
        if not rotated:
            logger.debug("jacobi svd converged after %d sweeps", sweep)
            break
    else:
        residual = np.linalg.norm(A - W[:, :n].T @ W[:, n:]) / max(1.0, scale)
        raise ConvergenceError(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps (residual {residual:.3e})", residual)

    U, V = W[:, :n].T, W[:, n:].T
    sigma = np.linalg.norm(U, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, U, V = sigma[order], U[:, order], V[:, order]
    valid = sigma > np.finfo(np.float64).eps * max(sigma[0] if m else 0.0, 1e-300) * max(n, m)
    U = np.divide(U, sigma, out=np.zeros_like(U), where=valid)
    if not valid.all():
        sigma = np.where(valid, sigma, 0.0)
        U = _complete_basis(U, valid)
    return U, sigma, V


def svd(A) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``A = U @ diag(s) @ V.T`` by one-sided cyclic Jacobi.

    Returns ``(U, s, V)`` with ``r = min(n, m)`` columns each, singular values
    non-negative and descending. Raises ``ConvergenceError`` if rotations are
    still needed after 100 sweeps.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("svd input contains non-finite values")
    if A.shape[0] >= A.shape[1]:
        return _jacobi_tall(A)
    U, s, V = _jacobi_tall(A.T)
    return V, s, U


@dataclass(frozen=True)
class OrthogonalMap:
    """Row-vector rotation: aligned = vectors @ matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        R = np.array(self.matrix, dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError(f"rotation must be square, got {R.shape}")
        R.setflags(write=False)
        object.__setattr__(self, "matrix", R)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def orthogonality_error(self) -> float:
        R = self.matrix
        return float(np.max(np.abs(R.T @ R - np.eye(self.dim))))


def fit_procrustes(X, Y) -> OrthogonalMap:
    """Orthogonal R minimizing ``||X @ R - Y||_F``: ``R = U @ V.T`` for ``X.T @ Y = U S V.T``.

    Rows of ``X`` (target language) and ``Y`` (source language) are paired
    dictionary entries.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2:
        raise DimensionError(f"paired matrices must share a 2-D shape, got {X.shape} and {Y.shape}")
    n, d = X.shape
    if n == 0:
        raise NoUsablePairsError("cannot fit a rotation from zero pairs")
    if n < d:
        warnings.warn(f"only {n} pairs for dimension {d}; rotation is under-determined", RuntimeWarning, stacklevel=2)
    U, s, V = svd(X.T @ Y)
    if s[-1] <= 1e-10 * max(s[0], 1e-300):
        warnings.warn("cross-covariance is rank deficient; the fitted rotation is not unique", RuntimeWarning, stacklevel=2)
    return OrthogonalMap(U @ V.T)


@dataclass(frozen=True)
class DictionaryMatrices:
    X: np.ndarray  # target rows, unit-normalized
    Y: np.ndarray  # source rows, unit-normalized
    used: int
    skipped_oov: int
    skipped_zero: int

    @property
    def skipped(self) -> int:
        return self.skipped_oov + self.skipped_zero


def build_dictionary_matrices(src: WordVectors, tgt: WordVectors, dictionary: BilingualDictionary) -> DictionaryMatrices:
    """Stack unit-normalized vectors for every dictionary pair found in both vocabularies."""
    if src.dim != tgt.dim:
        raise DimensionError(f"source vectors have dim {src.dim}, target vectors {tgt.dim}")
    s_index, t_index = src.index, tgt.index
    s_rows, t_rows = [], []
    oov = 0
    for s_word, t_word in dictionary:
        i, j = s_index.get(s_word), t_index.get(t_word)
        if i is None or j is None:
            oov += 1
            continue
        s_rows.append(i)
        t_rows.append(j)
    Y = np.asarray(src.vectors[s_rows], dtype=np.float64)
    X = np.asarray(tgt.vectors[t_rows], dtype=np.float64)
    ny, nx = np.linalg.norm(Y, axis=1), np.linalg.norm(X, axis=1)
    ok = (ny > 0) & (nx > 0)
    zero = int(np.count_nonzero(~ok))
    if not ok.any():
        raise NoUsablePairsError(
            f"no usable dictionary pairs ({oov} out of vocabulary, {zero} with zero vectors)"
        )
    X = X[ok] / nx[ok, None]
    Y = Y[ok] / ny[ok, None]
    return DictionaryMatrices(X, Y, int(ok.sum()), oov, zero)


def apply_map(vectors: WordVectors, R: OrthogonalMap) -> WordVectors:
    if vectors.dim != R.dim:
        raise DimensionError(f"vectors have dim {vectors.dim} but rotation is {R.dim}x{R.dim}")
    rotated = (np.asarray(vectors.vectors, dtype=np.float64) @ R.matrix).astype(np.float32)
    return WordVectors(vectors.words, rotated, vectors.counts)


def write_rotation(R: OrthogonalMap, stream: BinaryIO) -> None:
    write_matrix_file(stream, [str(i) for i in range(R.dim)], R.matrix, kind="rotation")


def read_rotation(stream: BinaryIO) -> OrthogonalMap:
    mf = read_matrix_file(stream)
    if mf.kind != "rotation":
        raise FormatError(f"expected a rotation matrix file, got kind {mf.kind!r}")
    if mf.matrix.shape[0] != mf.matrix.shape[1]:
        raise FormatError(f"rotation matrix must be square, got {mf.matrix.shape}")
    return OrthogonalMap(mf.matrix)
