# backend/scfde/linalg/spectral.py
# =============================================================================
# DFT conventions and the matrix factorizations the designs are built from.
#
#   * dft_matrix / taps_to_tones / tones_to_taps / block_circulant
#       the unitary DFT and the block-circulant <-> per-tone mapping
#   * sorted_svd   SVD with ascending singular values and a fixed phase
#   * ldl          unit-lower / positive-diagonal Cholesky form  A = L D L^H
#   * gmd          geometric-mean decomposition  A V1^H = Q R, equal diag(R)
#
# Everything here is a pure function of its inputs.
# =============================================================================

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import linalg as sla

from ..errors import (
    ConditioningError,
    IndefiniteMatrixError,
    InvalidDimensionError,
    InvalidLengthError,
    NumericInputError,
    RankDeficientError,
    SymmetryError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence]

HERMITIAN_TOL = 1e-10
RANK_TOL = 1e-12
GMD_SPREAD_TOL = 1e-8


# ---------- result containers ----------
@dataclass(frozen=True)
class SortedSvd:
    """Thin SVD  a = left @ diag(singular_values) @ right^H.

    Singular values are ascending, so the last columns of `left` and `right`
    belong to the largest singular values. For square input both factors are
    unitary.
    """
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.conj().T

    def strongest(self, m: int):
        """(left, values, right) for the m largest singular values, largest first."""
        n = len(self.singular_values)
        if not 0 < m <= n:
            raise InvalidDimensionError(f"cannot take {m} of {n} singular values")
        sel = np.arange(n - 1, n - 1 - m, -1)
        return (self.left_vectors[:, sel],
                self.singular_values[sel],
                self.right_vectors[:, sel])


@dataclass(frozen=True)
class LdlFactorization:
    unit_lower: np.ndarray
    diag: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.unit_lower * self.diag) @ self.unit_lower.conj().T


@dataclass(frozen=True)
class GmdFactorization:
    """input = q @ r @ v1, i.e. input @ v1^H = q @ r with equal diag(r)."""
    q: np.ndarray
    r: np.ndarray
    v1: np.ndarray

    @property
    def geometric_mean(self) -> float:
        return float(np.mean(np.real(np.diag(self.r))))


# ---------- input checks ----------
def _as_matrix(a: ArrayLike, square: bool = False) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or 0 in a.shape:
        raise InvalidDimensionError(f"expected a non-empty matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise InvalidDimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericInputError("matrix has non-finite entries")
    return a


def _as_tap_stack(taps: ArrayLike) -> np.ndarray:
    try:
        stack = np.asarray(taps, dtype=complex)
    except ValueError as e:
        raise InvalidDimensionError(f"taps do not share dimensions: {e}") from e
    if stack.ndim == 1:
        # a bare sequence of scalars is a 1x1 tap sequence
        stack = stack[:, None, None]
    if stack.ndim != 3:
        raise InvalidDimensionError(f"expected a stack of tap matrices, got shape {stack.shape}")
    return stack


# ---------- DFT / block-circulant algebra ----------
def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix, entry (a, b) = exp(-j 2 pi a b / n) / sqrt(n)."""
    if int(n) != n or n < 1:
        raise InvalidDimensionError(f"DFT size must be a positive integer, got {n}")
    n = int(n)
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def taps_to_tones(taps: ArrayLike, n_c: int) -> np.ndarray:
    """Per-tone matrices  X_k = sum_l X_{t,l} exp(-j 2 pi k l / n_c).

    `taps` has shape (L, rows, cols); the result has shape (n_c, rows, cols).
    """
    stack = _as_tap_stack(taps)
    if n_c < 1:
        raise InvalidDimensionError(f"tone count must be positive, got {n_c}")
    if stack.shape[0] == 0 or stack.shape[0] > n_c:
        raise InvalidLengthError(f"{stack.shape[0]} taps do not fit into {n_c} tones")
    return np.fft.fft(stack, n=n_c, axis=0)


def tones_to_taps(tones: ArrayLike) -> np.ndarray:
    """Inverse of taps_to_tones: returns all n_c (zero-padded) taps."""
    return np.fft.ifft(_as_tap_stack(tones), axis=0)


def block_circulant(taps: ArrayLike, n_c: int) -> np.ndarray:
    """Dense blkcirc matrix whose block (i, j) is taps[(i - j) mod n_c]."""
    stack = _as_tap_stack(taps)
    n_taps, rows, cols = stack.shape
    if n_taps > n_c:
        raise InvalidLengthError(f"{n_taps} taps do not fit into {n_c} tones")
    padded = np.zeros((n_c, rows, cols), dtype=complex)
    padded[:n_taps] = stack
    index = (np.arange(n_c)[:, None] - np.arange(n_c)[None, :]) % n_c
    return padded[index].transpose(0, 2, 1, 3).reshape(n_c * rows, n_c * cols)


def kron_dft(n_c: int, size: int) -> np.ndarray:
    """F_{n_c} kron I_size, the block DFT acting on stacked symbol vectors."""
    return np.kron(dft_matrix(n_c), np.eye(size))


def diagonal_blocks(mat: np.ndarray, n_c: int, rows: int, cols: int) -> np.ndarray:
    blocks = np.asarray(mat).reshape(n_c, rows, n_c, cols)
    k = np.arange(n_c)
    return blocks[k, :, k, :]


def circular_convolve(taps: ArrayLike, x: np.ndarray) -> np.ndarray:
    """y_n = sum_l taps[l] x_{(n-l) mod N} for a block x of shape (N, cols)."""
    stack = _as_tap_stack(taps)
    x = np.asarray(x, dtype=complex)
    y = np.zeros((x.shape[0], stack.shape[1]), dtype=complex)
    for lag, tap in enumerate(stack):
        y += np.roll(x, lag, axis=0) @ tap.T
    return y


def linear_convolve(taps: ArrayLike, x: np.ndarray) -> np.ndarray:
    """Full linear convolution, output length N + L - 1."""
    stack = _as_tap_stack(taps)
    x = np.asarray(x, dtype=complex)
    n, n_taps = x.shape[0], stack.shape[0]
    y = np.zeros((n + n_taps - 1, stack.shape[1]), dtype=complex)
    for lag, tap in enumerate(stack):
        y[lag:lag + n] += x @ tap.T
    return y


# ---------- factorizations ----------
def sorted_svd(a: ArrayLike) -> SortedSvd:
    a = _as_matrix(a)
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    u, s, v = u[:, ::-1], s[::-1], vh.conj().T[:, ::-1]

    # largest-magnitude entry of each left vector is made real positive
    cols = np.arange(u.shape[1])
    pivot = u[np.argmax(np.abs(u), axis=0), cols]
    mag = np.abs(pivot)
    phase = np.where(mag > 0, pivot / np.where(mag > 0, mag, 1.0), 1.0)
    u = u * phase.conj()
    v = v * phase.conj()
    return SortedSvd(np.ascontiguousarray(u), np.ascontiguousarray(s), np.ascontiguousarray(v))


def ldl(a: ArrayLike) -> LdlFactorization:
    """A = L D L^H with unit-diagonal lower L and positive diagonal D."""
    a = _as_matrix(a, square=True)
    scale = max(1.0, float(np.linalg.norm(a)))
    if np.linalg.norm(a - a.conj().T) > HERMITIAN_TOL * scale:
        raise SymmetryError("matrix is not Hermitian")
    herm = (a + a.conj().T) / 2
    try:
        chol = sla.cholesky(herm, lower=True)
    except sla.LinAlgError as e:
        raise IndefiniteMatrixError(f"non-positive pivot: {e}") from e
    pivots = np.real(np.diag(chol))
    if np.any(pivots <= 0):
        raise IndefiniteMatrixError("non-positive pivot")
    return LdlFactorization(unit_lower=chol / pivots[None, :], diag=pivots ** 2)


def hermitian_sqrt(a: ArrayLike) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix."""
    a = _as_matrix(a, square=True)
    w, v = np.linalg.eigh((a + a.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def gmd(a: ArrayLike) -> GmdFactorization:
    """Geometric-mean decomposition built from the SVD with 2x2 rotations.

    Starting from a = U S V^H, each step k pairs diagonal entry k with one
    entry on the other side of the geometric mean and rotates the pair so
    that R[k, k] equals the geometric mean. The trailing block stays
    diagonal throughout, so the sweep finishes in M - 1 steps.
    """
    a = _as_matrix(a, square=True)
    svd = sorted_svd(a)
    s = svd.singular_values
    if s[-1] == 0 or s[0] <= RANK_TOL * s[-1]:
        raise RankDeficientError(f"matrix is numerically rank deficient (min/max = {s[0] / max(s[-1], 1e-300):.3e})")

    m = len(s)
    sigma_bar = float(np.exp(np.mean(np.log(s))))
    q = svd.left_vectors.copy()
    p = svd.right_vectors.copy()
    r = np.diag(s).astype(complex)

    for k in range(m - 1):
        d1 = r[k, k].real
        tail = np.real(np.diag(r))[k + 1:]
        hits = np.nonzero(tail <= sigma_bar)[0] if d1 >= sigma_bar else np.nonzero(tail >= sigma_bar)[0]
        j = k + 1 + int(hits[0]) if hits.size else k + 1
        if j != k + 1:
            r[[k + 1, j], [k + 1, j]] = r[[j, k + 1], [j, k + 1]]
            q[:, [k + 1, j]] = q[:, [j, k + 1]]
            p[:, [k + 1, j]] = p[:, [j, k + 1]]

        d2 = r[k + 1, k + 1].real
        if abs(d1 - d2) <= 1e-15 * sigma_bar:
            c, sn = 1.0, 0.0
        else:
            c = float(np.sqrt(np.clip((sigma_bar ** 2 - d2 ** 2) / (d1 ** 2 - d2 ** 2), 0.0, 1.0)))
            sn = float(np.sqrt(1.0 - c * c))
        g1 = np.array([[c, -sn], [sn, c]])
        g2 = np.array([[c * d1, -sn * d2], [sn * d2, c * d1]]) / sigma_bar

        r[:, k:k + 2] = r[:, k:k + 2] @ g1
        r[k:k + 2, :] = g2.T @ r[k:k + 2, :]
        r[k + 1, k] = 0.0
        q[:, k:k + 2] = q[:, k:k + 2] @ g2
        p[:, k:k + 2] = p[:, k:k + 2] @ g1

    diag = np.real(np.diag(r))
    spread = float((diag.max() - diag.min()) / sigma_bar)
    if spread > GMD_SPREAD_TOL:
        raise ConditioningError(f"GMD diagonal spread {spread:.2e} above tolerance")
    logger.debug("[gmd] M=%d geometric mean=%.6g spread=%.2e", m, sigma_bar, spread)
    return GmdFactorization(q=q, r=r, v1=p.conj().T)
