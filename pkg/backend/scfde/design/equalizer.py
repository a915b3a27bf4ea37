# backend/scfde/design/equalizer.py
# =============================================================================
# MMSE frequency-domain equalizers for the precoded relay link.
#
#   compute_psi      per-tone  Psi_k = s2 Q_k^H K_k^{-1} Q_k + I
#   fdle_design      linear receiver (feedback filter fixed to I)
#   build_z          block-Toeplitz Z from the inverse DFT of Psi_k^{-1}
#   fddfe_design     decision-feedback receiver from the LDL of U11^{-1}
#   apply_fdle / apply_fddfe   run a designed receiver on one block
#
# Shapes: tones are stacked on axis 0, so Q is (N_c, N_d, M), W is
# (N_c, M, N_d) and a received block y is (N_c, N_d) with row n the sample
# at time n.
# =============================================================================

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla

from ..errors import (
    ConditioningError,
    ConfigurationError,
    IndefiniteMatrixError,
    InvalidDimensionError,
    InvalidParameterError,
    SingularityError,
)
from ..linalg.spectral import ldl, taps_to_tones
from ..schemas import ReceiverMode

logger = logging.getLogger(__name__)

Z22_COND_LIMIT = 1e12


def _h(x: np.ndarray) -> np.ndarray:
    """Conjugate transpose of the last two axes."""
    return np.conj(np.swapaxes(x, -1, -2))


def _hermitize(x: np.ndarray) -> np.ndarray:
    return (x + _h(x)) / 2


# ---------- result containers ----------
@dataclass(frozen=True)
class PsiSet:
    psi: np.ndarray         # (N_c, M, M)
    psi_inv: np.ndarray     # (N_c, M, M)
    noise_cov: np.ndarray   # (N_c, N_d, N_d), K_k

    @property
    def n_c(self) -> int:
        return self.psi.shape[0]

    @property
    def m(self) -> int:
        return self.psi.shape[1]


@dataclass(frozen=True)
class EqualizerDesign:
    fff_tones: np.ndarray    # (N_c, M, N_d)
    fbf_taps: np.ndarray     # (n_fb + 1, M, M); tap 0 unit lower triangular
    n_fb: int
    error_diag: np.ndarray   # (M,) analytic per-stream MSE
    error_cov: np.ndarray    # (M, M)
    mode: ReceiverMode

    @property
    def feedback_taps(self) -> np.ndarray:
        """B_l = C_l - I for l = 0 and B_l = C_l otherwise."""
        b = self.fbf_taps.copy()
        b[0] -= np.eye(b.shape[1])
        return b


@dataclass(frozen=True)
class ZSystem:
    z_blocks: np.ndarray     # (n_fb + 1, M, M): z_0 .. z_nfb
    z_matrix: np.ndarray     # ((n_fb + 1) M, (n_fb + 1) M)
    u11: np.ndarray          # top-left M x M block of z_matrix^{-1}
    u11_inv: np.ndarray      # Z11 - Z12 Z22^{-1} Z12^H

    @property
    def n_fb(self) -> int:
        return self.z_blocks.shape[0] - 1

    @property
    def m(self) -> int:
        return self.z_blocks.shape[1]


# ---------- Psi ----------
def compute_psi(
    rd_tones: np.ndarray,
    relay_tones: np.ndarray,
    e2e_tones: np.ndarray,
    sigma_v2: float,
    sigma_u2: float,
    sigma_s2: float = 1.0,
) -> PsiSet:
    h = np.asarray(rd_tones, dtype=complex)
    a = np.asarray(relay_tones, dtype=complex)
    q = np.asarray(e2e_tones, dtype=complex)
    if h.ndim != 3 or a.ndim != 3 or q.ndim != 3:
        raise InvalidDimensionError("tone stacks must be 3-D (N_c, rows, cols)")
    if not (h.shape[0] == a.shape[0] == q.shape[0]) or h.shape[2] != a.shape[1] or q.shape[1] != h.shape[1]:
        raise InvalidDimensionError(f"tone shapes do not chain: H{h.shape} A{a.shape} Q{q.shape}")
    if sigma_u2 < 0 or sigma_v2 < 0 or sigma_s2 <= 0:
        raise InvalidParameterError("noise variances must be >= 0 and signal variance > 0")

    n_d, m = q.shape[1], q.shape[2]
    ha = h @ a
    k = sigma_v2 * ha @ _h(ha) + sigma_u2 * np.eye(n_d)
    if sigma_u2 == 0 and np.any(np.linalg.matrix_rank(k) < n_d):
        raise SingularityError("noise covariance at the destination is singular")
    try:
        kinv_q = np.linalg.solve(k, q)
    except np.linalg.LinAlgError as e:
        raise SingularityError(f"noise covariance is singular: {e}") from e

    psi = _hermitize(sigma_s2 * _h(q) @ kinv_q + np.eye(m))
    psi_inv = _hermitize(np.linalg.solve(psi, np.broadcast_to(np.eye(m), psi.shape)))
    return PsiSet(psi=psi, psi_inv=psi_inv, noise_cov=k)


def _feedforward(c_tones: np.ndarray, q: np.ndarray, k: np.ndarray, sigma_s2: float) -> np.ndarray:
    """W_k = s2 C_k Q_k^H (s2 Q_k Q_k^H + K_k)^{-1}."""
    s = sigma_s2 * q @ _h(q) + k
    try:
        sinv_q = np.linalg.solve(s, q)
    except np.linalg.LinAlgError as e:
        raise SingularityError(f"received covariance is singular: {e}") from e
    return sigma_s2 * c_tones @ _h(sinv_q)


def _tones_and_cov(psi: PsiSet, e2e_tones, noise_cov):
    q = np.asarray(e2e_tones, dtype=complex)
    k = psi.noise_cov if noise_cov is None else np.asarray(noise_cov, dtype=complex)
    if q.shape[0] != psi.n_c or q.shape[2] != psi.m or k.shape[1] != q.shape[1]:
        raise InvalidDimensionError(f"Q{q.shape} / K{k.shape} do not match Psi{psi.psi.shape}")
    return q, k


# ---------- linear receiver ----------
def fdle_design(
    psi: PsiSet,
    e2e_tones: np.ndarray,
    sigma_s2: float = 1.0,
    noise_cov: Optional[np.ndarray] = None,
) -> EqualizerDesign:
    q, k = _tones_and_cov(psi, e2e_tones, noise_cov)
    m = psi.m
    w = _feedforward(np.broadcast_to(np.eye(m), (psi.n_c, m, m)), q, k, sigma_s2)
    error_cov = _hermitize(sigma_s2 / psi.n_c * psi.psi_inv.sum(axis=0))
    return EqualizerDesign(
        fff_tones=w,
        fbf_taps=np.eye(m, dtype=complex)[None],
        n_fb=0,
        error_diag=np.real(np.diag(error_cov)).copy(),
        error_cov=error_cov,
        mode=ReceiverMode.LINEAR,
    )


# ---------- Z system ----------
def build_z(psi: PsiSet, n_fb: int) -> ZSystem:
    n_c, m = psi.n_c, psi.m
    if not 0 <= n_fb <= n_c - 1:
        raise InvalidParameterError(f"n_fb must lie in [0, {n_c - 1}], got {n_fb}")

    # z_n = sum_k Psi_k^{-1} exp(+j 2 pi k n / N_c)
    z = n_c * np.fft.ifft(psi.psi_inv, axis=0)[: n_fb + 1]
    z[0] = _hermitize(z[0])

    size = (n_fb + 1) * m
    zmat = np.zeros((size, size), dtype=complex)
    for i in range(n_fb + 1):
        for j in range(n_fb + 1):
            block = z[j - i] if j >= i else z[i - j].conj().T
            zmat[i * m:(i + 1) * m, j * m:(j + 1) * m] = block
    zmat = _hermitize(zmat)

    try:
        sla.cholesky(zmat, lower=True)
    except sla.LinAlgError as e:
        raise IndefiniteMatrixError(f"Z is not positive definite: {e}") from e

    z11 = zmat[:m, :m]
    if n_fb == 0:
        u11_inv = z11.copy()
    else:
        z12, z22 = zmat[:m, m:], zmat[m:, m:]
        u11_inv = _hermitize(z11 - z12 @ np.linalg.solve(z22, z12.conj().T))
    u11 = _hermitize(np.linalg.inv(u11_inv))
    return ZSystem(z_blocks=z, z_matrix=zmat, u11=u11, u11_inv=u11_inv)


def dfe_objective(z: ZSystem) -> float:
    """det(U11^{-1}); proportional to the product of the DFE stream MSEs."""
    return float(np.real(np.linalg.det(z.u11_inv)))


def dfe_objective_bound(z: ZSystem) -> float:
    """det(Z11), an upper bound on dfe_objective that is tight at n_fb = 0."""
    return float(np.real(np.linalg.det(z.z_matrix[: z.m, : z.m])))


def feedback_error_covariance(z: ZSystem, taps: np.ndarray, sigma_s2: float, n_c: int) -> np.ndarray:
    """(s2 / N_c) C Z C^H for feedback taps C = [C_0, .., C_nfb]."""
    taps = np.asarray(taps, dtype=complex)
    if taps.shape != z.z_blocks.shape:
        raise InvalidDimensionError(f"expected taps of shape {z.z_blocks.shape}, got {taps.shape}")
    c_hat = np.concatenate(list(taps), axis=1)
    return _hermitize(sigma_s2 / n_c * c_hat @ z.z_matrix @ c_hat.conj().T)


# ---------- decision-feedback receiver ----------
def fddfe_design(
    z: ZSystem,
    psi: PsiSet,
    e2e_tones: np.ndarray,
    sigma_s2: float = 1.0,
    noise_cov: Optional[np.ndarray] = None,
) -> EqualizerDesign:
    q, k = _tones_and_cov(psi, e2e_tones, noise_cov)
    m, n_fb, n_c = z.m, z.n_fb, psi.n_c

    taps = np.zeros((n_fb + 1, m, m), dtype=complex)
    fact = ldl(z.u11_inv)
    c0 = sla.solve_triangular(fact.unit_lower, np.eye(m), lower=True, unit_diagonal=True)
    taps[0] = c0
    if n_fb > 0:
        z12, z22 = z.z_matrix[:m, m:], z.z_matrix[m:, m:]
        cond = np.linalg.cond(z22)
        if cond > Z22_COND_LIMIT:
            raise ConditioningError(f"Z22 condition number {cond:.3e} above {Z22_COND_LIMIT:.0e}")
        # Z12 Z22^{-1} = (Z22^{-1} Z12^H)^H since Z22 is Hermitian
        tail = -c0 @ np.linalg.solve(z22, z12.conj().T).conj().T
        taps[1:] = tail.reshape(m, n_fb, m).transpose(1, 0, 2)

    c_tones = taps_to_tones(taps, n_c)
    w = _feedforward(c_tones, q, k, sigma_s2)
    error_diag = sigma_s2 / n_c * fact.diag
    logger.debug("[equalizer] fd-dfe n_fb=%d error_diag=%s", n_fb, np.array2string(error_diag, precision=4))
    return EqualizerDesign(
        fff_tones=w,
        fbf_taps=taps,
        n_fb=n_fb,
        error_diag=error_diag,
        error_cov=np.diag(error_diag).astype(complex),
        mode=ReceiverMode.DECISION_FEEDBACK,
    )


# ---------- receivers ----------
def _as_block(y: np.ndarray, design: EqualizerDesign) -> np.ndarray:
    n_c, _, n_d = design.fff_tones.shape
    y = np.asarray(y, dtype=complex)
    if y.ndim == 1 and y.size == n_c * n_d:
        y = y.reshape(n_c, n_d)
    if y.shape != (n_c, n_d):
        raise InvalidDimensionError(f"expected a block of shape ({n_c}, {n_d}), got {y.shape}")
    return y


def apply_fdle(y: np.ndarray, design: EqualizerDesign) -> np.ndarray:
    """Per-tone feedforward filtering; returns time-domain soft symbols (N_c, M)."""
    y = _as_block(y, design)
    yf = np.fft.fft(y, axis=0, norm="ortho")
    yhat = np.einsum("kmd,kd->km", design.fff_tones, yf)
    return np.fft.ifft(yhat, axis=0, norm="ortho")


def slicer(soft: np.ndarray, constellation: np.ndarray) -> np.ndarray:
    """Nearest constellation point; ties go to the lexicographically smallest point."""
    points = np.asarray(constellation, dtype=complex)
    points = points[np.lexsort((points.imag, points.real))]
    soft = np.asarray(soft, dtype=complex)
    dist = np.abs(soft[..., None] - points) ** 2
    return points[np.argmin(dist, axis=-1)]


def dfe_slicer_input(y: np.ndarray, design: EqualizerDesign, symbols: np.ndarray) -> np.ndarray:
    """Slicer input with the true symbols fed back (genie feedback)."""
    yhat = apply_fdle(y, design)
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.shape != yhat.shape:
        raise InvalidDimensionError(f"symbols {symbols.shape} do not match block {yhat.shape}")
    out = yhat.copy()
    for lag, b in enumerate(design.feedback_taps):
        out -= np.roll(symbols, lag, axis=0) @ b.T
    return out


def apply_fddfe(
    y: np.ndarray,
    design: EqualizerDesign,
    constellation: np.ndarray,
    bootstrap: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sequential detection with feedback of past decisions.

    `bootstrap` holds the known last n_fb symbol vectors of the block,
    s_{N_c - n_fb} .. s_{N_c - 1}; they stand in for the decisions whose
    time index wraps below zero.
    """
    yhat = apply_fdle(y, design)
    n_c, m = yhat.shape
    n_fb = design.n_fb
    if n_fb > 0:
        if bootstrap is None:
            raise ConfigurationError(f"decision feedback with n_fb={n_fb} needs {n_fb} known symbol vectors")
        bootstrap = np.asarray(bootstrap, dtype=complex)
        if bootstrap.shape != (n_fb, m):
            raise InvalidDimensionError(f"bootstrap must have shape ({n_fb}, {m}), got {bootstrap.shape}")
    else:
        bootstrap = np.zeros((0, m), dtype=complex)

    b = design.feedback_taps
    past_taps = b[1:]
    hist = np.concatenate([bootstrap, np.zeros((n_c, m), dtype=complex)])
    for n in range(n_c):
        # hist[n + n_fb - l] is s_{n - l}
        window = hist[n:n + n_fb][::-1]
        acc = yhat[n] - np.einsum("lmj,lj->m", past_taps, window)
        current = hist[n + n_fb]
        for s in range(m):
            soft = acc[s] - b[0, s, :s] @ current[:s]
            current[s] = slicer(soft, constellation)
    return hist[n_fb:].copy()
