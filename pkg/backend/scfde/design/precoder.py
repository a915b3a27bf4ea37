# backend/scfde/design/precoder.py
# =============================================================================
# Source / relay precoders.
#
# Every scheme is built in two steps:
#   1. a "base" design without any rotation at the source,
#        P~_k = V_G Lambda_P      A_k = V_H Lambda_A U_G^H
#      (ROP / UPS replace V_G Lambda_P by a fixed scaled selection matrix)
#   2. a right rotation of the source, P_k = P~_k R:
#        R = I           linear receiver, AMSE / GMSE
#        R = V0          linear receiver, maxMSE (Hadamard or DFT, equal MSEs)
#        R = V1^H        decision feedback (equal diagonal of D via GMD)
# =============================================================================

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import hadamard

from ..errors import DomainError, InvalidDimensionError, InvalidParameterError
from ..linalg.channel import ChannelRealization, tone_gains
from ..linalg.spectral import dft_matrix, gmd, hermitian_sqrt, sorted_svd
from ..schemas import Criterion, ReceiverMode, Scheme
from . import powalloc
from .equalizer import PsiSet, build_z, compute_psi
from .powalloc import PowerAllocation, SubchannelGains

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrecoderSet:
    source_tones: np.ndarray   # (N_c, N_s, M)
    relay_tones: np.ndarray    # (N_c, N_r, N_r)
    lambda_p: np.ndarray       # (N_c, M)
    lambda_a: np.ndarray       # (N_c, M)
    rotation: np.ndarray       # (M, M), right factor of the source precoder
    scheme: Scheme
    criterion: Criterion

    @property
    def n_c(self) -> int:
        return self.source_tones.shape[0]

    @property
    def m(self) -> int:
        return self.source_tones.shape[2]


@dataclass(frozen=True)
class _HopBases:
    sr_left: np.ndarray    # (N_c, N_r, M)   U_G, strongest first
    sr_right: np.ndarray   # (N_c, N_s, M)   V_G
    rd_right: np.ndarray   # (N_c, N_r, M)   V_H


def _hop_bases(sr_tones: np.ndarray, rd_tones: np.ndarray, m: int) -> _HopBases:
    sr_left, sr_right, rd_right = [], [], []
    for g_k, h_k in zip(sr_tones, rd_tones):
        u_g, _, v_g = sorted_svd(g_k).strongest(m)
        _, _, v_h = sorted_svd(h_k).strongest(m)
        sr_left.append(u_g)
        sr_right.append(v_g)
        rd_right.append(v_h)
    return _HopBases(np.array(sr_left), np.array(sr_right), np.array(rd_right))


def e2e_tones(channel: ChannelRealization, pre: PrecoderSet) -> np.ndarray:
    """Q_k = H_k A_k G_k P_k, shape (N_c, N_d, M)."""
    return channel.rd_tones @ pre.relay_tones @ channel.sr_tones @ pre.source_tones


def link_psi(channel: ChannelRealization, pre: PrecoderSet, gains: SubchannelGains) -> PsiSet:
    return compute_psi(channel.rd_tones, pre.relay_tones, e2e_tones(channel, pre),
                       gains.sigma_v2, gains.sigma_u2, gains.sigma_s2)


# ---------- scalars ----------
def scalars_from_powers(alloc: PowerAllocation, gains: SubchannelGains) -> Tuple[np.ndarray, np.ndarray]:
    """p_km = sqrt(P_s / s2), a_km = sqrt(P_r / (P_s g^2 + s_v))."""
    p_s, p_r = np.asarray(alloc.p_s, dtype=float), np.asarray(alloc.p_r, dtype=float)
    if p_s.shape != gains.g.shape or p_r.shape != gains.g.shape:
        raise InvalidDimensionError(f"allocation {p_s.shape} does not match gains {gains.g.shape}")
    if np.any(p_s < 0) or np.any(p_r < 0):
        raise DomainError("allocated powers must be >= 0")
    p = np.sqrt(p_s / gains.sigma_s2)
    denom = p_s * gains.g ** 2 + gains.sigma_v2
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p_r > 0, np.sqrt(p_r / np.where(denom > 0, denom, 1.0)), 0.0)
    return p, a


# ---------- rotations ----------
def equalizing_rotation(m: int) -> np.ndarray:
    """V0: unitary with |entries|^2 = 1/m; Hadamard when m is a power of two, DFT otherwise."""
    if m < 1:
        raise InvalidDimensionError(f"rotation size must be >= 1, got {m}")
    if m & (m - 1) == 0:
        return hadamard(m).astype(complex) / np.sqrt(m)
    return dft_matrix(m)


def gmd_rotation(psi: PsiSet, n_fb: int) -> np.ndarray:
    """R = V1^H such that R^H U11^{-1} R = r^H r with equal diag(r)."""
    z = build_z(psi, n_fb)
    fact = gmd(hermitian_sqrt(z.u11_inv))
    return fact.v1.conj().T


def _rotate(source: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    return source @ rotation


def _pick_rotation(mode: ReceiverMode, criterion: Criterion, base_psi: PsiSet, n_fb: int) -> np.ndarray:
    m = base_psi.m
    if ReceiverMode(mode) is ReceiverMode.DECISION_FEEDBACK:
        return gmd_rotation(base_psi, n_fb)
    if Criterion(criterion) is Criterion.MAXMSE:
        return equalizing_rotation(m)
    return np.eye(m, dtype=complex)


def _finish(channel, base_source, relay, lambda_p, lambda_a, gains, scheme, criterion, mode, n_fb) -> PrecoderSet:
    m = base_source.shape[2]
    base = PrecoderSet(base_source, relay, lambda_p, lambda_a, np.eye(m, dtype=complex), scheme, criterion)
    rotation = _pick_rotation(mode, criterion, link_psi(channel, base, gains), n_fb)
    return PrecoderSet(_rotate(base_source, rotation), relay, lambda_p, lambda_a, rotation,
                       Scheme(scheme), Criterion(criterion))


def _relay_from(bases_left: np.ndarray, rd_right: np.ndarray, a: np.ndarray) -> np.ndarray:
    """A_k = V_H diag(a_k) U^H."""
    return (rd_right * a[:, None, :]) @ np.conj(np.swapaxes(bases_left, -1, -2))


# ---------- optimal structure ----------
def build_jsr(
    channel: ChannelRealization,
    alloc: PowerAllocation,
    gains: SubchannelGains,
    criterion: Criterion,
    mode: ReceiverMode,
    n_fb: int = 0,
) -> PrecoderSet:
    m = gains.m
    if alloc.p_s.shape != (channel.n_c, m):
        raise InvalidDimensionError(f"allocation {alloc.p_s.shape} does not match {channel.n_c} tones x {m} streams")
    bases = _hop_bases(channel.sr_tones, channel.rd_tones, m)
    p, a = scalars_from_powers(alloc, gains)
    base_source = bases.sr_right * p[:, None, :]
    relay = _relay_from(bases.sr_left, bases.rd_right, a)
    return _finish(channel, base_source, relay, p, a, gains, Scheme.JSR, criterion, mode, n_fb)


# ---------- suboptimal schemes ----------
def _selection(n_s: int, m: int) -> np.ndarray:
    sel = np.zeros((n_s, m), dtype=complex)
    sel[:m, :m] = np.eye(m)
    return sel


def build_suboptimal(
    channel: ChannelRealization,
    scheme: Scheme,
    budgets: Tuple[float, float],
    criterion: Criterion,
    gains: SubchannelGains,
    mode: ReceiverMode,
    n_fb: int = 0,
    tolerance: float = 1e-4,
) -> Tuple[PrecoderSet, PowerAllocation, SubchannelGains]:
    """EPA-S, ROP or UPS. Source powers are uniform; only the relay is optimized."""
    scheme = Scheme(scheme)
    if scheme is Scheme.JSR:
        raise InvalidParameterError("JSR is built by build_jsr")
    n_c, m = channel.n_c, gains.m
    p_s = np.full((n_c, m), budgets[0] / (n_c * m))

    if scheme is Scheme.EPA_S:
        alloc = powalloc.optimize_relay(gains, p_s, budgets[1], criterion, tolerance)
        bases = _hop_bases(channel.sr_tones, channel.rd_tones, m)
        p, a = scalars_from_powers(alloc, gains)
        base_source = bases.sr_right * p[:, None, :]
        relay = _relay_from(bases.sr_left, bases.rd_right, a)
        return _finish(channel, base_source, relay, p, a, gains, scheme, criterion, mode, n_fb), alloc, gains

    # ROP / UPS: no channel shaping at the source; the relay sees G_k E
    n_s = channel.dims[0]
    scale = np.sqrt(budgets[0] / (n_c * m * gains.sigma_s2))
    base_source = np.broadcast_to(scale * _selection(n_s, m), (n_c, n_s, m)).copy()
    effective = channel.sr_tones @ base_source[0] / scale
    eff_left, eff_g = [], []
    for e_k in effective:
        u, s, _ = sorted_svd(e_k).strongest(m)
        eff_left.append(u)
        eff_g.append(s)
    eff_gains = SubchannelGains(np.array(eff_g), gains.h, gains.sigma_v2, gains.sigma_u2, gains.sigma_s2)
    alloc = powalloc.optimize_relay(eff_gains, p_s, budgets[1], criterion, tolerance)
    _, a = scalars_from_powers(alloc, eff_gains)
    rd_right = _hop_bases(channel.sr_tones, channel.rd_tones, m).rd_right
    relay = _relay_from(np.array(eff_left), rd_right, a)
    lambda_p = np.full((n_c, m), scale)

    if scheme is Scheme.ROP:
        base = PrecoderSet(base_source, relay, lambda_p, a, np.eye(m, dtype=complex), scheme, Criterion(criterion))
        return base, alloc, eff_gains
    return _finish(channel, base_source, relay, lambda_p, a, gains, scheme, criterion, mode, n_fb), alloc, eff_gains


# ---------- one call for the simulator ----------
def design_precoders(
    channel: ChannelRealization,
    m: int,
    scheme: Scheme,
    criterion: Criterion,
    mode: ReceiverMode,
    budgets: Tuple[float, float],
    noise: Tuple[float, float],
    n_fb: int = 0,
    tolerances: Tuple[float, float] = (1e-4, 1e-4),
    max_outer: int = 20,
    max_inner: int = 50,
    max_subgradient: int = 200,
    sigma_s2: float = 1.0,
) -> Tuple[PrecoderSet, PowerAllocation, SubchannelGains]:
    """Allocation plus precoders for one channel realization.

    The returned gains are the ones the allocation was solved on (the
    effective first hop for ROP / UPS).
    """
    g, h = tone_gains(channel, m)
    gains = SubchannelGains(g, h, noise[0], noise[1], sigma_s2)
    if Scheme(scheme) is Scheme.JSR:
        alloc = powalloc.optimize(gains, budgets, criterion, tolerances, max_outer, max_inner, max_subgradient)
        pre = build_jsr(channel, alloc, gains, criterion, mode, n_fb)
    else:
        pre, alloc, gains = build_suboptimal(channel, scheme, budgets, criterion, gains, mode, n_fb, tolerances[0])
    logger.debug("[precoder] %s/%s/%s built on %d tones", Scheme(scheme).value, Criterion(criterion).value,
                 ReceiverMode(mode).value, channel.n_c)
    return pre, alloc, gains
