# backend/scfde/linalg/channel.py
# =============================================================================
# Random frequency-selective MIMO channels for the two hops S->R and R->D.
#
# Each tap entry is CN(0, p_l) with an exponential power delay profile
# p_l ~ exp(-l / sigma_t), normalized so that sum_l p_l = 1 per antenna pair.
# A realization keeps its taps, its per-tone matrices and the per-tone
# singular values; it is immutable after construction.
# =============================================================================

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import InvalidDimensionError, InvalidLengthError, InvalidParameterError
from .spectral import taps_to_tones

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FadingProfile:
    length: int = 16          # tap count L_x
    decay: float = 2.0        # sigma_t in symbol periods
    normalization: float = 1.0

    def powers(self) -> np.ndarray:
        if self.length < 1:
            raise InvalidLengthError(f"profile length must be >= 1, got {self.length}")
        if not self.decay > 0:
            raise InvalidParameterError(f"decay must be positive, got {self.decay}")
        raw = np.exp(-np.arange(self.length) / self.decay)
        return self.normalization * raw / raw.sum()


@dataclass(frozen=True)
class ChannelRealization:
    sr_taps: np.ndarray        # (L_g, N_r, N_s)
    rd_taps: np.ndarray        # (L_h, N_d, N_r)
    sr_tones: np.ndarray       # (N_c, N_r, N_s)
    rd_tones: np.ndarray       # (N_c, N_d, N_r)
    sr_singulars: np.ndarray   # (N_c, min(N_r, N_s)), ascending per tone
    rd_singulars: np.ndarray   # (N_c, min(N_d, N_r)), ascending per tone
    seed: Optional[int] = None

    @classmethod
    def from_taps(cls, sr_taps, rd_taps, n_c: int, seed: Optional[int] = None) -> "ChannelRealization":
        sr_tones = taps_to_tones(sr_taps, n_c)
        rd_tones = taps_to_tones(rd_taps, n_c)
        if sr_tones.shape[1] != rd_tones.shape[2]:
            raise InvalidDimensionError("relay antenna count differs between the two hops")
        return cls(
            sr_taps=np.asarray(sr_taps, dtype=complex),
            rd_taps=np.asarray(rd_taps, dtype=complex),
            sr_tones=sr_tones,
            rd_tones=rd_tones,
            sr_singulars=np.sort(np.linalg.svd(sr_tones, compute_uv=False), axis=1),
            rd_singulars=np.sort(np.linalg.svd(rd_tones, compute_uv=False), axis=1),
            seed=seed,
        )

    @property
    def n_c(self) -> int:
        return self.sr_tones.shape[0]

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(N_s, N_r, N_d)"""
        return self.sr_tones.shape[2], self.sr_tones.shape[1], self.rd_tones.shape[1]


def _rayleigh_taps(rng: np.random.Generator, profile: FadingProfile, shape: Tuple[int, int]) -> np.ndarray:
    std = np.sqrt(profile.powers() / 2.0)[:, None, None]
    full = (profile.length,) + shape
    return (rng.standard_normal(full) + 1j * rng.standard_normal(full)) * std


def generate_channel(
    rng: np.random.Generator,
    dims: Tuple[int, int, int],
    profiles: Tuple[FadingProfile, FadingProfile],
    n_c: int,
    seed: Optional[int] = None,
) -> ChannelRealization:
    """Draw one block-fading realization of both hops (S->R first, then R->D)."""
    n_s, n_r, n_d = dims
    if min(n_s, n_r, n_d) < 1:
        raise InvalidDimensionError(f"antenna counts must be >= 1, got {dims}")
    sr_profile, rd_profile = profiles
    for profile in (sr_profile, rd_profile):
        if profile.length > n_c:
            raise InvalidLengthError(f"profile of {profile.length} taps is longer than {n_c} tones")
    sr_taps = _rayleigh_taps(rng, sr_profile, (n_r, n_s))
    rd_taps = _rayleigh_taps(rng, rd_profile, (n_d, n_r))
    return ChannelRealization.from_taps(sr_taps, rd_taps, n_c, seed=seed)


def tone_gains(ch: ChannelRealization, m_streams: int) -> Tuple[np.ndarray, np.ndarray]:
    """(g, h), each N_c x M; column m is the m-th largest singular value per tone."""
    if not 1 <= m_streams <= min(ch.dims):
        raise InvalidDimensionError(f"{m_streams} streams do not fit antennas {ch.dims}")
    g = ch.sr_singulars[:, ::-1][:, :m_streams]
    h = ch.rd_singulars[:, ::-1][:, :m_streams]
    return np.ascontiguousarray(g), np.ascontiguousarray(h)
