# backend/scfde/verify.py
# =============================================================================
# Invariant suites behind `scfde verify`.
#
# Each suite runs a fixed number of seeded trials; a trial passes when every
# check inside it holds. Failures are collected with a short reason instead
# of stopping the run, so one bad factorization does not hide the others.
# =============================================================================

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .design import powalloc
from .design.equalizer import (
    build_z,
    compute_psi,
    dfe_objective,
    dfe_objective_bound,
    fddfe_design,
    fdle_design,
    feedback_error_covariance,
)
from .design.precoder import build_jsr, e2e_tones, link_psi
from .errors import ScfdeError
from .linalg.channel import FadingProfile, generate_channel, tone_gains
from .linalg.spectral import (
    block_circulant,
    dft_matrix,
    diagonal_blocks,
    gmd,
    kron_dft,
    ldl,
    sorted_svd,
    taps_to_tones,
)
from .schemas import Criterion, ReceiverMode
from .simulator import transmit_block

logger = logging.getLogger(__name__)

SuiteFn = Callable[[np.random.Generator], None]
SUITES: Dict[str, List[SuiteFn]] = {}


class CheckFailed(AssertionError):
    pass


def check(cond: bool, what: str):
    if not cond:
        raise CheckFailed(what)


def suite(name: str):
    def register(fn: SuiteFn) -> SuiteFn:
        SUITES.setdefault(name, []).append(fn)
        return fn
    return register


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0


def _rel(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(1.0, np.linalg.norm(b)))


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_hpd(rng: np.random.Generator, n: int) -> np.ndarray:
    a = crandn(rng, n, n)
    return a @ a.conj().T + n * np.eye(n)


def random_link(rng: np.random.Generator, n_c: int = 8, m: int = 2, n_r: int = 2, n_d: int = 2):
    """Random per-tone H, A and Q for equalizer checks."""
    h = crandn(rng, n_c, n_d, n_r)
    a = crandn(rng, n_c, n_r, n_r)
    q = crandn(rng, n_c, n_d, m)
    return h, a, q


def small_channel(rng: np.random.Generator, n_c: int = 8, dims=(2, 2, 2), taps: int = 3):
    profile = FadingProfile(taps, 2.0)
    return generate_channel(rng, dims, (profile, profile), n_c)


# ---------- spectral ----------
@suite("spectral")
def _dft_and_tones(rng):
    n = int(rng.integers(1, 17))
    f = dft_matrix(n)
    check(np.allclose(f @ f.conj().T, np.eye(n), atol=1e-12), "DFT not unitary")
    n_c, rows, cols = 8, int(rng.integers(1, 4)), int(rng.integers(1, 4))
    taps = crandn(rng, int(rng.integers(1, n_c + 1)), rows, cols)
    tones = taps_to_tones(taps, n_c)
    diag = kron_dft(n_c, rows) @ block_circulant(taps, n_c) @ kron_dft(n_c, cols).conj().T
    check(_rel(diagonal_blocks(diag, n_c, rows, cols), tones) < 1e-10, "block-circulant diagonalization")


@suite("spectral")
def _factorizations(rng):
    a = crandn(rng, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    svd = sorted_svd(a)
    check(_rel(svd.reconstruct(), a) < 1e-10, "SVD reconstruction")
    check(np.all(np.diff(svd.singular_values) >= 0), "SVD order")
    n = int(rng.integers(1, 9))
    hpd = random_hpd(rng, n)
    fact = ldl(hpd)
    check(_rel(fact.reconstruct(), hpd) < 1e-9, "LDL reconstruction")
    sq = crandn(rng, n, n)
    g = gmd(sq)
    check(_rel(g.q @ g.r @ g.v1, sq) < 1e-10, "GMD reconstruction")
    d = np.real(np.diag(g.r))
    check(np.ptp(d) / d.mean() < 1e-8, "GMD equal diagonal")


# ---------- channel ----------
@suite("channel")
def _parseval(rng):
    ch = small_channel(rng, n_c=16, taps=4)
    lhs = np.sum(np.abs(ch.sr_taps) ** 2)
    rhs = np.sum(np.abs(ch.sr_tones) ** 2) / ch.n_c
    check(abs(lhs - rhs) <= 1e-9 * lhs, "Parseval")
    g, _ = tone_gains(ch, 2)
    check(np.allclose(g[:, 0], [sorted_svd(t).singular_values[-1] for t in ch.sr_tones]), "tone gains")


# ---------- equalizer ----------
@suite("equalizer")
def _psi_and_linear(rng):
    h, a, q = random_link(rng)
    psi = compute_psi(h, a, q, 0.5, 0.7, 1.0)
    for p in psi.psi:
        check(np.allclose(p, p.conj().T, atol=1e-10), "Psi Hermitian")
        check(np.linalg.eigvalsh(p - np.eye(p.shape[0])).min() >= -1e-10, "Psi >= I")
    design = fdle_design(psi, q, 1.0)
    oracle = sum(np.linalg.inv(p) for p in psi.psi) / psi.n_c
    check(np.allclose(design.error_diag, np.real(np.diag(oracle)), atol=1e-10), "FD-LE error diagonal")


@suite("equalizer")
def _decision_feedback(rng):
    h, a, q = random_link(rng, n_c=16)
    psi = compute_psi(h, a, q, 0.5, 0.7, 1.0)
    for n_fb in (0, 3, 7):
        z = build_z(psi, n_fb)
        check(dfe_objective(z) <= dfe_objective_bound(z) * (1 + 1e-9), f"OBJ <= OBJ_ub at n_fb={n_fb}")
        design = fddfe_design(z, psi, q, 1.0)
        cov = feedback_error_covariance(z, design.fbf_taps, 1.0, psi.n_c)
        check(np.allclose(cov, np.diag(design.error_diag), atol=1e-9), f"C Z C^H = D at n_fb={n_fb}")
    z0 = build_z(psi, 0)
    check(abs(dfe_objective(z0) - dfe_objective_bound(z0)) <= 1e-9 * dfe_objective_bound(z0), "bound tight at 0")


# ---------- power allocation ----------
@suite("powalloc")
def _oracle(rng):
    n_c, m = (1, 2) if rng.random() < 0.5 else (2, 1)
    gains = powalloc.SubchannelGains(rng.rayleigh(1.0, (n_c, m)) + 0.1, rng.rayleigh(1.0, (n_c, m)) + 0.1)
    budgets = (float(rng.uniform(5, 50)), float(rng.uniform(5, 50)))
    for crit in (Criterion.AMSE, Criterion.GMSE):
        alloc = powalloc.optimize(gains, budgets, crit)
        grid = powalloc.oracle_grid_search(gains, budgets, crit, resolution=100)
        f_opt = powalloc.objective(powalloc.phi_highsnr(alloc.p_s, alloc.p_r, gains), crit)
        f_grid = powalloc.objective(powalloc.phi_highsnr(grid.p_s, grid.p_r, gains), crit)
        check(f_opt <= f_grid + 0.02 * abs(f_grid), f"{crit.value}: solver {f_opt:.6g} vs grid {f_grid:.6g}")
        check(alloc.p_s.sum() <= budgets[0] * (1 + 1e-6), "source budget")
        check(alloc.p_r.sum() <= budgets[1] * (1 + 1e-6), "relay budget")
        check(alloc.lam * abs(alloc.p_s.sum() - budgets[0]) < 1e-4 * budgets[0], "source slackness")
        check(alloc.mu * abs(alloc.p_r.sum() - budgets[1]) < 1e-4 * budgets[1], "relay slackness")


@suite("powalloc")
def _convexity(rng):
    n_c, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
    gains = powalloc.SubchannelGains(rng.rayleigh(1.0, (n_c, m)) + 0.1, rng.rayleigh(1.0, (n_c, m)) + 0.1)

    def point():
        return rng.uniform(0.1, 20.0, (n_c, m)), rng.uniform(0.1, 20.0, (n_c, m))

    (xs, xr), (ys, yr) = point(), point()
    for crit in (Criterion.AMSE, Criterion.GMSE):
        fx = powalloc.objective(powalloc.phi_highsnr(xs, xr, gains), crit)
        fy = powalloc.objective(powalloc.phi_highsnr(ys, yr, gains), crit)
        for t in (0.25, 0.5, 0.75):
            mid = powalloc.objective(powalloc.phi_highsnr(t * xs + (1 - t) * ys, t * xr + (1 - t) * yr, gains), crit)
            check(mid <= t * fx + (1 - t) * fy + 1e-9 * (1 + abs(fx) + abs(fy)), f"{crit.value} not convex at t={t}")


# ---------- precoder ----------
def _jsr(rng, criterion, mode, n_fb=0):
    ch = small_channel(rng)
    g, h = tone_gains(ch, 2)
    gains = powalloc.SubchannelGains(g, h, 1.0, 1.0, 1.0)
    budgets = (2 * 2 * ch.n_c * 10.0, 2 * 2 * ch.n_c * 10.0)
    alloc = powalloc.optimize(gains, budgets, Criterion.AMSE if criterion is Criterion.MAXMSE else criterion)
    pre = build_jsr(ch, alloc, gains, criterion, mode, n_fb)
    return ch, gains, alloc, pre


@suite("precoder")
def _structures(rng):
    ch, gains, alloc, pre = _jsr(rng, Criterion.AMSE, ReceiverMode.LINEAR)
    psi = link_psi(ch, pre, gains)
    off = psi.psi - np.einsum("kii->ki", psi.psi)[..., None] * np.eye(2)
    check(np.linalg.norm(off) < 1e-9 * max(1.0, np.linalg.norm(psi.psi)), "Psi diagonal (Schur-concave)")
    check(abs(np.sum(np.abs(pre.source_tones) ** 2) - alloc.p_s.sum()) <= 1e-8 * alloc.p_s.sum(), "source power")

    ch, gains, _, pre = _jsr(rng, Criterion.MAXMSE, ReceiverMode.LINEAR)
    design = fdle_design(link_psi(ch, pre, gains), e2e_tones(ch, pre))
    check(np.ptp(design.error_diag) <= 1e-10 * max(1.0, design.error_diag.sum()), "equal MSE under V0")

    ch, gains, _, pre = _jsr(rng, Criterion.GMSE, ReceiverMode.DECISION_FEEDBACK, n_fb=3)
    psi = link_psi(ch, pre, gains)
    design = fddfe_design(build_z(psi, 3), psi, e2e_tones(ch, pre))
    check(np.ptp(design.error_diag) <= 1e-8 * design.error_diag.mean(), "equal diag(D) under V1")


# ---------- simulator ----------
@suite("simulator")
def _paths_agree(rng):
    ch, gains, _, pre = _jsr(rng, Criterion.GMSE, ReceiverMode.LINEAR)
    s = crandn(rng, ch.n_c, 2)
    seed = int(rng.integers(0, 2 ** 32))
    y_f = transmit_block(s, pre, ch, np.random.default_rng(seed), (1.0, 1.0), False)
    y_t = transmit_block(s, pre, ch, np.random.default_rng(seed), (1.0, 1.0), True, (3, 3))
    check(np.allclose(y_f, y_t, atol=1e-9), "time-domain and per-tone paths differ")


# ---------- runner ----------
def run_suites(name_filter: Optional[str] = None, trials: int = 20, seed: int = 0) -> List[SuiteResult]:
    results = []
    for name, checks in SUITES.items():
        if name_filter and name_filter not in name:
            continue
        res = SuiteResult(name)
        for t in range(trials):
            for index, fn in enumerate(checks):
                rng = np.random.default_rng([seed, t, index])
                try:
                    fn(rng)
                    res.passed += 1
                except (CheckFailed, ScfdeError) as e:
                    res.failed += 1
                    res.failures.append(f"{fn.__name__} trial {t}: {e}")
        logger.info("[verify] %s passed=%d failed=%d", name, res.passed, res.failed)
        results.append(res)
    return results
