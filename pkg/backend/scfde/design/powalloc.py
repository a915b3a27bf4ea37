# backend/scfde/design/powalloc.py
# =============================================================================
# Per-tone, per-stream power allocation for the source and the relay.
#
# After the precoder structure is fixed, subchannel (k, m) is a scalar
# two-hop link with gains g_km, h_km and powers P_s,km, P_r,km. Its
# effective SNR + 1 is Phi_km. The optimizer works on the high-SNR form
# Phi~ (convex objective), alternating between the source block (P_r fixed)
# and the relay block (P_s fixed). Each block is solved by the closed-form
# KKT levels with the dual multiplier driven by a subgradient loop until the
# budget holds to eps1. If the loop runs out of steps first, the multiplier is
# bisected on the budget equation instead and the trace row is marked pinned.
# A block result that would raise the objective is discarded, and the final
# powers are rescaled onto the budgets.
#
# GMSE is handled by re-weighting: the per-stream weight is refreshed from
# the previous iterate before every inner iteration, which majorizes the
# log objective, so the outer objective never increases. maxMSE uses the
# AMSE allocation (the equalizing rotation is applied by the precoder).
# =============================================================================

import csv
import itertools
import logging
from dataclasses import dataclass, field
from math import comb
from typing import IO, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from ..errors import (
    ConvergenceError,
    DomainError,
    InstanceTooLargeError,
    InvalidDimensionError,
    InvalidParameterError,
    NumericInputError,
    UnboundedUpdateError,
)
from ..schemas import Criterion

logger = logging.getLogger(__name__)

ORACLE_MAX_SUBCHANNELS = 8
ORACLE_MAX_POINTS = 5_000_000


# ---------- data ----------
@dataclass(frozen=True)
class SubchannelGains:
    g: np.ndarray            # (N_c, M) source-hop gains, largest stream first
    h: np.ndarray            # (N_c, M) relay-hop gains
    sigma_v2: float = 1.0    # relay noise
    sigma_u2: float = 1.0    # destination noise
    sigma_s2: float = 1.0    # symbol energy

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.g, dtype=float))
        h = np.atleast_2d(np.asarray(self.h, dtype=float))
        if g.shape != h.shape:
            raise InvalidDimensionError(f"g{g.shape} and h{h.shape} differ")
        values = np.concatenate([g.ravel(), h.ravel(), [self.sigma_v2, self.sigma_u2, self.sigma_s2]])
        if not np.all(np.isfinite(values)):
            raise NumericInputError("gains and variances must be finite")
        if np.any(values < 0):
            raise DomainError("gains and variances must be >= 0")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @property
    def n_c(self) -> int:
        return self.g.shape[0]

    @property
    def m(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class TraceEntry:
    outer: int
    inner: int
    side: str                 # "source" | "relay" | "init"
    lam: float
    mu: float
    objective: float
    source_residual: float    # sum(P_s) - P_S
    relay_residual: float     # sum(P_r) - P_R
    steps: int = 0            # subgradient steps taken for this multiplier
    pinned: bool = False      # subgradient missed eps1; multiplier set by bisection


TRACE_COLUMNS = ["outer", "inner", "side", "lam", "mu", "objective", "source_residual", "relay_residual",
                 "steps", "pinned"]


@dataclass
class PowerAllocation:
    p_s: np.ndarray
    p_r: np.ndarray
    lam: float = 0.0
    mu: float = 0.0
    trace: List[TraceEntry] = field(default_factory=list)
    outer_iterations: int = 0
    converged: bool = True

    @property
    def objective_trace(self) -> List[float]:
        """Objective at the end of each outer iteration (index 0 is the start point)."""
        last = {}
        for e in self.trace:
            last[e.outer] = e.objective
        return [last[k] for k in sorted(last)]


# ---------- Phi and objectives ----------
def _pick(gains: SubchannelGains, k: Optional[int], m: Optional[int]):
    if k is None and m is None:
        return gains.g, gains.h
    return gains.g[k, m], gains.h[k, m]


def phi_exact(p_s, p_r, gains: SubchannelGains, k: Optional[int] = None, m: Optional[int] = None):
    """Phi = P_s P_r g^2 h^2 / (s_v P_r h^2 + s_u (P_s g^2 + s_v)) + 1."""
    g, h = _pick(gains, k, m)
    x = np.asarray(p_s, dtype=float) * g ** 2
    y = np.asarray(p_r, dtype=float) * h ** 2
    den = gains.sigma_v2 * y + gains.sigma_u2 * (x + gains.sigma_v2)
    num = x * y
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(num > 0, num / np.where(den > 0, den, 1.0), 0.0) + 1.0
    return float(phi) if np.ndim(phi) == 0 else phi


def phi_highsnr(p_s, p_r, gains: SubchannelGains, k: Optional[int] = None, m: Optional[int] = None):
    """High-SNR form: drops the s_u s_v term of the denominator. Equals 1 when both powers are 0."""
    g, h = _pick(gains, k, m)
    x = np.asarray(p_s, dtype=float) * g ** 2
    y = np.asarray(p_r, dtype=float) * h ** 2
    den = gains.sigma_v2 * y + gains.sigma_u2 * x
    num = x * y
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where((num > 0) & (den > 0), num / np.where(den > 0, den, 1.0), 0.0) + 1.0
    return float(phi) if np.ndim(phi) == 0 else phi


def stream_mse(phi: np.ndarray) -> np.ndarray:
    """MSE_m = (1/N_c) sum_k 1/Phi_km."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if np.any(phi < 1.0 - 1e-12) or not np.all(np.isfinite(phi)):
        raise DomainError("Phi values must be finite and >= 1")
    return np.mean(1.0 / phi, axis=0)


def objective(phi: np.ndarray, criterion: Criterion) -> float:
    mse = stream_mse(phi)
    criterion = Criterion(criterion)
    if criterion is Criterion.AMSE:
        return float(mse.sum())
    if criterion is Criterion.GMSE:
        return float(np.sum(np.log2(mse)))
    return float(mse.max())


def _working_criterion(criterion: Criterion) -> Criterion:
    criterion = Criterion(criterion)
    return Criterion.AMSE if criterion is Criterion.MAXMSE else criterion


def stream_weights(phi: np.ndarray, criterion: Criterion) -> np.ndarray:
    """Weight w_m multiplying d(1/Phi_km) in the stationarity condition."""
    phi = np.atleast_2d(phi)
    n_c = phi.shape[0]
    if _working_criterion(criterion) is Criterion.GMSE:
        return 1.0 / (np.log(2.0) * np.sum(1.0 / phi, axis=0))
    return np.full(phi.shape[1], 1.0 / n_c)


# ---------- KKT closed forms ----------
def _check_multiplier(mult: float):
    if mult == 0:
        raise UnboundedUpdateError("multiplier is zero; the power level is unbounded")
    if mult < 0 or not np.isfinite(mult):
        raise InvalidParameterError(f"multiplier must be positive and finite, got {mult}")


def kkt_source_update(p_r, lam: float, weight, gains: SubchannelGains,
                      k: Optional[int] = None, m: Optional[int] = None):
    """P_s = s_v y / (g^2 (y + s_u)) [sqrt(w g^2 / (lam s_v)) - 1]^+ with y = P_r h^2."""
    _check_multiplier(lam)
    g, h = _pick(gains, k, m)
    y = np.asarray(p_r, dtype=float) * h ** 2
    sv, su = gains.sigma_v2, gains.sigma_u2
    with np.errstate(divide="ignore", invalid="ignore"):
        level = np.maximum(np.sqrt(weight * g ** 2 / (lam * sv)) - 1.0, 0.0)
        scale = sv * y / (g ** 2 * (y + su))
        out = np.where((g > 0) & (y > 0), scale * level, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def kkt_relay_update(p_s, mu: float, weight, gains: SubchannelGains,
                     k: Optional[int] = None, m: Optional[int] = None):
    """P_r = s_u x / (h^2 (x + s_v)) [sqrt(w h^2 / (mu s_u)) - 1]^+ with x = P_s g^2."""
    _check_multiplier(mu)
    g, h = _pick(gains, k, m)
    x = np.asarray(p_s, dtype=float) * g ** 2
    sv, su = gains.sigma_v2, gains.sigma_u2
    with np.errstate(divide="ignore", invalid="ignore"):
        level = np.maximum(np.sqrt(weight * h ** 2 / (mu * su)) - 1.0, 0.0)
        scale = su * x / (h ** 2 * (x + sv))
        out = np.where((h > 0) & (x > 0), scale * level, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def subgradient_step(multiplier: float, eps: float, consumed: float, budget: float) -> float:
    """Projected dual ascent: the price rises while the budget is exceeded."""
    if not eps > 0:
        raise InvalidParameterError(f"step size must be positive, got {eps}")
    return max(0.0, multiplier + eps * (consumed - budget))


# ---------- one block (one side, other side frozen) ----------
def _update(side: str, other: np.ndarray, mult: float, weight: np.ndarray, gains: SubchannelGains) -> np.ndarray:
    if side == "source":
        return kkt_source_update(other, mult, weight, gains)
    return kkt_relay_update(other, mult, weight, gains)


def _stationarity_price(side: str, p_s, p_r, weight, gains: SubchannelGains) -> float:
    """Mean of -df/dP over active subchannels; the multiplier that makes the point stationary on average."""
    x, y = p_s * gains.g ** 2, p_r * gains.h ** 2
    sv, su = gains.sigma_v2, gains.sigma_u2
    den = (x * y + sv * y + su * x) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        if side == "source":
            grad = weight * gains.g ** 2 * sv * y ** 2 / den
        else:
            grad = weight * gains.h ** 2 * su * x ** 2 / den
    grad = grad[np.isfinite(grad) & (grad > 0)]
    return float(grad.mean()) if grad.size else 1.0


def _consumed(side, other, mult, weight, gains) -> float:
    return float(np.sum(_update(side, other, mult, weight, gains)))


def _dual_ascent(side, other, mult, weight, gains, budget, tol, max_sub) -> Tuple[float, int, bool]:
    """
    Subgradient loop on one multiplier with step eps_n = (mult_0 / budget) / sqrt(n).
    Stops once the KKT powers consume the budget to within tol.
    Returns (multiplier, steps, pinned); pinned means the loop ran out of steps
    and the multiplier came from bisection on the budget equation instead.
    """
    eps0 = mult / budget
    steps = 0
    for n in range(1, max_sub + 1):
        consumed = _consumed(side, other, mult, weight, gains)
        if abs(consumed - budget) <= tol * budget:
            return mult, steps, False
        new = subgradient_step(mult, eps0 / np.sqrt(n), consumed, budget)
        mult = new if new > 0 else mult / 2
        steps = n
    if abs(_consumed(side, other, mult, weight, gains) - budget) <= tol * budget:
        return mult, steps, False
    logger.debug("[solver] %s multiplier missed the budget after %d steps, bisecting", side, steps)
    return _water_level(side, other, weight, gains, budget, mult), steps, True


def _water_level(side, other, weight, gains, budget, guess) -> float:
    """Multiplier at which the KKT powers consume exactly `budget`."""
    def excess(log_mult):
        return float(np.sum(_update(side, other, np.exp(log_mult), weight, gains))) - budget

    lo = hi = np.log(guess)
    step = np.log(10.0)
    for _ in range(200):
        if excess(lo) > 0:
            break
        lo -= step
    for _ in range(200):
        if excess(hi) < 0:
            break
        hi += step
    if excess(lo) <= 0 or excess(hi) >= 0:
        return guess
    return float(np.exp(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-12)))


def _solve_block(side, p_s, p_r, mult, gains, budget, criterion, tol, max_inner, max_sub, outer, trace, other_mult, budgets):
    """Inner loop for one side. Returns (new powers, multiplier, inner iterations)."""
    crit = _working_criterion(criterion)
    cur = (p_s if side == "source" else p_r).copy()
    other = p_r if side == "source" else p_s
    if not np.any(other > 0):
        return cur, mult, 0

    def pair(powers):
        return (powers, p_r) if side == "source" else (p_s, powers)

    prev_obj = objective(phi_highsnr(*pair(cur), gains), crit)
    inner = 0
    for inner in range(1, max_inner + 1):
        weight = stream_weights(phi_highsnr(*pair(cur), gains), crit)[None, :]
        new_mult, steps, pinned = _dual_ascent(side, other, mult, weight, gains, budget, tol, max_sub)
        new = _update(side, other, new_mult, weight, gains)

        obj = objective(phi_highsnr(*pair(new), gains), crit)
        worse = obj > prev_obj
        if not worse:
            cur, mult = new, new_mult
        else:
            # the budget only holds to tol here; keep the previous iterate
            obj = prev_obj
        ps_now, pr_now = pair(cur)
        lam, mu = (mult, other_mult) if side == "source" else (other_mult, mult)
        trace.append(TraceEntry(outer, inner, side, lam, mu, obj,
                                float(ps_now.sum() - budgets[0]), float(pr_now.sum() - budgets[1]),
                                steps, pinned))
        if worse or crit is not Criterion.GMSE:
            break
        if abs(prev_obj - obj) <= tol * max(abs(obj), 1e-12):
            break
        prev_obj = obj
    return cur, mult, inner


def _allocation_objective(alloc: PowerAllocation, gains: SubchannelGains, criterion: Criterion) -> float:
    return objective(phi_highsnr(alloc.p_s, alloc.p_r, gains), criterion)


def _reconcile(p_s: np.ndarray, p_r: np.ndarray, budgets: Tuple[float, float]):
    """Zero both powers where either is zero, then scale back up to the budgets."""
    dead = (p_s <= 0) | (p_r <= 0)
    p_s = np.where(dead, 0.0, p_s)
    p_r = np.where(dead, 0.0, p_r)
    for arr, budget in ((p_s, budgets[0]), (p_r, budgets[1])):
        total = arr.sum()
        if total > 0:
            arr *= budget / total
    return p_s, p_r


def _check_budgets(budgets):
    p_total_s, p_total_r = budgets
    if not (p_total_s > 0 and p_total_r > 0) or not np.isfinite([p_total_s, p_total_r]).all():
        raise InvalidParameterError(f"power budgets must be positive and finite, got {budgets}")


def _check_variances(gains: SubchannelGains):
    if not (gains.sigma_v2 > 0 and gains.sigma_u2 > 0):
        raise InvalidParameterError("the optimizer needs positive noise variances")


def optimize(
    gains: SubchannelGains,
    budgets: Tuple[float, float],
    criterion: Criterion,
    tolerances: Tuple[float, float] = (1e-4, 1e-4),
    max_outer: int = 20,
    max_inner: int = 50,
    max_subgradient: int = 200,
) -> PowerAllocation:
    """Alternating source/relay allocation minimizing the high-SNR objective."""
    _check_budgets(budgets)
    _check_variances(gains)
    eps1, eps2 = tolerances
    crit = _working_criterion(criterion)
    n = gains.n_c * gains.m
    p_s = np.full(gains.g.shape, budgets[0] / n)
    p_r = np.full(gains.g.shape, budgets[1] / n)

    weight = stream_weights(phi_highsnr(p_s, p_r, gains), crit)[None, :]
    lam = _stationarity_price("source", p_s, p_r, weight, gains)
    mu = _stationarity_price("relay", p_s, p_r, weight, gains)
    trace: List[TraceEntry] = []
    obj = objective(phi_highsnr(p_s, p_r, gains), crit)
    trace.append(TraceEntry(0, 0, "init", lam, mu, obj, 0.0, 0.0))
    best = PowerAllocation(p_s.copy(), p_r.copy(), lam, mu, trace, 0, False)

    for outer in range(1, max_outer + 1):
        prev = obj
        p_s, lam, _ = _solve_block("source", p_s, p_r, lam, gains, budgets[0], crit, eps1,
                                   max_inner, max_subgradient, outer, trace, mu, budgets)
        p_r, mu, _ = _solve_block("relay", p_s, p_r, mu, gains, budgets[1], crit, eps1,
                                  max_inner, max_subgradient, outer, trace, lam, budgets)
        obj = objective(phi_highsnr(p_s, p_r, gains), crit)
        logger.debug("[solver] outer=%d objective=%.8g lam=%.4g mu=%.4g", outer, obj, lam, mu)
        if obj <= _allocation_objective(best, gains, crit):
            best = PowerAllocation(p_s.copy(), p_r.copy(), lam, mu, trace, outer, False)
        if abs(prev - obj) <= eps2 * max(abs(obj), 1e-12):
            p_s, p_r = _reconcile(p_s, p_r, budgets)
            logger.info("[solver] converged after %d outer iterations, objective=%.8g", outer, obj)
            return PowerAllocation(p_s, p_r, lam, mu, trace, outer, True)

    raise ConvergenceError(f"power allocation did not converge in {max_outer} outer iterations", best=best)


def optimize_relay(
    gains: SubchannelGains,
    p_s: np.ndarray,
    relay_budget: float,
    criterion: Criterion,
    tolerance: float = 1e-4,
    max_inner: int = 50,
    max_subgradient: int = 200,
) -> PowerAllocation:
    """Relay half of the loop with the source powers frozen."""
    p_s = np.asarray(p_s, dtype=float)
    if p_s.shape != gains.g.shape:
        raise InvalidDimensionError(f"source powers {p_s.shape} do not match gains {gains.g.shape}")
    if np.any(p_s < 0) or not p_s.sum() > 0:
        raise DomainError("source powers must be >= 0 and not all zero")
    _check_budgets((p_s.sum(), relay_budget))
    _check_variances(gains)
    crit = _working_criterion(criterion)
    budgets = (float(p_s.sum()), relay_budget)
    p_r = np.where(p_s > 0, 1.0, 0.0)
    p_r *= relay_budget / max(p_r.sum(), 1.0)

    weight = stream_weights(phi_highsnr(p_s, p_r, gains), crit)[None, :]
    mu = _stationarity_price("relay", p_s, p_r, weight, gains)
    trace = [TraceEntry(0, 0, "init", 0.0, mu, objective(phi_highsnr(p_s, p_r, gains), crit), 0.0, 0.0)]
    p_r, mu, inner = _solve_block("relay", p_s, p_r, mu, gains, relay_budget, crit, tolerance,
                                  max_inner, max_subgradient, 1, trace, 0.0, budgets)
    converged = crit is not Criterion.GMSE or inner < max_inner
    if not converged:
        raise ConvergenceError("relay allocation did not converge",
                               best=PowerAllocation(p_s.copy(), p_r, 0.0, mu, trace, 1, False))
    if p_r.sum() > 0:
        p_r = p_r * (relay_budget / p_r.sum())
    return PowerAllocation(p_s.copy(), p_r, 0.0, mu, trace, 1, True)


# ---------- brute-force oracle ----------
def _compositions(units: int, parts: int) -> np.ndarray:
    """All ways to split `units` into `parts` non-negative integers (stars and bars)."""
    if parts == 1:
        return np.array([[units]])
    rows = []
    for bars in itertools.combinations(range(units + parts - 1), parts - 1):
        edges = (-1,) + bars + (units + parts - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(parts)])
    return np.array(rows)


def oracle_grid_search(
    gains: SubchannelGains,
    budgets: Tuple[float, float],
    criterion: Criterion,
    resolution: int = 200,
) -> PowerAllocation:
    """Exhaustive search over full-budget grid points, step budget/resolution on each side."""
    _check_budgets(budgets)
    n = gains.n_c * gains.m
    if n > ORACLE_MAX_SUBCHANNELS:
        raise InstanceTooLargeError(f"{n} subchannels exceed the oracle limit of {ORACLE_MAX_SUBCHANNELS}")
    per_side = comb(resolution + n - 1, n - 1)
    if per_side ** 2 > ORACLE_MAX_POINTS:
        raise InstanceTooLargeError(f"{per_side ** 2} grid points exceed {ORACLE_MAX_POINTS}; lower the resolution")

    crit = _working_criterion(criterion)
    grid = _compositions(resolution, n) / resolution
    src = grid * budgets[0]
    rel = grid * budgets[1]
    g2, h2 = gains.g.ravel() ** 2, gains.h.ravel() ** 2
    y = rel * h2                                  # (P, n)
    chunk = max(1, ORACLE_MAX_POINTS // (len(rel) * n))

    best_val, best_idx = np.inf, (0, 0)
    for start in range(0, len(src), chunk):
        x = (src[start:start + chunk] * g2)[:, None, :]       # (c, 1, n)
        num = x * y[None]
        den = gains.sigma_v2 * y[None] + gains.sigma_u2 * x
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_phi = 1.0 / (np.where(num > 0, num / np.where(den > 0, den, 1.0), 0.0) + 1.0)
        mse = inv_phi.reshape(inv_phi.shape[0], inv_phi.shape[1], gains.n_c, gains.m).mean(axis=2)
        if crit is Criterion.GMSE:
            vals = np.log2(mse).sum(axis=2)
        else:
            vals = mse.sum(axis=2)
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[i, j] < best_val:
            best_val, best_idx = float(vals[i, j]), (start + i, j)

    p_s = src[best_idx[0]].reshape(gains.g.shape)
    p_r = rel[best_idx[1]].reshape(gains.g.shape)
    logger.debug("[oracle] %d x %d grid points, best objective %.8g", len(src), len(rel), best_val)
    return PowerAllocation(p_s, p_r, outer_iterations=0, converged=True)


# ---------- export ----------
def write_trace_csv(trace: List[TraceEntry], out: IO[str], extra: Optional[dict] = None) -> None:
    """Write trace rows; `extra` columns (e.g. snr, trial) are prepended to every row."""
    extra = extra or {}
    writer = csv.writer(out, lineterminator="\n")
    for e in trace:
        writer.writerow(list(extra.values()) + [e.outer, e.inner, e.side, f"{e.lam:.10g}", f"{e.mu:.10g}",
                                                f"{e.objective:.12g}", f"{e.source_residual:.6g}",
                                                f"{e.relay_residual:.6g}", e.steps, int(e.pinned)])
