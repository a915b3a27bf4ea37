# backend/scfde/simulator.py
# =============================================================================
# Seeded Monte-Carlo link simulation.
#
# One trial = one channel realization:
#   channel -> power allocation -> precoders -> equalizer -> blocks
# Trial t draws everything from default_rng([seed, t]) in a fixed order
# (channel taps, then per block: data bits, relay noise, destination noise).
# Known feedback pilots come from default_rng([seed, t, 1]), which the
# receiver can regenerate. Trials are independent, so they can be farmed out
# to worker processes and summed in trial order.
# =============================================================================

import csv
import hashlib
import json
import logging
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import __version__
from .design import powalloc
from .design.equalizer import (
    apply_fddfe,
    apply_fdle,
    build_z,
    dfe_objective,
    dfe_objective_bound,
    dfe_slicer_input,
    fddfe_design,
    fdle_design,
)
from .design.precoder import PrecoderSet, design_precoders, e2e_tones, link_psi
from .errors import ConvergenceError, InvalidDimensionError, InvalidLengthError
from .linalg.channel import ChannelRealization, FadingProfile, generate_channel
from .linalg.spectral import circular_convolve, linear_convolve, tones_to_taps
from .schemas import Criterion, ExperimentConfig, MetricsRecord, ReceiverMode

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SIGMA_S2 = 1.0
TRACE_FEEDBACK_LENGTHS = (0, 1, 3, 7, 15)


# ---------- QPSK ----------
def qpsk_map(bits) -> np.ndarray:
    """Gray QPSK: bit pair (b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)."""
    bits = np.asarray(bits, dtype=int).ravel()
    if bits.size % 2:
        raise InvalidLengthError(f"QPSK needs an even number of bits, got {bits.size}")
    pairs = bits.reshape(-1, 2)
    return ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1])) / np.sqrt(2.0)


def qpsk_slice(soft) -> np.ndarray:
    soft = np.asarray(soft, dtype=complex).ravel()
    bits = np.empty((soft.size, 2), dtype=int)
    bits[:, 0] = soft.real <= 0
    bits[:, 1] = soft.imag <= 0
    return bits.ravel()


QPSK = qpsk_map([0, 0, 0, 1, 1, 0, 1, 1])


# ---------- SNR ----------
def snr_to_variance(config: ExperimentConfig, relay_snr_db: Optional[float] = None) -> Tuple[float, float, float, float]:
    """(sigma_v2, sigma_u2, P_S, P_R) with unit noise; P = N_b N_s N_c 10^(dB/10) sigma^2."""
    sigma_v2 = sigma_u2 = 1.0
    sim, sys_ = config.simulation, config.system
    scale = sim.bits_per_symbol * sys_.n_s * sys_.n_c
    relay_db = sim.relay_snr_db[0] if relay_snr_db is None else relay_snr_db
    p_s = scale * 10 ** (sim.source_snr_db / 10) * sigma_u2
    p_r = scale * 10 ** (relay_db / 10) * sigma_v2
    return sigma_v2, sigma_u2, p_s, p_r


def _profiles(config: ExperimentConfig) -> Tuple[FadingProfile, FadingProfile]:
    c = config.channel
    return FadingProfile(c.l_g, c.decay), FadingProfile(c.l_h, c.decay)


def _dims(config: ExperimentConfig) -> Tuple[int, int, int]:
    s = config.system
    return s.n_s, s.n_r, s.n_d


# ---------- transmission ----------
def _cn(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(var / 2.0)


def _add_cp(x: np.ndarray, cp: int) -> np.ndarray:
    return np.concatenate([x[x.shape[0] - cp:], x]) if cp else x


def transmit_block(
    s: np.ndarray,
    pre: PrecoderSet,
    channel: ChannelRealization,
    rng: np.random.Generator,
    noise: Tuple[float, float],
    time_domain: bool = False,
    cp: Tuple[int, int] = (16, 16),
) -> np.ndarray:
    """Received block (N_c, N_d) for symbols s (N_c, M). Relay noise is drawn before destination noise."""
    s = np.asarray(s, dtype=complex)
    n_c, m = pre.n_c, pre.m
    if s.shape != (n_c, m):
        raise InvalidDimensionError(f"expected symbols of shape ({n_c}, {m}), got {s.shape}")
    _, n_r, n_d = channel.dims
    v = _cn(rng, (n_c, n_r), noise[0])
    u = _cn(rng, (n_c, n_d), noise[1])

    if not time_domain:
        sf = np.fft.fft(s, axis=0, norm="ortho")
        r = np.einsum("kij,kj->ki", channel.sr_tones @ pre.source_tones, sf) + np.fft.fft(v, axis=0, norm="ortho")
        yf = np.einsum("kij,kj->ki", channel.rd_tones @ pre.relay_tones, r)
        return np.fft.ifft(yf, axis=0, norm="ortho") + u

    cp_s, cp_r = cp
    if cp_s < channel.sr_taps.shape[0] - 1 or cp_r < channel.rd_taps.shape[0] - 1:
        raise InvalidLengthError("cyclic prefix shorter than the channel memory")
    x = circular_convolve(tones_to_taps(pre.source_tones), s)
    r = linear_convolve(channel.sr_taps, _add_cp(x, cp_s))[cp_s:cp_s + n_c] + v
    t = circular_convolve(tones_to_taps(pre.relay_tones), r)
    return linear_convolve(channel.rd_taps, _add_cp(t, cp_r))[cp_r:cp_r + n_c] + u


# ---------- one trial ----------
@dataclass
class TrialResult:
    bits: int = 0
    bit_errors: int = 0
    blocks: int = 0
    skipped: int = 0
    mse_sum: Optional[np.ndarray] = None      # (M,) sum |e|^2
    mse_sq_sum: Optional[np.ndarray] = None   # (M,) sum |e|^4
    mse_count: int = 0
    analytic_mse: Optional[np.ndarray] = None
    capacity: float = 0.0
    objective_trace: List[float] = field(default_factory=list)
    outer_iterations: int = 0


def _capacity(design, alloc, gains, mode: ReceiverMode) -> float:
    if mode is ReceiverMode.DECISION_FEEDBACK:
        return float(np.sum(np.log2(SIGMA_S2 / design.error_diag)))
    phi = powalloc.phi_exact(alloc.p_s, alloc.p_r, gains)
    return -powalloc.objective(phi, Criterion.GMSE)


def _design_trial(config: ExperimentConfig, channel: ChannelRealization, noise, budgets, n_fb: int):
    o = config.optimizer
    pre, alloc, gains = design_precoders(
        channel, config.system.m, o.scheme, o.criterion, o.receiver, budgets, noise, n_fb,
        (o.eps1, o.eps2), o.max_outer, o.max_inner, o.max_subgradient, SIGMA_S2,
    )
    psi = link_psi(channel, pre, gains)
    q = e2e_tones(channel, pre)
    if o.receiver is ReceiverMode.DECISION_FEEDBACK:
        design = fddfe_design(build_z(psi, n_fb), psi, q, SIGMA_S2)
    else:
        design = fdle_design(psi, q, SIGMA_S2)
    return pre, alloc, gains, design


def run_trial(config: ExperimentConfig, relay_snr_db: float, n_fb: int, trial: int) -> TrialResult:
    seed = config.simulation.seed
    rng = np.random.default_rng([seed, trial])
    pilots = np.random.default_rng([seed, trial, 1])
    sigma_v2, sigma_u2, p_s, p_r = snr_to_variance(config, relay_snr_db)
    noise = (sigma_v2, sigma_u2)
    n_c, m = config.system.n_c, config.system.m
    mode = config.optimizer.receiver

    channel = generate_channel(rng, _dims(config), _profiles(config), n_c, seed=trial)
    try:
        pre, alloc, gains, design = _design_trial(config, channel, noise, (p_s, p_r), n_fb)
    except ConvergenceError as e:
        logger.warning("[simulate] snr=%.1f dB trial %d skipped: %s", relay_snr_db, trial, e)
        return TrialResult(skipped=1)

    res = TrialResult(mse_sum=np.zeros(m), mse_sq_sum=np.zeros(m), analytic_mse=design.error_diag.copy(),
                      capacity=_capacity(design, alloc, gains, mode),
                      objective_trace=alloc.objective_trace, outer_iterations=alloc.outer_iterations)
    n_data = n_c - design.n_fb
    cp = (config.channel.cp_source, config.channel.cp_relay)
    for _ in range(config.simulation.blocks_per_trial):
        bits = rng.integers(0, 2, size=2 * n_data * m)
        s = np.empty((n_c, m), dtype=complex)
        s[:n_data] = qpsk_map(bits).reshape(n_data, m)
        if design.n_fb:
            s[n_data:] = QPSK[pilots.integers(0, len(QPSK), size=(design.n_fb, m))]
        y = transmit_block(s, pre, channel, rng, noise, config.simulation.time_domain, cp)

        if mode is ReceiverMode.DECISION_FEEDBACK:
            decided = apply_fddfe(y, design, QPSK, bootstrap=s[n_data:] if design.n_fb else None)
            err = dfe_slicer_input(y, design, s) - s
        else:
            soft = apply_fdle(y, design)
            decided = soft
            err = soft - s
        res.bit_errors += int(np.sum(qpsk_slice(decided[:n_data]) != bits))
        res.bits += bits.size
        res.blocks += 1
        e2 = np.abs(err) ** 2
        res.mse_sum += e2.sum(axis=0)
        res.mse_sq_sum += (e2 ** 2).sum(axis=0)
        res.mse_count += n_c
    return res


def _trial_task(args) -> TrialResult:
    return run_trial(*args)


# ---------- one SNR point ----------
def run_point(
    config: ExperimentConfig,
    relay_snr_db: float,
    n_fb: Optional[int] = None,
    executor: Optional[Executor] = None,
) -> MetricsRecord:
    if n_fb is None:
        n_fb = config.feedback_lengths[0]
    if config.optimizer.receiver is ReceiverMode.LINEAR:
        n_fb = 0
    tasks = [(config, relay_snr_db, n_fb, t) for t in range(config.simulation.trials)]
    if executor is None:
        results: Iterable[TrialResult] = map(_trial_task, tasks)
    else:
        results = executor.map(_trial_task, tasks, chunksize=max(1, len(tasks) // 64))

    m = config.system.m
    bits = errors = blocks = skipped = count = 0
    mse_sum, mse_sq, analytic = np.zeros(m), np.zeros(m), np.zeros(m)
    capacity, iterations, solved = 0.0, 0, 0
    trace: List[float] = []
    for r in results:
        if r.skipped:
            skipped += r.skipped
            continue
        solved += 1
        bits += r.bits
        errors += r.bit_errors
        blocks += r.blocks
        count += r.mse_count
        mse_sum += r.mse_sum
        mse_sq += r.mse_sq_sum
        analytic += r.analytic_mse
        capacity += r.capacity
        iterations += r.outer_iterations
        if not trace:
            trace = list(r.objective_trace)

    if solved:
        mean = mse_sum / count
        var = np.maximum(mse_sq / count - mean ** 2, 0.0)
        stderr = np.sqrt(var / count)
        analytic /= solved
        capacity /= solved
    else:
        mean = stderr = np.full(m, np.nan)
        analytic = np.full(m, np.nan)
    o = config.optimizer
    record = MetricsRecord(
        scheme=o.scheme, criterion=o.criterion, receiver=o.receiver,
        relay_snr_db=relay_snr_db, n_fb=n_fb,
        ber=errors / bits if bits else 0.0,
        analytic_mse=analytic.tolist(), empirical_mse=mean.tolist(), empirical_mse_stderr=stderr.tolist(),
        capacity=capacity, objective_trace=trace,
        solver_iterations=iterations / solved if solved else 0.0,
        symbols=bits // 2, bits=bits, errors=errors, blocks=blocks, skipped=skipped,
    )
    logger.info("[simulate] %s snr=%.1f dB n_fb=%d ber=%.3e skipped=%d",
                config_hash(config), relay_snr_db, n_fb, record.ber, skipped)
    return record


def run_sweep(config: ExperimentConfig, jobs: int = 1, progress: bool = False) -> List[MetricsRecord]:
    points = [(n_fb, snr) for n_fb in config.feedback_lengths for snr in config.simulation.relay_snr_db]
    bar = tqdm(points, desc=f"sweep {config_hash(config)}", disable=not progress, unit="pt")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return [run_point(config, snr, n_fb, pool) for n_fb, snr in bar]
    return [run_point(config, snr, n_fb) for n_fb, snr in bar]


# ---------- CSV ----------
def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


CSV_COLUMNS = [
    "config_hash", "scheme", "criterion", "receiver", "relay_snr_db", "n_fb",
    "ber", "bit_errors", "bits", "blocks", "skipped", "capacity",
    "analytic_mse", "empirical_mse", "empirical_mse_stderr", "solver_iterations",
]


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _fmt_list(xs: Sequence[float]) -> str:
    return ";".join(_fmt(x) for x in xs)


def write_metrics_csv(runs: Sequence[Tuple[ExperimentConfig, List[MetricsRecord]]], out: IO[str]) -> None:
    """Row 1 carries the schema and tool version; each config is echoed as a comment line."""
    hashes = [config_hash(c) for c, _ in runs]
    out.write(f"# schema_version={SCHEMA_VERSION},tool_version={__version__},config_hash={'+'.join(hashes)}\n")
    for config, h in zip((c for c, _ in runs), hashes):
        out.write(f"# config {h} {json.dumps(config.model_dump(mode='json'), sort_keys=True)}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for (config, records), h in zip(runs, hashes):
        for r in records:
            writer.writerow([
                h, r.scheme.value, r.criterion.value, r.receiver.value, _fmt(r.relay_snr_db), r.n_fb,
                _fmt(r.ber), r.errors, r.bits, r.blocks, r.skipped, _fmt(r.capacity),
                _fmt_list(r.analytic_mse), _fmt_list(r.empirical_mse), _fmt_list(r.empirical_mse_stderr),
                _fmt(r.solver_iterations),
            ])


def read_metrics_csv(path: Path) -> List[dict]:
    with open(path, newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


# ---------- convergence trace and objective-vs-feedback table ----------
def run_trace(config: ExperimentConfig, trace_out: IO[str], table_out: IO[str]) -> int:
    """Per-iteration solver log plus OBJ(n_fb) and OBJ_ub per trial. Returns the number of skipped trials."""
    o = config.optimizer
    n_c = config.system.n_c
    lengths = [n for n in TRACE_FEEDBACK_LENGTHS if n <= n_c - 1]
    trace_writer = csv.writer(trace_out, lineterminator="\n")
    trace_writer.writerow(["relay_snr_db", "trial"] + powalloc.TRACE_COLUMNS)
    table_writer = csv.writer(table_out, lineterminator="\n")
    table_writer.writerow(["relay_snr_db", "trial"] + [f"obj_nfb_{n}" for n in lengths] + ["obj_ub"])

    skipped = 0
    for snr in config.simulation.relay_snr_db:
        sigma_v2, sigma_u2, p_s, p_r = snr_to_variance(config, snr)
        for trial in range(config.simulation.trials):
            rng = np.random.default_rng([config.simulation.seed, trial])
            channel = generate_channel(rng, _dims(config), _profiles(config), n_c, seed=trial)
            try:
                pre, alloc, gains = design_precoders(
                    channel, config.system.m, o.scheme, o.criterion, ReceiverMode.LINEAR, (p_s, p_r),
                    (sigma_v2, sigma_u2), 0, (o.eps1, o.eps2), o.max_outer, o.max_inner, o.max_subgradient,
                    SIGMA_S2,
                )
            except ConvergenceError as e:
                logger.warning("[trace] snr=%.1f dB trial %d skipped: %s", snr, trial, e)
                skipped += 1
                continue
            powalloc.write_trace_csv(alloc.trace, trace_out, {"snr": _fmt(snr), "trial": trial})
            psi = link_psi(channel, pre, gains)
            objs = [dfe_objective(build_z(psi, n)) for n in lengths]
            bound = dfe_objective_bound(build_z(psi, 0))
            table_writer.writerow([_fmt(snr), trial] + [_fmt(x) for x in objs] + [_fmt(bound)])
    return skipped
