# Desk-scale reproductions of the headline results. Deselected by default; run with `pytest -m slow`.
import numpy as np
import pytest

from scfde.design import powalloc
from scfde.design.equalizer import (
    apply_fdle,
    build_z,
    dfe_objective,
    dfe_objective_bound,
    dfe_slicer_input,
    fddfe_design,
    fdle_design,
)
from scfde.design.precoder import design_precoders, e2e_tones, link_psi
from scfde.linalg.channel import FadingProfile, generate_channel, tone_gains
from scfde.parsers.config_parser import parse_config
from scfde.schemas import Criterion, ReceiverMode, Scheme
from scfde.simulator import QPSK, run_point, snr_to_variance, transmit_block

pytestmark = pytest.mark.slow


def test_solver_settles_within_three_outer_and_ten_inner_iterations():
    config = parse_config("[optimizer]\ncriterion = \"gmse\"\n[simulation]\nrelay_snr_db = [16.0]\n")
    _, _, p_s, p_r = snr_to_variance(config, 16.0)
    fast = 0
    for seed in range(100):
        ch = generate_channel(np.random.default_rng(seed), (2, 2, 2), (FadingProfile(), FadingProfile()), 64)
        g, h = tone_gains(ch, 2)
        alloc = powalloc.optimize(powalloc.SubchannelGains(g, h), (p_s, p_r), Criterion.GMSE)
        trace = alloc.objective_trace
        final = trace[-1]
        settled = next(i for i, v in enumerate(trace) if abs(v - final) <= 0.005 * abs(final))
        inner_per_block = {}
        for e in alloc.trace:
            if e.side in ("source", "relay"):
                inner_per_block[(e.outer, e.side)] = max(inner_per_block.get((e.outer, e.side), 0), e.inner)
        fast += settled <= 3 and max(inner_per_block.values()) <= 10
    assert fast >= 90


def test_upper_bound_is_tight():
    gaps = []
    for seed in range(200):
        ch = generate_channel(np.random.default_rng(seed), (3, 3, 3), (FadingProfile(), FadingProfile()), 64)
        budget = 2 * 3 * 64 * 10 ** 1.6
        pre, _, gains = design_precoders(ch, 2, Scheme.JSR, Criterion.GMSE, ReceiverMode.LINEAR,
                                         (budget, 2 * 3 * 64 * 10 ** 1.2), (1.0, 1.0))
        psi = link_psi(ch, pre, gains)
        obj, bound = dfe_objective(build_z(psi, 15)), dfe_objective_bound(build_z(psi, 0))
        gaps.append((bound - obj) / bound)
    assert np.median(gaps) < 0.05


def test_ber_ordering_at_16_db():
    def ber(criterion, receiver):
        config = parse_config(
            f"[optimizer]\ncriterion = \"{criterion}\"\nreceiver = \"{receiver}\"\n"
            "[simulation]\nrelay_snr_db = [16.0]\ntrials = 1000\n")
        r = run_point(config, 16.0)
        return r.ber, np.sqrt(r.ber * (1 - r.ber) / r.bits)

    dfe, dfe_se = ber("gmse", "fd-dfe")
    maxmse, maxmse_se = ber("maxmse", "fd-le")
    amse, amse_se = ber("amse", "fd-le")
    assert maxmse - dfe > 3 * np.hypot(dfe_se, maxmse_se)
    assert amse - maxmse > 3 * np.hypot(maxmse_se, amse_se)


def test_gmse_allocation_beats_amse_on_capacity():
    wins = 0
    for seed in range(200):
        ch = generate_channel(np.random.default_rng(seed), (2, 2, 2), (FadingProfile(), FadingProfile()), 64)
        g, h = tone_gains(ch, 2)
        gains = powalloc.SubchannelGains(g, h)
        budgets = (2 * 2 * 64 * 10 ** 1.6, 2 * 2 * 64 * 10 ** 1.6)
        caps = []
        for crit in (Criterion.GMSE, Criterion.AMSE):
            alloc = powalloc.optimize(gains, budgets, crit)
            caps.append(-powalloc.objective(powalloc.phi_exact(alloc.p_s, alloc.p_r, gains), Criterion.GMSE))
        wins += caps[0] >= caps[1] - 1e-9
    assert wins >= 190


@pytest.mark.parametrize("mode,n_fb", [(ReceiverMode.LINEAR, 0), (ReceiverMode.DECISION_FEEDBACK, 3)])
def test_measured_mse_matches_design_over_many_systems(link, mode, n_fb):
    # 12,500 blocks of 8 tones is 1e5 symbols per stream
    for seed in range(20):
        ch, pre, _, gains = link(criterion=Criterion.GMSE, mode=mode, n_fb=n_fb, seed=seed)
        psi = link_psi(ch, pre, gains)
        q = e2e_tones(ch, pre)
        design = fddfe_design(build_z(psi, n_fb), psi, q) if n_fb else fdle_design(psi, q)
        rng = np.random.default_rng(1000 + seed)
        block_mse = np.empty((12_500, 2))
        for b in range(len(block_mse)):
            s = QPSK[rng.integers(0, 4, size=(8, 2))]
            y = transmit_block(s, pre, ch, rng, (1.0, 1.0))
            soft = dfe_slicer_input(y, design, s) if n_fb else apply_fdle(y, design)
            block_mse[b] = np.mean(np.abs(soft - s) ** 2, axis=0)
        stderr = block_mse.std(axis=0, ddof=1) / np.sqrt(len(block_mse))
        assert np.all(np.abs(block_mse.mean(axis=0) - design.error_diag) < 4 * stderr), seed
