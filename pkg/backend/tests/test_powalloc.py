import io

import numpy as np
import pytest

from scfde.design import powalloc
from scfde.design.powalloc import (
    SubchannelGains,
    kkt_relay_update,
    kkt_source_update,
    objective,
    optimize,
    optimize_relay,
    oracle_grid_search,
    phi_exact,
    phi_highsnr,
    stream_mse,
    subgradient_step,
    write_trace_csv,
)
from scfde.errors import (
    ConvergenceError,
    DomainError,
    InstanceTooLargeError,
    InvalidDimensionError,
    InvalidParameterError,
    UnboundedUpdateError,
)
from scfde.schemas import Criterion


def _random_gains(rng, n_c, m, sv=1.0, su=1.0):
    return SubchannelGains(rng.rayleigh(1.0, (n_c, m)) + 0.1, rng.rayleigh(1.0, (n_c, m)) + 0.1, sv, su)


def _f(alloc, gains, crit):
    return objective(phi_highsnr(alloc.p_s, alloc.p_r, gains), crit)


class TestPhi:
    def test_no_source_power(self):
        gains = SubchannelGains([[1.0]], [[1.0]])
        assert phi_exact(0.0, 5.0, gains) == 1.0
        assert phi_highsnr(0.0, 5.0, gains) == 1.0

    def test_hand_value(self):
        gains = SubchannelGains([[1.0]], [[1.0]], 0.1, 0.1)
        assert phi_exact(1.0, 1.0, gains, 0, 0) == pytest.approx(1 / 0.21 + 1)

    def test_relay_power_limit(self):
        gains = SubchannelGains([[0.7]], [[1.3]], 0.2, 0.5)
        first_hop = 3.0 * 0.7 ** 2 / 0.2 + 1
        assert phi_exact(3.0, 1e12, gains, 0, 0) == pytest.approx(first_hop, rel=1e-6)

    def test_symmetric_high_snr(self):
        gains = SubchannelGains([[0.9]], [[0.9]], 0.3, 0.3)
        assert phi_highsnr(2.0, 2.0, gains, 0, 0) == pytest.approx(2.0 * 0.81 / 0.6 + 1)

    def test_high_snr_form_dominates(self, rng):
        gains = _random_gains(rng, 8, 2)
        p_s, p_r = rng.uniform(0, 10, (8, 2)), rng.uniform(0, 10, (8, 2))
        assert np.all(phi_highsnr(p_s, p_r, gains) >= phi_exact(p_s, p_r, gains))

    def test_high_snr_gap_small(self, rng):
        gains = _random_gains(rng, 8, 2, 0.01, 0.01)
        p_s = p_r = np.full((8, 2), 5000.0)
        exact, approx = phi_exact(p_s, p_r, gains), phi_highsnr(p_s, p_r, gains)
        assert np.all((approx - exact) / exact < 0.01)

    def test_bad_gains(self):
        with pytest.raises(InvalidDimensionError):
            SubchannelGains(np.ones((2, 2)), np.ones((2, 1)))
        with pytest.raises(DomainError):
            SubchannelGains([[-1.0]], [[1.0]])


class TestObjective:
    def test_unit_phi(self):
        phi = np.ones((4, 2))
        assert objective(phi, Criterion.AMSE) == pytest.approx(2.0)
        assert objective(phi, Criterion.GMSE) == pytest.approx(0.0)
        assert objective(phi, Criterion.MAXMSE) == pytest.approx(1.0)

    def test_equal_mse(self):
        phi = np.full((4, 2), 2.0)
        assert objective(phi, Criterion.AMSE) == pytest.approx(1.0)
        assert objective(phi, Criterion.MAXMSE) == pytest.approx(0.5)

    def test_am_gm(self, rng):
        phi = rng.uniform(1, 20, (8, 3))
        assert 2 ** (objective(phi, Criterion.GMSE) / 3) <= objective(phi, Criterion.AMSE) / 3 + 1e-12

    def test_gmse_is_minus_capacity(self, rng):
        phi = rng.uniform(1, 20, (8, 2))
        mse = stream_mse(phi)
        sinr = 1 / mse - 1
        assert objective(phi, Criterion.GMSE) == pytest.approx(-np.sum(np.log2(sinr + 1)), abs=1e-12)

    def test_phi_below_one(self):
        with pytest.raises(DomainError):
            stream_mse(np.array([[0.5]]))


class TestKkt:
    def test_huge_price_gives_zero(self):
        gains = SubchannelGains([[1.0]], [[1.0]])
        assert kkt_source_update(1.0, 1e30, 1.0, gains, 0, 0) == 0.0
        assert kkt_relay_update(1.0, 1e30, 1.0, gains, 0, 0) == 0.0

    def test_dead_subchannel(self):
        gains = SubchannelGains([[1.0]], [[1.0]])
        assert kkt_source_update(0.0, 0.1, 1.0, gains, 0, 0) == 0.0

    def test_zero_price(self):
        gains = SubchannelGains([[1.0]], [[1.0]])
        with pytest.raises(UnboundedUpdateError):
            kkt_source_update(1.0, 0.0, 1.0, gains, 0, 0)

    @pytest.mark.parametrize("side", ["source", "relay"])
    def test_stationary_by_finite_differences(self, side):
        gains = SubchannelGains([[0.8]], [[1.4]], 0.5, 0.3)
        price, weight = 0.01, 1.0
        if side == "source":
            p_r = 20.0
            p_s = kkt_source_update(p_r, price, weight, gains, 0, 0)
            f = lambda x: weight / phi_highsnr(x, p_r, gains, 0, 0)
            x0 = p_s
        else:
            p_s = 20.0
            p_r = kkt_relay_update(p_s, price, weight, gains, 0, 0)
            f = lambda x: weight / phi_highsnr(p_s, x, gains, 0, 0)
            x0 = p_r
        assert x0 > 0
        step = 1e-6 * x0
        grad = (f(x0 + step) - f(x0 - step)) / (2 * step)
        assert -grad == pytest.approx(price, rel=1e-4)


class TestSubgradient:
    def test_on_budget(self):
        assert subgradient_step(0.3, 0.1, 10.0, 10.0) == 0.3

    def test_over_budget_raises_price(self):
        assert subgradient_step(0.3, 0.1, 12.0, 10.0) > 0.3

    def test_projected(self):
        assert subgradient_step(0.1, 1.0, 0.0, 10.0) == 0.0

    def test_bad_step(self):
        with pytest.raises(InvalidParameterError):
            subgradient_step(0.1, 0.0, 1.0, 1.0)

    # one subchannel, g = h = 1, P_r = 10: consumed(lam) = (10/11)(lam^-1/2 - 1), water level 1/144
    def _ascend(self, start):
        gains = SubchannelGains([[1.0]], [[1.0]])
        other, weight = np.array([[10.0]]), np.array([[1.0]])
        mult, steps, pinned = powalloc._dual_ascent("source", other, start, weight, gains, 10.0, 1e-4, 200)
        consumed = kkt_source_update(other, mult, weight, gains).sum()
        return mult, steps, pinned, consumed

    def test_loop_reaches_budget_on_its_own(self):
        mult, steps, pinned, consumed = self._ascend(1.5 / 144)
        assert not pinned
        assert 1 < steps < 200
        assert abs(consumed - 10.0) <= 1e-4 * 10.0
        assert mult == pytest.approx(1 / 144, rel=1e-3)

    def test_exact_start_takes_no_steps(self):
        mult, steps, pinned, _ = self._ascend(1 / 144)
        assert (steps, pinned) == (0, False)
        assert mult == 1 / 144

    def test_frozen_update_falls_back_to_bisection(self, monkeypatch):
        monkeypatch.setattr(powalloc, "subgradient_step", lambda multiplier, eps, consumed, budget: multiplier)
        mult, steps, pinned, consumed = self._ascend(1.5 / 144)
        assert pinned and steps == 200
        assert mult == pytest.approx(1 / 144, rel=1e-8)
        assert consumed == pytest.approx(10.0, rel=1e-8)

    def test_trace_marks_bisected_blocks(self, rng):
        gains = _random_gains(rng, 4, 2)
        alloc = optimize(gains, (40.0, 30.0), Criterion.AMSE, max_subgradient=1)
        blocks = [e for e in alloc.trace if e.side != "init"]
        assert any(e.pinned for e in blocks)
        assert all(e.steps <= 1 for e in blocks)
        assert alloc.p_s.sum() == pytest.approx(40.0, rel=1e-8)


class TestOptimize:
    @pytest.mark.parametrize("crit", [Criterion.AMSE, Criterion.GMSE, Criterion.MAXMSE])
    def test_single_subchannel_full_budgets(self, crit):
        gains = SubchannelGains([[0.9]], [[1.2]])
        alloc = optimize(gains, (30.0, 20.0), crit)
        assert alloc.p_s[0, 0] == pytest.approx(30.0)
        assert alloc.p_r[0, 0] == pytest.approx(20.0)

    def test_symmetric_tones_split_equally(self):
        gains = SubchannelGains([[0.7], [0.7]], [[1.1], [1.1]])
        alloc = optimize(gains, (10.0, 10.0), Criterion.AMSE)
        assert np.allclose(alloc.p_s, 5.0, rtol=1e-6)
        assert np.allclose(alloc.p_r, 5.0, rtol=1e-6)

    @pytest.mark.parametrize("crit", [Criterion.AMSE, Criterion.GMSE])
    def test_constraints_and_slackness(self, rng, crit):
        gains = _random_gains(rng, 8, 2)
        budgets = (160.0, 160.0)
        alloc = optimize(gains, budgets, crit)
        assert alloc.converged
        assert np.all(alloc.p_s >= 0) and np.all(alloc.p_r >= 0)
        assert alloc.p_s.sum() == pytest.approx(budgets[0], rel=1e-8)
        assert alloc.p_r.sum() == pytest.approx(budgets[1], rel=1e-8)
        assert alloc.lam * abs(alloc.p_s.sum() - budgets[0]) < 1e-4 * budgets[0]

    @pytest.mark.parametrize("crit", [Criterion.AMSE, Criterion.GMSE])
    def test_outer_objective_monotone(self, rng, crit):
        alloc = optimize(_random_gains(rng, 8, 2), (100.0, 60.0), crit)
        trace = alloc.objective_trace
        assert len(trace) == alloc.outer_iterations + 1
        assert all(b <= a + 1e-9 * abs(a) for a, b in zip(trace, trace[1:]))

    def test_maxmse_uses_amse_allocation(self, rng):
        gains = _random_gains(rng, 4, 2)
        a = optimize(gains, (40.0, 40.0), Criterion.AMSE)
        b = optimize(gains, (40.0, 40.0), Criterion.MAXMSE)
        assert np.array_equal(a.p_s, b.p_s) and np.array_equal(a.p_r, b.p_r)

    @pytest.mark.parametrize("shape,resolution", [((1, 2), 200), ((2, 1), 200), ((2, 2), 20)])
    @pytest.mark.parametrize("crit", [Criterion.AMSE, Criterion.GMSE])
    def test_matches_grid_oracle(self, rng, shape, resolution, crit):
        for _ in range(3):
            gains = _random_gains(rng, *shape)
            budgets = (float(rng.uniform(5, 50)), float(rng.uniform(5, 50)))
            f_opt = _f(optimize(gains, budgets, crit), gains, crit)
            f_grid = _f(oracle_grid_search(gains, budgets, crit, resolution), gains, crit)
            assert f_opt <= f_grid + 0.02 * abs(f_grid)

    def test_exhaustion_keeps_best_iterate(self):
        gains = SubchannelGains([[3.0, 0.2], [1.0, 0.5]], [[0.3, 2.0], [1.5, 0.4]])
        with pytest.raises(ConvergenceError) as info:
            optimize(gains, (40.0, 40.0), Criterion.AMSE, tolerances=(1e-4, 1e-14), max_outer=1)
        assert info.value.best is not None
        assert info.value.best.p_s.shape == (2, 2)

    def test_bad_budget(self, gains_2x2):
        with pytest.raises(InvalidParameterError):
            optimize(gains_2x2, (0.0, 1.0), Criterion.AMSE)


class TestOptimizeRelay:
    def test_budget_and_frozen_source(self, gains_2x2):
        p_s = np.full((2, 2), 3.0)
        alloc = optimize_relay(gains_2x2, p_s, 25.0, Criterion.GMSE)
        assert alloc.p_r.sum() == pytest.approx(25.0, rel=1e-8)
        assert np.array_equal(alloc.p_s, p_s)

    def test_never_worse_than_uniform(self, gains_2x2):
        p_s = np.full((2, 2), 3.0)
        alloc = optimize_relay(gains_2x2, p_s, 25.0, Criterion.AMSE)
        uniform = objective(phi_highsnr(p_s, np.full((2, 2), 6.25), gains_2x2), Criterion.AMSE)
        assert objective(phi_highsnr(p_s, alloc.p_r, gains_2x2), Criterion.AMSE) <= uniform + 1e-12

    def test_shape_mismatch(self, gains_2x2):
        with pytest.raises(InvalidDimensionError):
            optimize_relay(gains_2x2, np.ones(3), 1.0, Criterion.AMSE)


class TestOracle:
    def test_single_subchannel(self):
        alloc = oracle_grid_search(SubchannelGains([[1.0]], [[1.0]]), (7.0, 3.0), Criterion.AMSE)
        assert alloc.p_s[0, 0] == pytest.approx(7.0)
        assert alloc.p_r[0, 0] == pytest.approx(3.0)

    def test_refinement_never_worse(self, rng):
        gains = _random_gains(rng, 2, 2)
        coarse = oracle_grid_search(gains, (20.0, 20.0), Criterion.GMSE, 10)
        fine = oracle_grid_search(gains, (20.0, 20.0), Criterion.GMSE, 20)
        assert _f(fine, gains, Criterion.GMSE) <= _f(coarse, gains, Criterion.GMSE) + 1e-12

    def test_too_many_subchannels(self, rng):
        with pytest.raises(InstanceTooLargeError):
            oracle_grid_search(_random_gains(rng, 9, 1), (1.0, 1.0), Criterion.AMSE)

    def test_too_many_points(self, rng):
        with pytest.raises(InstanceTooLargeError):
            oracle_grid_search(_random_gains(rng, 4, 2), (1.0, 1.0), Criterion.AMSE, 200)

    def test_full_resolution_fits_two_subchannels_only(self, rng):
        for n_c, m in ((1, 2), (2, 1)):
            alloc = oracle_grid_search(_random_gains(rng, n_c, m), (5.0, 5.0), Criterion.AMSE, 200)
            assert alloc.p_s.sum() == pytest.approx(5.0)
        with pytest.raises(InstanceTooLargeError):
            oracle_grid_search(_random_gains(rng, 3, 1), (5.0, 5.0), Criterion.AMSE, 200)


def test_trace_csv(rng):
    alloc = optimize(_random_gains(rng, 2, 2), (10.0, 10.0), Criterion.GMSE)
    out = io.StringIO()
    write_trace_csv(alloc.trace, out, {"snr": "16", "trial": 0})
    lines = out.getvalue().splitlines()
    assert len(lines) == len(alloc.trace)
    assert lines[0].startswith("16,0,0,0,init,")
    assert len(lines[0].split(",")) == 2 + len(powalloc.TRACE_COLUMNS)
