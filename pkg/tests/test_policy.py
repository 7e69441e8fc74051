import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aoisched import (
    BracketError,
    BufferMapping,
    EnumerationLimitError,
    ErrorCurve,
    PolicyContext,
    ThresholdPolicy,
    WaitingCapExceeded,
    optimal_policy,
    reference_channel,
)
from aoisched import policy as pol

from conftest import random_channel, random_curve, unit_channel

seeds = st.integers(0, 2**32 - 1)


def random_ctx(seed, monotone=False):
    rng = np.random.default_rng(seed)
    ch = random_channel(rng)
    h = np.sort(rng.random(15)) if monotone else random_curve(rng).values
    return PolicyContext(ErrorCurve(h), ch, int(rng.integers(1, 4))), rng


def brute_force_gap(ctx, beta, mapping):
    """Literal enumeration of one steady-state epoch, term by term.

    c_prev ~ pi, c ~ P(c_prev), (T, F) ~ state c, decision at AoI psi(c_prev)+T+F,
    c_next ~ P(c), (T', F') ~ state c_next; cost summed slot by slot.
    """
    ch, h = ctx.channel, ctx.curve
    pi = ch.stationary_distribution()
    total = 0.0
    for c_prev, c, c_next in itertools.product(range(ch.n_states), repeat=3):
        w0 = pi[c_prev] * ch.transition[c_prev, c] * ch.transition[c, c_next]
        if w0 == 0:
            continue
        for (t, pt), (f, pf), (t2, pt2), (f2, pf2) in itertools.product(
            ch.transmission[c].pairs(), ch.feedback[c].pairs(),
            ch.transmission[c_next].pairs(), ch.feedback[c_next].pairs(),
        ):
            delta = mapping(c_prev) + t + f
            tau = ctx.waiting_time(delta, c, beta)
            b_next = mapping(c)
            cost = sum(h(delta + k) for k in range(tau + t2))
            cost += sum(h(b_next + t2 + k) for k in range(f2))
            total += w0 * pt * pf * pt2 * pf2 * (cost - beta * (tau + t2 + f2))
    return total


def decision_chain_cost(ctx, mapping, beta):
    """Average cost of the threshold policy from the embedded chain on (AoI at ACK, state)."""
    ch, h = ctx.channel, ctx.curve
    states = sorted({(mapping(cp) + t + f, c)
                     for cp in range(ch.n_states) for c in range(ch.n_states)
                     for t, _ in ch.transmission[c].pairs() for f, _ in ch.feedback[c].pairs()})
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    P, cost, length = np.zeros((n, n)), np.zeros(n), np.zeros(n)
    for (delta, c), i in idx.items():
        tau = ctx.waiting_time(delta, c, beta)
        for c2 in range(ch.n_states):
            p = ch.transition[c, c2]
            for (t, pt), (f, pf) in itertools.product(ch.transmission[c2].pairs(), ch.feedback[c2].pairs()):
                w = p * pt * pf
                if w == 0:
                    continue
                slots = [delta + k for k in range(tau + t)] + [mapping(c) + t + k for k in range(f)]
                cost[i] += w * sum(h(s) for s in slots)
                length[i] += w * len(slots)
                P[i, idx[(mapping(c) + t + f, c2)]] += w
    vals, vecs = np.linalg.eig(P.T)
    mu = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    mu /= mu.sum()
    return (mu @ cost) / (mu @ length)


class TestExpectedFutureError:
    def test_constant(self):
        ctx = PolicyContext(ErrorCurve.constant(5.0, 10), reference_channel(0.2))
        for d, c, k in [(1, 0, 0), (3, 1, 7), (50, 0, 100)]:
            assert ctx.expected_future_error(d, c, k) == 5.0

    def test_two_state_linear(self, two_state_linear):
        ctx = PolicyContext(*two_state_linear)
        for d, k in [(1, 0), (2, 3), (40, 11)]:
            assert ctx.expected_future_error(d, 0, k) == pytest.approx(d + k + 4.7, abs=1e-12)

    def test_unit_shift(self, renewal):
        ctx = PolicyContext(*renewal)
        assert ctx.expected_future_error(3, 0, 2) == 6.0

    def test_extension_counter(self, renewal):
        ctx = PolicyContext(*renewal)
        ctx.expected_future_error(2, 0, 0)
        assert ctx.extension_hits == 0
        assert ctx.expected_future_error(30, 0, 0) == 10.0
        assert ctx.extension_hits == 1


class TestIndex:
    def test_constant(self):
        ctx = PolicyContext(ErrorCurve.constant(5.0, 20), reference_channel(0.7))
        assert np.all(ctx.gamma == 5.0)

    def test_two_state_linear(self, two_state_linear):
        ctx = PolicyContext(*two_state_linear)
        for d in (1, 2, 50, 150):
            assert ctx.index(d, 0) == pytest.approx(d + 4.7, abs=1e-12)

    def test_dip_lowers_index(self):
        # a cheap slot two steps ahead pulls the running average down
        ctx = PolicyContext(ErrorCurve([1.0, 5.0, 5.0, 0.0, 5.0, 5.0, 5.0]), unit_channel())
        assert ctx.index(1, 0) == pytest.approx(10 / 3)
        assert ctx.index(3, 0) == 0.0

    @given(seeds)
    def test_below_one_step(self, seed):
        ctx, _ = random_ctx(seed)
        assert np.all(ctx.gamma <= ctx.e + 1e-15)

    @given(seeds)
    def test_brute_force_infimum(self, seed):
        ctx, rng = random_ctx(seed)
        c = int(rng.integers(ctx.n_states))
        d = int(rng.integers(1, ctx.delta_max + 1))
        terms = [ctx.expected_future_error(d, c, k) for k in range(4 * ctx.delta_max)]
        best = min(np.mean(terms[:nu]) for nu in range(1, len(terms) + 1))
        assert ctx.index(d, c) == pytest.approx(min(best, ctx.e_tail[c]), abs=1e-12)

    @given(seeds)
    def test_small_window_cap_is_repaired(self, seed):
        ctx, _ = random_ctx(seed)
        small = PolicyContext(ctx.curve, ctx.channel, ctx.buffer_size, nu_max=1)
        with _quiet():
            np.testing.assert_allclose(small.gamma, ctx.gamma, atol=1e-12)


class _quiet:
    def __enter__(self):
        import logging
        logging.getLogger("aoisched.policy").disabled = True

    def __exit__(self, *exc):
        import logging
        logging.getLogger("aoisched.policy").disabled = False


class TestMonotoneCase:
    @given(seeds)
    def test_index_is_one_step_bitwise(self, seed):
        ctx, _ = random_ctx(seed, monotone=True)
        assert np.array_equal(ctx.gamma, ctx.e)

    @given(seeds)
    def test_zero_mapping(self, seed):
        ctx, _ = random_ctx(seed, monotone=True)
        assert ctx.optimize_mapping().mapping.positions == (0,) * ctx.n_states

    def test_index_nondecreasing(self, two_state_linear):
        ctx = PolicyContext(*two_state_linear)
        assert np.all(np.diff(ctx.gamma, axis=1) >= 0)


class TestWaitingTime:
    def test_hand_case(self, two_state_linear):
        ctx = PolicyContext(*two_state_linear)
        assert ctx.waiting_time(2, 0, 10.0) == 4
        assert ctx.waiting_time(9, 0, 10.0) == 0

    def test_constant(self):
        ctx = PolicyContext(ErrorCurve.constant(5.0, 10), reference_channel(0.4))
        assert all(ctx.waiting_time(d, c, 5.0) == 0 for d in range(1, 30) for c in range(2))

    def test_unreachable_threshold(self):
        ctx = PolicyContext(ErrorCurve([1.0, 9.0, 2.0]), unit_channel())
        with pytest.raises(WaitingCapExceeded) as err:
            ctx.waiting_time(3, 0, 5.0)
        assert err.value.delta == 3 and err.value.beta == 5.0

    @given(seeds, st.floats(0, 1))
    def test_table_matches_scalar(self, seed, u):
        ctx, rng = random_ctx(seed)
        beta = ctx.curve.min + u * (ctx.curve.max - ctx.curve.min)
        c = int(rng.integers(ctx.n_states))
        table = ctx.waiting_table([beta], c, ctx.delta_max + 5)[0]
        for d in range(1, ctx.delta_max + 6):
            try:
                assert table[d - 1] == ctx.waiting_time(d, c, beta)
            except WaitingCapExceeded:
                assert math.isinf(table[d - 1])


class TestEpochCostGap:
    def test_constant(self):
        ctx = PolicyContext(ErrorCurve.constant(5.0, 10), reference_channel(0.3), 2)
        assert ctx.epoch_cost_gap(5.0, BufferMapping((1, 0), 2)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("beta", [1.0, 1.2, 1.5])
    def test_renewal_line(self, renewal, beta):
        ctx = PolicyContext(*renewal)
        assert ctx.epoch_cost_gap(beta, BufferMapping.zeros(1)) == pytest.approx(3 - 2 * beta, abs=1e-12)

    @given(seeds, st.floats(0, 1))
    def test_matches_brute_force(self, seed, u):
        ctx, rng = random_ctx(seed)
        mapping = BufferMapping(tuple(rng.integers(0, ctx.buffer_size, ctx.n_states)), ctx.buffer_size)
        beta = ctx.curve.min + u * (ctx.curve.max - ctx.curve.min)
        assert ctx.epoch_cost_gap(beta, mapping) == pytest.approx(brute_force_gap(ctx, beta, mapping), abs=1e-10)

    @given(seeds)
    def test_strictly_decreasing_concave_single_root(self, seed):
        ctx, rng = random_ctx(seed)
        mapping = BufferMapping(tuple(rng.integers(0, ctx.buffer_size, ctx.n_states)), ctx.buffer_size)
        grid = np.linspace(ctx.curve.min, ctx.curve.max, 100)
        g = ctx.gap_batch(grid, np.tile(mapping.positions, (100, 1)))
        assert np.all(np.diff(g) < 0)
        assert np.all(np.diff(g, 2) <= 1e-9)
        assert np.count_nonzero(np.diff(np.sign(g)) != 0) <= 1
        assert g[0] >= 0 >= g[-1]


class TestSolveThreshold:
    def test_constant(self):
        ctx = PolicyContext(ErrorCurve.constant(5.0, 10), reference_channel(0.2))
        assert ctx.solve_threshold(BufferMapping.zeros(2)) == 5.0

    def test_renewal(self, renewal):
        ctx = PolicyContext(*renewal)
        assert abs(pol.solve_threshold(BufferMapping.zeros(1), ctx) - 1.5) <= ctx.default_tol()

    @given(seeds)
    def test_root_and_iterations(self, seed):
        ctx, rng = random_ctx(seed)
        mapping = BufferMapping(tuple(rng.integers(0, ctx.buffer_size, ctx.n_states)), ctx.buffer_size)
        tol = ctx.default_tol()
        betas, iterations = ctx.bisect([mapping.positions], tol)
        assert iterations <= 60
        beta = betas[0]
        assert ctx.epoch_cost_gap(beta - tol, mapping) > 0 > ctx.epoch_cost_gap(beta + tol, mapping)

    @given(seeds)
    def test_equals_policy_average_cost(self, seed):
        ctx, rng = random_ctx(seed)
        mapping = BufferMapping(tuple(rng.integers(0, ctx.buffer_size, ctx.n_states)), ctx.buffer_size)
        beta = ctx.solve_threshold(mapping)
        assert decision_chain_cost(ctx, mapping, beta) == pytest.approx(beta, abs=1e-9)

    @given(seeds)
    def test_threshold_beats_zero_wait(self, seed):
        ctx, rng = random_ctx(seed)
        mapping = BufferMapping(tuple(rng.integers(0, ctx.buffer_size, ctx.n_states)), ctx.buffer_size)
        beta = ctx.solve_threshold(mapping)
        zero = [np.zeros(ctx.max_decision_aoi)] * ctx.n_states
        assert beta <= ctx.average_cost(mapping, zero) + 1e-12

    def test_bracket_error(self, renewal, monkeypatch):
        ctx = PolicyContext(*renewal)
        monkeypatch.setattr(ctx, "gap_batch", lambda betas, m: -np.ones(len(betas)))
        with pytest.raises(BracketError):
            ctx.solve_threshold(BufferMapping.zeros(1))

    def test_bad_tol(self, renewal):
        with pytest.raises(ValueError):
            PolicyContext(*renewal).solve_threshold(BufferMapping.zeros(1), tol=0.0)


class TestOptimizeMapping:
    def test_single_position(self, two_state_linear):
        ctx = PolicyContext(*two_state_linear)
        psi, h_opt = pol.optimize_mapping(ctx)
        assert psi.positions == (0, 0)
        assert h_opt == ctx.solve_threshold(psi)

    def test_constant_lexicographic(self):
        ctx = PolicyContext(ErrorCurve.constant(2.0, 5), reference_channel(0.5), 3)
        psi, h_opt = ctx.optimize_mapping()
        assert psi.positions == (0, 0) and h_opt == 2.0

    @given(seeds)
    def test_minimum_over_enumeration(self, seed):
        ctx, _ = random_ctx(seed)
        search = ctx.optimize_mapping()
        assert np.all(search.h_opt <= search.betas + 1e-15)
        for m, b in zip(search.grid[:5], search.betas[:5]):
            assert ctx.solve_threshold(BufferMapping(tuple(m), ctx.buffer_size)) == pytest.approx(b, abs=1e-12)

    def test_reference_instance_prefers_stale_samples(self, reference_curve):
        ctx = PolicyContext(reference_curve, reference_channel(0.2), 60)
        psi, h_opt = ctx.optimize_mapping()
        assert psi.positions == (46, 26)
        assert h_opt == pytest.approx(0.0277546804, abs=1e-9)
        assert h_opt < ctx.solve_threshold(BufferMapping.zeros(2, 60)) == pytest.approx(0.0342392877, abs=1e-9)

    def test_enumeration_guard(self):
        ctx = PolicyContext(ErrorCurve([1.0, 2.0]), reference_channel(0.5), 1001)
        with pytest.raises(EnumerationLimitError):
            ctx.optimize_mapping()


class TestThresholdPolicy:
    def test_range_check(self, renewal):
        ctx = PolicyContext(*renewal)
        with pytest.raises(ValueError):
            ThresholdPolicy(BufferMapping.zeros(1), 0.5, ctx)

    def test_mapping_check(self, renewal):
        with pytest.raises(ValueError):
            BufferMapping((1,), 1)

    def test_optimal_policy(self, renewal):
        p = optimal_policy(PolicyContext(*renewal))
        assert p.waiting_time(1, 0) == 0
        assert p.index(2, 0) == 3.0
