"""Index-based threshold policy: index function, epoch cost gap, threshold and mapping search.

Notation used in the code:

``e[c, x]``
    ``E[h(x + T') | previous state c]``, the expected error one transmission
    after submitting at AoI ``x`` (``T'`` is the next epoch's transmission
    delay, its state drawn from row ``c`` of the transition matrix).
``gamma[c, x]``
    The index: the smallest running average of ``e[c, x], e[c, x+1], ...``.
``W_c(d, beta)``
    Waiting part of the epoch cost gap for an epoch that starts with AoI ``d``
    and previous state ``c``: cost of slots ``A_i .. D_{i+1} - 1`` minus
    ``beta`` times their number, with the threshold waiting rule.
``L_c(b, beta)``
    Feedback part: cost of slots ``D_{i+1} .. A_{i+1} - 1`` minus ``beta``
    times their number, when buffer position ``b`` was submitted.

The steady-state gap is ``sum_c pi(c) J_c(psi(c), beta)`` with
``J_c(b, beta) = sum_{c'} P[c, c'] E[W_{c'}(b + T + F, beta) | c'] + L_c(b, beta)``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .channel import ChannelModel
from .error_model import ErrorCurve
from .errors import BracketError, EnumerationLimitError, WaitingCapExceeded

log = logging.getLogger(__name__)

MAX_MAPPINGS = 10**6
_BATCH = 4096
_ROW_BLOCK = 512


@dataclass(frozen=True)
class BufferMapping:
    """Buffer position submitted after an epoch spent in each channel state."""

    positions: tuple[int, ...]
    buffer_size: int

    def __post_init__(self):
        positions = tuple(int(b) for b in self.positions)
        object.__setattr__(self, "positions", positions)
        if self.buffer_size < 1:
            raise ValueError("buffer size must be >= 1")
        for c, b in enumerate(positions):
            if not 0 <= b < self.buffer_size:
                raise ValueError(f"psi({c}) = {b} outside buffer 0..{self.buffer_size - 1}")

    @classmethod
    def zeros(cls, n_states: int, buffer_size: int = 1) -> "BufferMapping":
        return cls((0,) * n_states, buffer_size)

    def __call__(self, c: int) -> int:
        return self.positions[c]

    def __len__(self):
        return len(self.positions)


def _delay_pairs(channel: ChannelModel, c: int):
    """``(weight, delay)`` pairs of the next transmission delay seen from state ``c``."""
    out = []
    for c2, p in enumerate(channel.transition[c]):
        if p == 0:
            continue
        for q, pq in zip(channel.transmission[c2].support, channel.transmission[c2].probs):
            out.append((p * pq, int(q)))
    return out


def _window_index(e: np.ndarray, e_tail: float, nu: int) -> tuple[np.ndarray, np.ndarray]:
    """Minimum running average of ``e`` over windows of length ``1..nu``.

    Works on differences from the window's first element so that a
    nondecreasing ``e`` returns ``e`` itself, bit for bit. Returns the
    minimum and, per start, the running average at the last window length
    (used by the truncation certificate).
    """
    n = e.shape[0]
    ext = np.concatenate((e, np.full(nu, e_tail)))
    lengths = np.arange(1, nu + 1, dtype=float)
    best = np.empty(n)
    last_avg = np.empty(n)
    for lo in range(0, n, _ROW_BLOCK):
        hi = min(n, lo + _ROW_BLOCK)
        win = sliding_window_view(ext, nu)[lo:hi]
        centered = np.cumsum(win - win[:, :1], axis=1) / lengths
        best[lo:hi] = e[lo:hi] + np.minimum(0.0, centered.min(axis=1))
        last_avg[lo:hi] = e[lo:hi] + centered[:, -1]
    return best, last_avg


class PolicyContext:
    """Precomputed tables for one (error curve, channel, buffer size).

    Parameters
    ----------
    curve : ErrorCurve
    channel : ChannelModel
    buffer_size : int
        Number of buffered packets ``B``.
    nu_max : int, optional
        Cap on the averaging window of the index; defaults to
        ``curve.delta_max``, which makes the index exact under the hold-last
        extension. Smaller caps are checked by a local optimality
        certificate and enlarged where it fails.
    """

    def __init__(self, curve: ErrorCurve, channel: ChannelModel, buffer_size: int = 1, nu_max: int | None = None):
        if buffer_size < 1:
            raise ValueError("buffer_size must be >= 1")
        self.curve = curve
        self.channel = channel
        self.buffer_size = int(buffer_size)
        self.n_states = channel.n_states
        self.delta_max = curve.delta_max
        self.nu_max = int(nu_max) if nu_max is not None else self.delta_max
        if self.nu_max < 1:
            raise ValueError("nu_max must be >= 1")
        self.wait_cap = 10 * self.delta_max
        self.extension_hits = 0
        self.pi = channel.stationary_distribution()

        c_count, dm = self.n_states, self.delta_max
        self._pairs = [_delay_pairs(channel, c) for c in range(c_count)]
        x = np.arange(1, dm + 1)
        self.e = np.zeros((c_count, dm))
        self.e_tail = np.zeros(c_count)
        base = curve.min
        for c in range(c_count):
            acc = np.zeros(dm)
            # offsets from a fixed base: constants come out exact, and a fixed
            # summation order keeps e monotone in floating point when h is
            for w, q in self._pairs[c]:
                acc = acc + w * (curve(x + q) - base)
            # an average of h stays in its range; clipping removes one-ulp overshoot
            self.e[c] = np.clip(base + acc, base, curve.max)
            # every shift lands on the held value, so the tail is exact
            self.e_tail[c] = curve.last
        self.e.setflags(write=False)
        self._gamma = None

        self.mean_next_transmission = np.array([sum(w * q for w, q in self._pairs[c]) for c in range(c_count)])
        self.mean_next_feedback = np.array(
            [channel.transition[c] @ [pmf.mean for pmf in channel.feedback] for c in range(c_count)]
        )
        # L_c(b, .) cost part, b = 0..B-1
        b = np.arange(self.buffer_size)
        self.feedback_cost = np.zeros((c_count, self.buffer_size))
        for c in range(c_count):
            for c2, p in enumerate(channel.transition[c]):
                if p == 0:
                    continue
                qpmf, rpmf = channel.transmission[c2], channel.feedback[c2]
                for q, pq in zip(qpmf.support, qpmf.probs):
                    for f, pf in zip(rpmf.support, rpmf.probs):
                        self.feedback_cost[c] += p * pq * pf * curve.window_sum(b + q, f)
        # distribution of T + F for an epoch spent in each state
        self._ack_offsets = []
        for c in range(c_count):
            qpmf, rpmf = channel.transmission[c], channel.feedback[c]
            dist: dict[int, float] = {}
            for q, pq in zip(qpmf.support, qpmf.probs):
                for f, pf in zip(rpmf.support, rpmf.probs):
                    dist[int(q + f)] = dist.get(int(q + f), 0.0) + pq * pf
            self._ack_offsets.append(sorted(dist.items()))
        self.max_decision_aoi = self.buffer_size - 1 + max(s for offs in self._ack_offsets for s, _ in offs)

    # -- index -----------------------------------------------------------

    @property
    def gamma(self) -> np.ndarray:
        """Index table ``gamma[c, delta - 1]`` for ``delta = 1..delta_max`` (memoized)."""
        if self._gamma is None:
            self._gamma = self._index_table()
            self._gamma.setflags(write=False)
        return self._gamma

    def _index_table(self) -> np.ndarray:
        dm = self.delta_max
        gamma = np.empty_like(self.e)
        start = np.arange(dm)
        for c in range(self.n_states):
            e, tail = self.e[c], self.e_tail[c]
            # suffix[j] = min(e[j:], tail)
            suffix = np.minimum.accumulate(np.append(e, tail)[::-1])[::-1]
            nu = min(self.nu_max, dm)
            best, last_avg = _window_index(e, tail, nu)
            while nu < dm:
                # a longer window averages the capped one with terms past the cap, so it
                # cannot beat best if both the capped average and those terms stay above it
                reaches_tail = start + nu >= dm
                beyond = suffix[np.minimum(start + nu, dm)]
                ok = reaches_tail | ((last_avg >= best) & (beyond >= best))
                if ok.all():
                    break
                nu = min(2 * nu, dm)
                log.warning("index window cap too small for state %d; raising nu_max to %d", c, nu)
                best, last_avg = _window_index(e, tail, nu)
            self.nu_max = max(self.nu_max, nu)
            gamma[c] = np.minimum(best, tail)
        return gamma

    def expected_future_error(self, delta: int, c: int, k: int = 0) -> float:
        """``E[h(delta + T' + k) | c]``."""
        if delta < 1 or k < 0:
            raise ValueError("need delta >= 1 and k >= 0")
        self.channel._check_state(c)
        x = delta + k
        if x + self.channel.max_transmission > self.delta_max:
            self.extension_hits += 1
        return float(self.e[c, x - 1]) if x <= self.delta_max else float(self.e_tail[c])

    def index(self, delta: int, c: int) -> float:
        if delta < 1:
            raise ValueError("delta must be >= 1")
        self.channel._check_state(c)
        return float(self.gamma[c, delta - 1]) if delta <= self.delta_max else float(self.e_tail[c])

    def waiting_time(self, delta: int, c: int, beta: float) -> int:
        """Smallest ``k >= 0`` with ``index(delta + k, c) >= beta``."""
        if delta < 1:
            raise ValueError("delta must be >= 1")
        self.channel._check_state(c)
        k = None
        if delta <= self.delta_max:
            hits = np.flatnonzero(self.gamma[c, delta - 1:] >= beta)
            if hits.size:
                k = int(hits[0])
            elif self.e_tail[c] >= beta:
                k = self.delta_max + 1 - delta
        elif self.e_tail[c] >= beta:
            k = 0
        if k is not None and k <= self.wait_cap:
            return k
        # the index never reaches beta within the cap
        raise WaitingCapExceeded(delta, c, beta, self.wait_cap)

    def waiting_table(self, betas, c: int, d_max: int) -> np.ndarray:
        """Waiting times for starting AoI ``1..d_max`` and each threshold in ``betas``.

        Shape ``(len(betas), d_max)``; ``inf`` where the threshold is never reached.
        """
        betas = np.atleast_1d(np.asarray(betas, dtype=float))
        dm = self.delta_max
        g = self.gamma[c]
        pos = np.arange(dm, dtype=float)
        hit = np.where(g[None, :] >= betas[:, None], pos[None, :], np.inf)
        first = np.minimum.accumulate(hit[:, ::-1], axis=1)[:, ::-1]
        # no crossing inside the table: the first slot past it, if the tail qualifies
        first = np.where(np.isinf(first) & (self.e_tail[c] >= betas)[:, None], float(dm), first)
        out = np.empty((betas.size, d_max))
        n_in = min(d_max, dm)
        out[:, :n_in] = first[:, :n_in] - pos[:n_in]
        if d_max > dm:
            out[:, dm:] = np.where(self.e_tail[c] >= betas, 0.0, np.inf)[:, None]
        return out

    # -- epoch cost ------------------------------------------------------

    def _next_cumulative(self, c: int, x: np.ndarray) -> np.ndarray:
        """``E[sum_{j=1}^{x + T' - 1} h(j) | c]``."""
        acc = np.zeros(x.shape)
        for w, q in self._pairs[c]:
            acc = acc + w * self.curve.cumulative(x + q - 1)
        return acc

    def _waiting_moments(self, c: int, taus: np.ndarray):
        """Cost and length of the waiting+transmission part for AoI ``d = 1..D``."""
        d = np.arange(1, taus.shape[1] + 1)
        finite = np.isfinite(taus)
        t = np.where(finite, taus, 0).astype(np.int64)
        cost = self._next_cumulative(c, d[None, :] + t) - self.curve.cumulative(d - 1)[None, :]
        length = t + self.mean_next_transmission[c]
        return cost, length, finite

    def _combine(self, mappings: np.ndarray, part):
        """Sum ``pi(c0) P[c0, c1] E[part_{c1}(psi(c0) + T + F)]`` over states."""
        m = mappings.shape[0]
        out = np.zeros(m)
        for c0 in range(self.n_states):
            for c1, p in enumerate(self.channel.transition[c0]):
                if p == 0:
                    continue
                tab = part[c1]
                for s, ps in self._ack_offsets[c1]:
                    out += self.pi[c0] * p * ps * tab[np.arange(m), mappings[:, c0] + s - 1]
        return out

    def _feedback_terms(self, mappings: np.ndarray):
        m = mappings.shape[0]
        cost = np.zeros(m)
        length = 0.0
        for c in range(self.n_states):
            cost += self.pi[c] * self.feedback_cost[c, mappings[:, c]]
            length += self.pi[c] * self.mean_next_feedback[c]
        return cost, length

    def gap_batch(self, betas, mappings) -> np.ndarray:
        """Epoch cost gap for paired thresholds and mappings (vectorized)."""
        betas = np.asarray(betas, dtype=float)
        mappings = np.atleast_2d(np.asarray(mappings, dtype=np.int64))
        dmax = int(mappings.max()) + max(s for offs in self._ack_offsets for s, _ in offs)
        parts, never = [], []
        for c in range(self.n_states):
            taus = self.waiting_table(betas, c, dmax)
            cost, length, finite = self._waiting_moments(c, taus)
            parts.append(np.where(finite, cost - betas[:, None] * length, 0.0))
            never.append((~finite).astype(float))
        fb_cost, fb_len = self._feedback_terms(mappings)
        gap = self._combine(mappings, parts) + fb_cost - betas * fb_len
        # a reachable start that never reaches the threshold drives the infimum to -inf
        gap[self._combine(mappings, never) > 0] = -np.inf
        return gap

    def epoch_cost_gap(self, beta: float, mapping: BufferMapping) -> float:
        """Steady-state ``E[epoch cost] - beta * E[epoch length]`` under threshold ``beta``."""
        self._check_mapping(mapping)
        return float(self.gap_batch([beta], [mapping.positions])[0])

    def _check_mapping(self, mapping: BufferMapping) -> None:
        if len(mapping) != self.n_states:
            raise ValueError(f"mapping has {len(mapping)} entries for {self.n_states} states")
        if mapping.buffer_size != self.buffer_size:
            raise ValueError(f"mapping buffer size {mapping.buffer_size} != context {self.buffer_size}")

    def default_tol(self) -> float:
        spread = self.curve.max - self.curve.min
        return 1e-9 * spread if spread > 0 else 1e-12

    def bisect(self, mappings, tol: float | None = None, max_iter: int = 200):
        """Bisection for the threshold of every mapping at once.

        Returns ``(betas, iterations)``.
        """
        mappings = np.atleast_2d(np.asarray(mappings, dtype=np.int64))
        tol = self.default_tol() if tol is None else float(tol)
        if not tol > 0:
            raise ValueError("tol must be > 0")
        lo = np.full(mappings.shape[0], self.curve.min)
        hi = np.full(mappings.shape[0], self.curve.max)
        if self.curve.max == self.curve.min:
            return lo, 0
        g_lo = self.gap_batch(lo, mappings)
        g_hi = self.gap_batch(hi, mappings)
        # endpoint gaps can be exactly zero in exact arithmetic (e.g. the whole
        # epoch sits in the constant tail); allow round-off at that scale
        span = self.max_decision_aoi + self.wait_cap + self.channel.max_transmission + self.channel.max_feedback
        slack = 1e-12 * self.curve.bound * span
        bad = (g_lo < -slack) | (g_hi > slack)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise BracketError(
                f"gap has no sign change on [{lo[i]!r}, {hi[i]!r}] for mapping "
                f"{tuple(mappings[i])}: gap(lo)={g_lo[i]!r}, gap(hi)={g_hi[i]!r}"
            )
        g_lo, g_hi = np.maximum(g_lo, 0.0), np.minimum(g_hi, 0.0)
        it = 0
        while it < max_iter and np.max(hi - lo) >= tol:
            mid = 0.5 * (lo + hi)
            if np.all((mid == lo) | (mid == hi)):
                break
            g = self.gap_batch(mid, mappings)
            up = g > 0
            lo, g_lo = np.where(up, mid, lo), np.where(up, g, g_lo)
            hi, g_hi = np.where(up, hi, mid), np.where(up, g_hi, g)
            it += 1
        # the gap is piecewise linear in beta: a final secant step inside the
        # bracket lands on the root whenever both ends share a linear piece
        with np.errstate(invalid="ignore", divide="ignore"):
            sec = lo + g_lo * (hi - lo) / (g_lo - g_hi)
        ok = np.isfinite(sec) & (sec >= lo) & (sec <= hi)
        return np.where(ok, sec, 0.5 * (lo + hi)), it

    def solve_threshold(self, mapping: BufferMapping, tol: float | None = None) -> float:
        self._check_mapping(mapping)
        return float(self.bisect([mapping.positions], tol)[0][0])

    def optimize_mapping(self, tol: float | None = None) -> "MappingSearch":
        """Exhaustive search over all ``B**C`` mappings, lexicographic order, ties to the first."""
        total = self.buffer_size ** self.n_states
        if total > MAX_MAPPINGS:
            raise EnumerationLimitError(f"{total} mappings exceed the enumeration guard {MAX_MAPPINGS}")
        tol = self.default_tol() if tol is None else float(tol)
        grid = np.array(list(itertools.product(range(self.buffer_size), repeat=self.n_states)), dtype=np.int64)
        betas = np.concatenate([self.bisect(grid[i:i + _BATCH], tol)[0] for i in range(0, total, _BATCH)])
        best = int(np.flatnonzero(betas <= betas.min() + tol)[0])
        mapping = BufferMapping(tuple(grid[best]), self.buffer_size)
        return MappingSearch(mapping, float(betas[best]), grid, betas)

    # -- evaluation of arbitrary threshold rules -------------------------

    def average_cost(self, mapping: BufferMapping, waits) -> float:
        """Exact long-run cost of a rule given as waiting tables ``waits[c][d - 1]``.

        The waits may come from another context (e.g. a policy designed for a
        different channel); cost and delays are taken from this one.
        """
        self._check_mapping(mapping)
        mappings = np.array([mapping.positions])
        costs, lengths = [], []
        for c in range(self.n_states):
            taus = np.asarray(waits[c], dtype=float)[None, : self.max_decision_aoi]
            if not np.all(np.isfinite(taus)):
                raise WaitingCapExceeded(int(np.flatnonzero(~np.isfinite(taus[0]))[0]) + 1, c, math.nan, self.wait_cap)
            cost, length, _ = self._waiting_moments(c, taus)
            costs.append(cost)
            lengths.append(length)
        fb_cost, fb_len = self._feedback_terms(mappings)
        total_cost = self._combine(mappings, costs)[0] + fb_cost[0]
        total_len = self._combine(mappings, lengths)[0] + fb_len
        return float(total_cost / total_len)


@dataclass(frozen=True, eq=False)
class MappingSearch:
    mapping: BufferMapping
    h_opt: float
    grid: np.ndarray = field(repr=False)
    betas: np.ndarray = field(repr=False)

    def __iter__(self):
        yield self.mapping
        yield self.h_opt


@dataclass(frozen=True, eq=False)
class ThresholdPolicy:
    """Submit buffer position ``mapping(c_i)`` at the first slot with ``index >= beta``."""

    mapping: BufferMapping
    beta: float
    ctx: PolicyContext

    def __post_init__(self):
        self.ctx._check_mapping(self.mapping)
        lo, hi = self.ctx.curve.min, self.ctx.curve.max
        if not lo - 1e-12 * max(1.0, abs(lo)) <= self.beta <= hi + 1e-12 * max(1.0, abs(hi)):
            raise ValueError(f"threshold {self.beta!r} outside [{lo!r}, {hi!r}]")

    def index(self, delta: int, c: int) -> float:
        return self.ctx.index(delta, c)

    def waiting_time(self, delta: int, c: int) -> int:
        return self.ctx.waiting_time(delta, c, self.beta)

    def waits(self, d_max: int | None = None) -> list[np.ndarray]:
        """Waiting time per state for starting AoI ``1..d_max``."""
        d_max = d_max or max(self.ctx.delta_max, self.ctx.max_decision_aoi)
        return [self.ctx.waiting_table([self.beta], c, d_max)[0] for c in range(self.ctx.n_states)]


def expected_future_error(delta: int, c: int, k: int, ctx: PolicyContext) -> float:
    return ctx.expected_future_error(delta, c, k)


def index(delta: int, c: int, ctx: PolicyContext) -> float:
    return ctx.index(delta, c)


def waiting_time(delta: int, c: int, beta: float, ctx: PolicyContext) -> int:
    return ctx.waiting_time(delta, c, beta)


def epoch_cost_gap(beta: float, mapping: BufferMapping, ctx: PolicyContext) -> float:
    return ctx.epoch_cost_gap(beta, mapping)


def solve_threshold(mapping: BufferMapping, ctx: PolicyContext, tol: float | None = None) -> float:
    """Root of the epoch cost gap, i.e. the optimal average error for ``mapping``."""
    return ctx.solve_threshold(mapping, tol)


def optimize_mapping(ctx: PolicyContext, tol: float | None = None) -> MappingSearch:
    """Best buffer mapping and its threshold; unpacks as ``(mapping, h_opt)``."""
    return ctx.optimize_mapping(tol)


def optimal_policy(ctx: PolicyContext, tol: float | None = None) -> ThresholdPolicy:
    mapping, h_opt = ctx.optimize_mapping(tol)
    return ThresholdPolicy(mapping, h_opt, ctx)
