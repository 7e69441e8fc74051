"""Brute-force average-cost solver used to certify the threshold policy.

Relative value iteration over decision states ``(delta, c)`` (AoI at an ACK,
state of the epoch just ended) and joint actions ``(tau, b)`` (waiting time,
buffer position), with every expectation enumerated over ``(c', T', F')``.
Nothing here reuses the policy module's tables; the error curve is read
through its raw values and the hold-last rule.

The semi-Markov problem is turned into an equivalent discrete-time MDP by the
data transformation ``cost/t``, ``P~ = (eta/t) P + (1 - eta/t) I``. With
``eta`` below the shortest sojourn every state keeps a self-loop, which
makes the transformed chain aperiodic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel
from .error_model import ErrorCurve
from .errors import NotConvergedError

TIE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TruncatedSMDP:
    """Finite version of the scheduling problem.

    ``wait_cap`` defaults to ``max(1, delta_max - 2)``. Beyond that cap every
    extra waiting slot costs ``h(delta_max)``, which is never below the optimal
    average, so the cap does not bind. ``aoi_cap`` defaults to the smallest
    value satisfying the representability invariant.
    """

    curve: ErrorCurve
    channel: ChannelModel
    buffer_size: int
    wait_cap: int | None = None
    aoi_cap: int | None = None

    def __post_init__(self):
        if self.buffer_size < 1:
            raise ValueError("buffer_size must be >= 1")
        if self.wait_cap is None:
            object.__setattr__(self, "wait_cap", max(1, self.curve.delta_max - 2))
        if self.wait_cap < 0:
            raise ValueError("wait_cap must be >= 0")
        need = self.buffer_size - 1 + self.channel.max_transmission + self.channel.max_feedback + self.wait_cap
        if self.aoi_cap is None:
            object.__setattr__(self, "aoi_cap", need)
        if self.aoi_cap < need:
            raise ValueError(
                f"aoi_cap {self.aoi_cap} < b_max + max T + max F + wait_cap = {need}"
            )

    @property
    def n_states(self) -> int:
        return self.channel.n_states

    def reachable(self) -> list[tuple[int, int]]:
        """Decision states ``(delta, c)`` with ``delta = b + T + F`` for some ``b`` and delays of ``c``."""
        out = set()
        for c in range(self.n_states):
            for q in self.channel.transmission[c].support:
                for f in self.channel.feedback[c].support:
                    for b in range(self.buffer_size):
                        out.add((int(b + q + f), c))
        return sorted(out)

    def _h(self, n: int) -> np.ndarray:
        v = np.asarray(self.curve.values, dtype=float)
        if n <= v.size:
            return v[:n]
        return np.concatenate((v, np.full(n - v.size, v[-1])))

    def model(self):
        """Expected cost, expected sojourn and next-state law for every (state, action).

        Returns ``cost[d, c, tau, b]`` and ``time[c, tau]`` for ``d = 1..aoi_cap``,
        and ``trans[c, b, d', c']`` with ``d'`` indexed from 1.
        """
        n_c, bsz, dcap, tcap = self.n_states, self.buffer_size, self.aoi_cap, self.wait_cap
        qmax, fmax = self.channel.max_transmission, self.channel.max_feedback
        h = self._h(dcap + tcap + qmax + bsz + fmax + 2)
        prefix = np.concatenate(([0.0], np.cumsum(h)))  # prefix[n] = h(1) + ... + h(n)

        d = np.arange(1, dcap + 1)[:, None]
        tau = np.arange(tcap + 1)[None, :]
        b = np.arange(bsz)
        cost = np.zeros((dcap, n_c, tcap + 1, bsz))
        time = np.zeros((n_c, tcap + 1))
        trans = np.zeros((n_c, bsz, dcap + 1, n_c))
        for c in range(n_c):
            for c2 in range(n_c):
                p = self.channel.transition[c, c2]
                if p == 0:
                    continue
                qpmf, rpmf = self.channel.transmission[c2], self.channel.feedback[c2]
                for q, pq in zip(qpmf.support, qpmf.probs):
                    for f, pf in zip(rpmf.support, rpmf.probs):
                        w = p * pq * pf
                        # slots A_i .. D_{i+1}-1 carry AoI d, d+1, ..., d+tau+q-1
                        wait_part = prefix[d + tau + q - 1] - prefix[d - 1]
                        # slots D_{i+1} .. A_{i+1}-1 carry AoI b+q, ..., b+q+f-1
                        fb_part = prefix[b + q + f - 1] - prefix[b + q - 1]
                        cost[:, c] += w * (wait_part[:, :, None] + fb_part[None, None, :])
                        time[c] += w * (tau[0] + q + f)
                        trans[c, b, b + q + f, c2] += w
        return cost, time, trans[:, :, 1:, :]


@dataclass(frozen=True, eq=False)
class RVIResult:
    h_opt: float
    values: np.ndarray  # relative values V[d - 1, c]
    q_values: np.ndarray = field(repr=False)  # c - g t + E V, shape (D, C, tau, b)
    greedy_wait: np.ndarray = field(repr=False)
    greedy_buffer: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0

    def action_gap(self, delta: int, c: int, wait: int, buffer_pos: int) -> float:
        row = self.q_values[delta - 1, c]
        return float(row[wait, buffer_pos] - row.min())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta", "state", "value", "greedy_wait", "greedy_buffer"])
            for i in range(self.values.shape[0]):
                for c in range(self.values.shape[1]):
                    w.writerow([i + 1, c, repr(float(self.values[i, c])), int(self.greedy_wait[i, c]), int(self.greedy_buffer[i, c])])


def relative_value_iteration(
    smdp: TruncatedSMDP,
    tol: float = 1e-10,
    max_iters: int = 10**6,
    ref_state: tuple[int, int] | None = None,
) -> RVIResult:
    """Average-cost relative value iteration with a span stopping rule.

    ``ref_state`` is the ``(delta, c)`` pinned to value zero; by default the
    first reachable decision state.
    """
    cost, time, trans = smdp.model()
    dcap, n_c, n_tau, bsz = cost.shape
    eta = 0.5 * time.min()
    step = eta / time  # (c, tau)
    ctilde = cost / time[None, :, :, None]
    if ref_state is None:
        ref_state = smdp.reachable()[0]
    rd, rc = ref_state[0] - 1, ref_state[1]

    v = np.zeros((dcap, n_c))
    residual = np.inf
    g = 0.0
    for it in range(1, max_iters + 1):
        ev = np.einsum("cbdk,dk->cb", trans, v)  # E[V(next)] per (c, b)
        q = ctilde + step[None, :, :, None] * (ev[None, :, None, :] - v[:, :, None, None]) + v[:, :, None, None]
        w = q.reshape(dcap, n_c, -1).min(axis=2)
        diff = w - v
        lo, hi = diff.min(), diff.max()
        residual = hi - lo
        g = 0.5 * (lo + hi)
        v = w - w[rd, rc]
        if residual < tol:
            break
    else:
        raise NotConvergedError(max_iters, float(residual))

    values = eta * v
    ev = np.einsum("cbdk,dk->cb", trans, values)
    q_smdp = cost - g * time[None, :, :, None] + ev[None, :, None, :]
    flat = q_smdp.reshape(dcap, n_c, -1)
    best = flat.argmin(axis=2)
    return RVIResult(
        h_opt=float(g),
        values=values,
        q_values=q_smdp,
        greedy_wait=best // bsz,
        greedy_buffer=best % bsz,
        iterations=it,
        residual=float(residual),
    )


@dataclass
class Mismatch:
    delta: int
    state: int
    greedy: tuple[int, int]
    threshold: tuple[int, int]
    gap: float


@dataclass
class OracleReport:
    h_opt_oracle: float
    h_opt_policy: float
    checked: int
    mismatches: list[Mismatch]
    max_gap: float
    buffer_depends_on_aoi: bool

    @property
    def ok(self) -> bool:
        return not self.mismatches and not self.buffer_depends_on_aoi


def greedy_matches_threshold(
    smdp: TruncatedSMDP,
    result: RVIResult,
    mapping,
    h_opt: float,
    waiting_time,
    tie_tol: float = TIE_TOL,
) -> OracleReport:
    """Compare RVI-greedy actions with the threshold policy on every reachable state.

    ``waiting_time(delta, c, beta)`` is the threshold rule under test and
    ``mapping`` its buffer mapping. The threshold action counts as a match
    when its Bellman action gap is within ``tie_tol``. Buffer choices are
    also checked for independence from the AoI after resolving ties toward
    ``mapping``.
    """
    mismatches = []
    max_gap = 0.0
    chosen_b: dict[int, set[int]] = {}
    for delta, c in smdp.reachable():
        tau = waiting_time(delta, c, h_opt)
        b = mapping(c)
        row = result.q_values[delta - 1, c]
        greedy = (int(result.greedy_wait[delta - 1, c]), int(result.greedy_buffer[delta - 1, c]))
        if tau > smdp.wait_cap:
            gap = np.inf
        else:
            gap = float(row[tau, b] - row.min())
        max_gap = max(max_gap, gap)
        if gap > tie_tol:
            mismatches.append(Mismatch(delta, c, greedy, (tau, b), gap))
        # best buffer for this state, ties resolved toward the mapping
        per_b = row.min(axis=0)
        ties = np.flatnonzero(per_b <= per_b.min() + tie_tol)
        chosen_b.setdefault(c, set()).add(b if b in ties else int(ties[0]))
    return OracleReport(
        h_opt_oracle=result.h_opt,
        h_opt_policy=float(h_opt),
        checked=len(smdp.reachable()),
        mismatches=mismatches,
        max_gap=max_gap,
        buffer_depends_on_aoi=any(len(s) > 1 for s in chosen_b.values()),
    )
