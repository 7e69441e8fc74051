"""Slotted simulation of scheduling rules over the two-way Markov channel.

Epoch ``i`` submits buffer position ``b_i`` at ``S_i`` while the channel is
in state ``c_i``; the packet arrives at ``D_i = S_i + T_i`` and the ACK (with
``c_i``) at ``A_i = D_i + F_i``. At ``A_i`` the channel moves to ``c_{i+1}``,
``b_{i+1} = psi(c_i)`` is chosen and the scheduler waits until the index of
the current AoI reaches the threshold.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, symmetric_two_state
from .error_model import ErrorCurve
from .policy import BufferMapping, PolicyContext, ThresholdPolicy
from .stats import batch_means

DEFAULT_WARM_UP_SLOTS = 10_000
DEFAULT_WARM_UP_EPOCHS = 100


class PolicyKind(str, enum.Enum):
    OPTIMAL = "optimal"
    IID_BASELINE = "iid_baseline"
    ZERO_WAIT = "zero_wait"


@dataclass(frozen=True, eq=False)
class ThresholdRule:
    """What the simulator needs to run a policy: mapping, threshold and index table.

    ``gamma[c, d - 1]`` is the index at AoI ``d``; beyond the table it is
    ``gamma_tail[c]``. Zero-wait is the rule with ``beta = -inf``.
    """

    name: str
    mapping: tuple[int, ...]
    beta: float
    gamma: np.ndarray
    gamma_tail: np.ndarray
    waits: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        c, n = gamma.shape
        pos = np.arange(n, dtype=float)
        hit = np.where(gamma >= self.beta, pos[None, :], np.inf)
        first = np.minimum.accumulate(hit[:, ::-1], axis=1)[:, ::-1]
        tail = np.asarray(self.gamma_tail, dtype=float)
        # no crossing inside the table: the first slot past it, if the tail qualifies
        first = np.where(np.isinf(first) & (tail >= self.beta)[:, None], float(n), first)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "gamma_tail", np.asarray(self.gamma_tail, dtype=float))
        object.__setattr__(self, "waits", first - pos[None, :])

    @classmethod
    def from_policy(cls, name: str, policy: ThresholdPolicy) -> "ThresholdRule":
        return cls(name, policy.mapping.positions, policy.beta, policy.ctx.gamma, policy.ctx.e_tail)

    @classmethod
    def zero_wait(cls, n_states: int) -> "ThresholdRule":
        return cls(PolicyKind.ZERO_WAIT.value, (0,) * n_states, -math.inf, np.zeros((n_states, 1)), np.zeros(n_states))

    @property
    def n_states(self) -> int:
        return len(self.mapping)

    def index(self, delta: int, c: int) -> float:
        return float(self.gamma[c, delta - 1]) if delta <= self.gamma.shape[1] else float(self.gamma_tail[c])

    def wait(self, delta: int, c: int) -> int:
        if delta <= self.waits.shape[1]:
            w = self.waits[c, delta - 1]
        else:
            w = 0.0 if self.gamma_tail[c] >= self.beta else math.inf
        if not math.isfinite(w):
            raise RuntimeError(f"{self.name}: threshold {self.beta!r} never reached from AoI {delta} in state {c}")
        return int(w)


def build_rule(
    kind: PolicyKind | str,
    curve: ErrorCurve,
    channel: ChannelModel,
    buffer_size: int = 1,
    nu_max: int | None = None,
    tol: float | None = None,
) -> tuple[ThresholdRule, float]:
    """Resolve a policy kind into a rule; also returns its designed-for threshold.

    The IID baseline is the optimal rule for a surrogate channel whose next
    state ignores history (every row equal to the stationary law).
    """
    kind = PolicyKind(kind)
    if kind is PolicyKind.ZERO_WAIT:
        return ThresholdRule.zero_wait(channel.n_states), math.nan
    design = channel if kind is PolicyKind.OPTIMAL else channel.iid_surrogate()
    ctx = PolicyContext(curve, design, buffer_size, nu_max)
    mapping, h_opt = ctx.optimize_mapping(tol)
    return ThresholdRule.from_policy(kind.value, ThresholdPolicy(mapping, h_opt, ctx)), h_opt


def analytic_cost(rule: ThresholdRule, curve: ErrorCurve, channel: ChannelModel, buffer_size: int) -> float:
    """Exact long-run average error of ``rule`` on ``channel`` (no simulation)."""
    ctx = PolicyContext(curve, channel, buffer_size)
    d_max = ctx.max_decision_aoi
    waits = [[rule.wait(d, c) for d in range(1, d_max + 1)] for c in range(rule.n_states)]
    return ctx.average_cost(BufferMapping(rule.mapping, buffer_size), waits)


@dataclass(frozen=True)
class EpochState:
    i: int
    submit: int
    transmission: int
    feedback: int
    state: int
    buffer_pos: int

    @property
    def delivery(self) -> int:
        return self.submit + self.transmission

    @property
    def ack(self) -> int:
        return self.delivery + self.feedback


@dataclass(frozen=True)
class SimReport:
    policy: str
    seed: int
    mean_cost: float
    stderr: float
    horizon: int
    warm_up: int
    n_epochs: int
    mean_epoch_cost: float
    mean_epoch_length: float
    extension_slots: int


def step_aoi(delta_prev: int, t: int, deliveries) -> int:
    """AoI at slot ``t``: ``T_i + b_i`` on a delivery slot, else one more than before."""
    hits = [(d, q, b) for d, q, b in deliveries if d == t]
    if len(hits) > 1:
        raise AssertionError(f"{len(hits)} deliveries in slot {t}; at most one packet is in flight")
    if hits:
        _, q, b = hits[0]
        return q + b
    return delta_prev + 1


def _cdf_tables(channel: ChannelModel):
    q = [(pmf.support, np.cumsum(pmf.probs)) for pmf in channel.transmission]
    r = [(pmf.support, np.cumsum(pmf.probs)) for pmf in channel.feedback]
    return np.cumsum(channel.transition, axis=1), q, r


def _draw(support, cdf, u) -> int:
    return int(support[min(int(np.searchsorted(cdf, u, side="right")), len(support) - 1)])


def simulate_epochs(rule: ThresholdRule, channel: ChannelModel, horizon: int, seed, initial_aoi: int | None = None):
    """Run the epoch state machine until the delivery times cover ``horizon`` slots.

    Returns ``(epochs, initial_aoi)`` where ``epochs`` is a dict of int arrays
    ``submit, transmission, feedback, state, buffer``.
    """
    if rule.n_states != channel.n_states:
        raise ValueError("rule and channel disagree on the number of states")
    rng = np.random.default_rng(seed)
    row_cdf, q_tab, r_tab = _cdf_tables(channel)
    pi_cdf = np.cumsum(channel.stationary_distribution())
    n = channel.n_states

    c = min(int(np.searchsorted(pi_cdf, rng.random(), side="right")), n - 1)
    b = rule.mapping[c]
    delta0 = b + 1 if initial_aoi is None else int(initial_aoi)
    s = 0
    submit, trans, feed, states, bufs = [], [], [], [], []
    chunk = 4096
    u = rng.random((chunk, 3))
    k = 0
    while True:
        if k == chunk:
            u = rng.random((chunk, 3))
            k = 0
        tq = _draw(*q_tab[c], u[k, 0])
        fr = _draw(*r_tab[c], u[k, 1])
        submit.append(s)
        trans.append(tq)
        feed.append(fr)
        states.append(c)
        bufs.append(b)
        if s + tq >= horizon:
            break
        ack = s + tq + fr
        # ACK: chain moves, next buffer position from the state just observed
        c_next = min(int(np.searchsorted(row_cdf[c], u[k, 2], side="right")), n - 1)
        b_next = rule.mapping[c]
        s = ack + rule.wait(b + tq + fr, c)
        c, b = c_next, b_next
        k += 1
    epochs = {
        "submit": np.array(submit, dtype=np.int64),
        "transmission": np.array(trans, dtype=np.int64),
        "feedback": np.array(feed, dtype=np.int64),
        "state": np.array(states, dtype=np.int64),
        "buffer": np.array(bufs, dtype=np.int64),
    }
    return epochs, delta0


def aoi_timeline(epochs, delta0: int, horizon: int) -> np.ndarray:
    """``Delta(t)`` for ``t = 0..horizon-1`` from epoch records."""
    deliveries = epochs["submit"] + epochs["transmission"]
    t = np.arange(horizon, dtype=np.int64)
    first = int(min(deliveries[0], horizon))
    offsets = np.empty(horizon, dtype=np.int64)
    offsets[:first] = delta0
    bounds = np.minimum(np.append(deliveries, horizon), horizon)
    lengths = np.diff(bounds)
    offsets[first:] = np.repeat(epochs["buffer"] - epochs["submit"], lengths)
    out = t + offsets
    out[:first] = delta0 + t[:first]
    return out


def run_simulation(
    rule: ThresholdRule,
    channel: ChannelModel,
    curve: ErrorCurve,
    horizon: int = 10**6,
    warm_up: int | None = None,
    seed: int = 0,
    n_batches: int = 50,
    initial_aoi: int | None = None,
) -> SimReport:
    """Time-average inference error of ``rule`` over ``[warm_up, horizon)``.

    Costs are accumulated slot by slot from the AoI timeline. ``warm_up``
    defaults to the later of 10**4 slots and the 100th ACK.
    """
    epochs, delta0 = simulate_epochs(rule, channel, horizon, seed, initial_aoi)
    acks = epochs["submit"] + epochs["transmission"] + epochs["feedback"]
    if warm_up is None:
        nth = acks[DEFAULT_WARM_UP_EPOCHS - 1] if acks.size >= DEFAULT_WARM_UP_EPOCHS else horizon
        warm_up = int(max(DEFAULT_WARM_UP_SLOTS, nth))
    if not 0 <= warm_up < horizon:
        raise ValueError(f"horizon {horizon} must exceed warm-up {warm_up}")
    delta = aoi_timeline(epochs, delta0, horizon)
    cost = curve(delta)
    measured = cost[warm_up:]
    mean, se = batch_means(measured, min(n_batches, max(2, measured.size // 2)))
    mean = float(measured.mean())

    # whole epochs [A_{i-1}, A_i) inside the measurement window
    inside = acks[(acks > warm_up) & (acks <= horizon)]
    if inside.size >= 2:
        csum = np.concatenate(([0.0], np.cumsum(cost)))
        ep_cost = float(np.mean(np.diff(csum[inside])))
        ep_len = float(np.mean(np.diff(inside)))
    else:
        ep_cost = ep_len = math.nan
    return SimReport(
        policy=rule.name,
        seed=int(seed),
        mean_cost=mean,
        stderr=float(se),
        horizon=int(horizon),
        warm_up=int(warm_up),
        n_epochs=int(acks.size),
        mean_epoch_cost=ep_cost,
        mean_epoch_length=ep_len,
        extension_slots=int(np.count_nonzero(delta > curve.delta_max)),
    )


@dataclass
class Trace:
    t: np.ndarray
    delta: np.ndarray
    cost: np.ndarray
    event: list[str]
    state: np.ndarray
    buffer_pos: np.ndarray
    epochs: list[EpochState]

    def to_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["t", "delta", "cost", "event", "channel_state", "buffer_pos"])
            for row in zip(self.t, self.delta, self.cost, self.event, self.state, self.buffer_pos):
                w.writerow([int(row[0]), int(row[1]), repr(float(row[2])), row[3], int(row[4]), int(row[5])])


def replay_trace(
    rule: ThresholdRule,
    channel: ChannelModel,
    curve: ErrorCurve,
    seed: int,
    horizon: int,
    initial_aoi: int | None = None,
) -> Trace:
    """Per-slot trace, built slot by slot with :func:`step_aoi`.

    ``event`` holds ``S``, ``D`` and ``A`` markers (joined with ``+`` when
    they coincide); ``channel_state`` and ``buffer_pos`` are those of the
    epoch ``[A_{i-1}, A_i)`` containing the slot.
    """
    raw, delta0 = simulate_epochs(rule, channel, horizon, seed, initial_aoi)
    epochs = [
        EpochState(i, int(s), int(q), int(f), int(c), int(b))
        for i, (s, q, f, c, b) in enumerate(
            zip(raw["submit"], raw["transmission"], raw["feedback"], raw["state"], raw["buffer"])
        )
    ]
    marks: dict[int, list[str]] = {}
    for ep in epochs:
        for slot, tag in ((ep.submit, "S"), (ep.delivery, "D"), (ep.ack, "A")):
            if slot < horizon:
                marks.setdefault(slot, []).append(tag)
    deliveries: dict[int, list[tuple[int, int, int]]] = {}
    for ep in epochs:
        deliveries.setdefault(ep.delivery, []).append((ep.delivery, ep.transmission, ep.buffer_pos))

    delta = np.empty(horizon, dtype=np.int64)
    state = np.empty(horizon, dtype=np.int64)
    bpos = np.empty(horizon, dtype=np.int64)
    i = 0
    prev = delta0 - 1
    for t in range(horizon):
        while i < len(epochs) - 1 and t >= epochs[i].ack:
            i += 1
        hit = deliveries.get(t, [])
        prev = delta0 if t == 0 and not hit else step_aoi(prev, t, hit)
        delta[t] = prev
        state[t] = epochs[i].state
        bpos[t] = epochs[i].buffer_pos
    events = ["+".join(sorted(marks.get(t, []), key="ASD".index)) for t in range(horizon)]
    return Trace(np.arange(horizon), delta, curve(delta), events, state, bpos, epochs)


# -- sweep ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    policy: str
    mean_cost: float
    normalized_cost: float
    stderr: float
    seeds: int
    analytic_cost: float
    design_beta: float


def _run_one(args) -> tuple[float, str, SimReport]:
    alpha, rule, channel, curve, horizon, warm_up, seed = args
    return alpha, rule.name, run_simulation(rule, channel, curve, horizon, warm_up, seed)


def run_sweep(
    alphas,
    curve: ErrorCurve,
    transmission,
    feedback,
    buffer_size: int,
    policies=tuple(PolicyKind),
    seeds=range(10),
    horizon: int = 10**6,
    warm_up: int | None = None,
    nu_max: int | None = None,
    tol: float | None = None,
    jobs: int = 1,
) -> list[SweepRow]:
    """Simulate every policy on the symmetric two-state channel for each ``alpha``.

    All policies share the same seeds (common random numbers). Costs are
    normalized by the IID baseline's mean cost at the same ``alpha``; the
    reported standard error is the across-seed standard error of the mean
    (the batch-means error when only one seed is given).
    """
    policies = [PolicyKind(p) for p in policies]
    seeds = list(seeds)
    tasks, meta = [], {}
    for alpha in alphas:
        channel = symmetric_two_state(alpha, transmission, feedback)
        for kind in policies:
            rule, beta = build_rule(kind, curve, channel, buffer_size, nu_max, tol)
            meta[(alpha, kind.value)] = (analytic_cost(rule, curve, channel, buffer_size), beta)
            tasks.extend((alpha, rule, channel, curve, horizon, warm_up, s) for s in seeds)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=1))
    else:
        results = [_run_one(t) for t in tasks]

    grouped: dict[tuple[float, str], list[SimReport]] = {}
    for alpha, name, rep in results:
        grouped.setdefault((alpha, name), []).append(rep)
    rows = []
    for alpha in alphas:
        base = grouped.get((alpha, PolicyKind.IID_BASELINE.value))
        base_mean = float(np.mean([r.mean_cost for r in base])) if base else math.nan
        for kind in policies:
            reps = sorted(grouped[(alpha, kind.value)], key=lambda r: r.seed)
            costs = np.array([r.mean_cost for r in reps])
            mean = float(costs.mean())
            se = float(costs.std(ddof=1) / math.sqrt(costs.size)) if costs.size > 1 else reps[0].stderr
            ana, beta = meta[(alpha, kind.value)]
            rows.append(SweepRow(float(alpha), kind.value, mean, mean / base_mean, se, costs.size, ana, beta))
    return rows


SWEEP_COLUMNS = ("alpha", "policy", "mean_cost", "normalized_cost", "stderr", "seeds")


def write_sweep_csv(rows, path, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r.alpha, r.policy, repr(r.mean_cost), repr(r.normalized_cost), repr(r.stderr), r.seeds])
