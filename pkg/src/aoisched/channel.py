"""Two-way Markov-modulated delay channel.

The channel state is fixed within an epoch and makes one Markov transition
per ACK. Each state carries a transmission-delay PMF and a feedback-delay
PMF over integer slots (at least one slot each).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import ChannelError

PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DelayPMF:
    """Finite-support delay distribution in slots."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support)
        probs = np.asarray(self.probs, dtype=float)
        if support.ndim != 1 or support.shape != probs.shape or support.size == 0:
            raise ChannelError("delay PMF needs matching non-empty support and probabilities")
        if not np.all(np.equal(np.mod(support, 1), 0)):
            raise ChannelError("delay support must be integer slots")
        support = support.astype(np.int64)
        if support.min() < 1:
            raise ChannelError(f"delays are at least one slot, got {support.min()}")
        if np.unique(support).size != support.size:
            raise ChannelError("duplicate delay values in PMF support")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOL:
            raise ChannelError(f"delay probabilities must be >= 0 and sum to 1 (sum={probs.sum()!r})")
        order = np.argsort(support)
        support, probs = support[order], probs[order]
        support.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", np.cumsum(probs))

    @classmethod
    def from_pairs(cls, pairs) -> "DelayPMF":
        pairs = list(pairs)
        return cls(np.array([v for v, _ in pairs]), np.array([p for _, p in pairs], dtype=float))

    @classmethod
    def deterministic(cls, value: int) -> "DelayPMF":
        return cls(np.array([value]), np.array([1.0]))

    def pairs(self) -> list[tuple[int, float]]:
        return [(int(v), float(p)) for v, p in zip(self.support, self.probs)]

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    @property
    def var(self) -> float:
        return float(((self.support - self.mean) ** 2) @ self.probs)

    @property
    def max(self) -> int:
        return int(self.support[-1])

    @property
    def min(self) -> int:
        return int(self.support[0])

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        idx = np.minimum(np.searchsorted(self._cdf, u, side="right"), self.support.size - 1)
        out = self.support[idx]
        return int(out) if size is None else out

    def __eq__(self, other):
        if not isinstance(other, DelayPMF):
            return NotImplemented
        return self.pairs() == other.pairs()


def _period(adj: np.ndarray) -> int:
    """Period of an irreducible chain: gcd of level[u] + 1 - level[v] over edges."""
    n = adj.shape[0]
    level = [-1] * n
    level[0] = 0
    queue = [0]
    for u in queue:
        for v in np.flatnonzero(adj[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))
    diffs = [level[u] + 1 - level[v] for u, v in zip(*np.nonzero(adj))]
    return reduce(math.gcd, (abs(d) for d in diffs), 0)


def _irreducible(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    reach = adj | np.eye(n, dtype=bool)
    for _ in range(max(1, math.ceil(math.log2(n))) + 1):
        reach = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
    return bool(reach.all())


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """Finite-state ergodic channel.

    Parameters
    ----------
    transition : (C, C) array_like
        Row-stochastic matrix; ``transition[i, j]`` is the probability of
        moving from state ``i`` to ``j`` at an ACK.
    transmission : sequence of DelayPMF
        Transmission-delay PMF for each state.
    feedback : sequence of DelayPMF
        Feedback-delay PMF for each state.

    States are indexed from 0 internally.
    """

    transition: np.ndarray
    transmission: tuple[DelayPMF, ...]
    feedback: tuple[DelayPMF, ...]

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
            raise ChannelError("transition matrix must be square and non-empty")
        c = p.shape[0]
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > PROB_TOL):
            raise ChannelError("transition matrix rows must be nonnegative and sum to 1")
        q, r = tuple(self.transmission), tuple(self.feedback)
        if len(q) != c or len(r) != c:
            raise ChannelError(f"need {c} transmission and feedback PMFs, got {len(q)} and {len(r)}")
        adj = p > 0
        if not _irreducible(adj):
            raise ChannelError("channel chain is not irreducible")
        if _period(adj) != 1:
            raise ChannelError(f"channel chain is periodic (period {_period(adj)})")
        p.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "transmission", q)
        object.__setattr__(self, "feedback", r)
        object.__setattr__(self, "_row_cdf", np.cumsum(p, axis=1))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def max_transmission(self) -> int:
        return max(pmf.max for pmf in self.transmission)

    @property
    def max_feedback(self) -> int:
        return max(pmf.max for pmf in self.feedback)

    def _check_state(self, c: int) -> None:
        if not 0 <= c < self.n_states:
            raise IndexError(f"channel state {c} out of range 0..{self.n_states - 1}")

    def stationary_distribution(self) -> np.ndarray:
        return stationary_distribution(self)

    def next_state_distribution(self, c: int) -> np.ndarray:
        return next_state_distribution(self, c)

    def sample_next_state(self, c: int, rng: np.random.Generator) -> int:
        self._check_state(c)
        return min(int(np.searchsorted(self._row_cdf[c], rng.random(), side="right")), self.n_states - 1)

    def iid_surrogate(self) -> "ChannelModel":
        """Same delays, but the next state is drawn from the stationary law regardless of history."""
        pi = self.stationary_distribution()
        rows = np.tile(pi, (self.n_states, 1))
        return ChannelModel(rows, self.transmission, self.feedback)

    def __eq__(self, other):
        if not isinstance(other, ChannelModel):
            return NotImplemented
        return (
            np.array_equal(self.transition, other.transition)
            and self.transmission == other.transmission
            and self.feedback == other.feedback
        )


def stationary_distribution(model: ChannelModel) -> np.ndarray:
    """Unique ``pi`` with ``pi P = pi`` and ``sum(pi) = 1``.

    Grassmann-Taksar-Heyman state reduction; subtraction-free, so entries
    stay positive and symmetric chains give exactly uniform vectors.
    """
    a = np.array(model.transition, dtype=float)
    n = a.shape[0]
    for k in range(n - 1, 0, -1):
        s = a[k, :k].sum()
        a[:k, k] /= s
        a[:k, :k] += np.outer(a[:k, k], a[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ a[:k, k]
    return pi / pi.sum()


def next_state_distribution(model: ChannelModel, c: int) -> np.ndarray:
    model._check_state(c)
    return model.transition[c].copy()


def sample_epoch_delays(model: ChannelModel, c_next: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw ``(T, F)`` for an epoch spent in state ``c_next``."""
    model._check_state(c_next)
    return model.transmission[c_next].sample(rng), model.feedback[c_next].sample(rng)


def symmetric_two_state(alpha: float, transmission, feedback) -> ChannelModel:
    """Two states with ``p01 = p10 = alpha / 2``."""
    if not 0 < alpha < 2:
        raise ChannelError(f"alpha must lie in (0, 2), got {alpha}")
    p = alpha / 2.0
    return ChannelModel(np.array([[1 - p, p], [p, 1 - p]]), transmission, feedback)


REFERENCE_TRANSMISSION = (
    ((3, 0.45), (4, 0.25), (5, 0.15), (6, 0.15)),
    ((18, 0.15), (19, 0.15), (20, 0.4), (21, 0.3)),
)
REFERENCE_FEEDBACK = (((2, 1.0),), ((6, 1.0),))


def reference_channel(alpha: float) -> ChannelModel:
    """The two-state experiment channel: a fast state and a slow state."""
    return symmetric_two_state(
        alpha,
        tuple(DelayPMF.from_pairs(p) for p in REFERENCE_TRANSMISSION),
        tuple(DelayPMF.from_pairs(p) for p in REFERENCE_FEEDBACK),
    )
