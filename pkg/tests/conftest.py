import os

import numpy as np
import pytest
from hypothesis import settings

from aoisched import ChannelModel, DelayPMF, ErrorCurve, inference_error_curve, reference_ar_model, reference_channel

settings.register_profile("default", max_examples=40, deadline=None)
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_pmf(rng, max_delay=5, max_support=3):
    k = int(rng.integers(1, max_support + 1))
    support = np.sort(rng.choice(np.arange(1, max_delay + 1), size=k, replace=False))
    return DelayPMF(support, rng.dirichlet(np.ones(k)))


def random_channel(rng, n_states=None, max_delay=5):
    """Small ergodic channel; a positive mixing floor keeps it irreducible and aperiodic."""
    c = int(rng.integers(1, 4)) if n_states is None else n_states
    p = rng.dirichlet(np.ones(c), size=c) * 0.8 + 0.2 / c
    p /= p.sum(axis=1, keepdims=True)
    return ChannelModel(
        p,
        tuple(random_pmf(rng, max_delay) for _ in range(c)),
        tuple(random_pmf(rng, max_delay) for _ in range(c)),
    )


def random_curve(rng, delta_max=15):
    """Bounded non-monotone curve whose tail is its maximum (waiting into the tail never pays)."""
    h = rng.random(delta_max)
    h[-1] = h.max()
    return ErrorCurve(h)


def unit_channel():
    one = DelayPMF.deterministic(1)
    return ChannelModel(np.array([[1.0]]), (one,), (one,))


@pytest.fixture(scope="session")
def reference_curve():
    return inference_error_curve(reference_ar_model(), 500)


@pytest.fixture
def renewal():
    """One state, unit delays, h(delta) = delta."""
    return ErrorCurve(np.arange(1.0, 11.0)), unit_channel()


@pytest.fixture
def two_state_linear():
    """From state 0 the next state is (0.9, 0.1); Q_0 = 3, Q_1 = 20; h(delta) = delta."""
    ch = ChannelModel(
        np.array([[0.9, 0.1], [0.1, 0.9]]),
        (DelayPMF.deterministic(3), DelayPMF.deterministic(20)),
        (DelayPMF.deterministic(2), DelayPMF.deterministic(6)),
    )
    return ErrorCurve(np.arange(1.0, 201.0)), ch


__all__ = ["random_channel", "random_curve", "random_pmf", "unit_channel", "reference_channel"]


# -- acceptance verdict lines ----------------------------------------------

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for the terminal summary, then assert."""

    def record(n: int, ok: bool, detail: str):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
