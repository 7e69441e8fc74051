"""Inference error as a function of the age of information.

The target is ``Y_t = X_t + N_t`` with ``X`` a Gaussian AR(p) source, and the
receiver predicts ``Y_t`` from a packet ``X_{t-delta}`` that is ``delta``
slots old. Under quadratic loss the best predictor is linear, so the error
curve ``h(delta)`` has a closed form in the autocovariance of ``X``.

Two source classes are accepted:

* stationary AR models (every root of ``1 - sum_k a_k z^k`` outside the unit
  circle), for which ``h(delta) = r(0) + var_N - r(delta)**2 / r(0)``;
* models with exactly one simple unit root and a stationary first
  difference. Their autocovariance does not exist, but the linear predictor's
  slope tends to one and the error tends to ``Var(X_t - X_{t-delta}) + var_N``.
  This is the limit of the stationary formula as the root approaches one, and
  is what a regression fitted on a long trajectory converges to.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import NonStationaryError
from .stats import batch_means

UNIT_ROOT_TOL = 1e-9

# Nonzero lags of the AR(63) source used in the experiments; others are zero.
REFERENCE_AR_COEFFICIENTS = {
    51: 0.015, 52: 0.015, 53: 0.03, 54: 0.065, 55: 0.145, 56: 0.15, 57: 0.16,
    58: 0.15, 59: 0.145, 60: 0.065, 61: 0.03, 62: 0.015, 63: 0.015,
}


def reflection_coefficients(coefficients) -> np.ndarray:
    """Partial autocorrelations of an AR polynomial by the Levinson step-down.

    Returns ``kappa_p, ..., kappa_1``. The model is stationary iff every
    ``|kappa| < 1``; the recursion stops at the first coefficient that fails.
    """
    phi = np.asarray(coefficients, dtype=float)
    out = []
    for k in range(phi.shape[0], 0, -1):
        kappa = phi[k - 1]
        out.append(kappa)
        if not abs(kappa) < 1.0:
            break
        head = phi[: k - 1]
        phi = (head + kappa * head[::-1]) / (1.0 - kappa * kappa)
    return np.array(out)


def _is_stationary(coefficients) -> bool:
    return bool(np.all(np.abs(reflection_coefficients(coefficients)) < 1.0))


def difference_coefficients(coefficients) -> np.ndarray:
    """AR coefficients of the first difference when the polynomial has a unit root.

    Writes ``1 - sum a_k z^k = (1 - z)(1 - sum b_k z^k)`` and returns ``b``.
    """
    a = np.asarray(coefficients, dtype=float)
    poly = np.concatenate(([1.0], -a))
    quotient = np.cumsum(poly)[:-1]
    return -quotient[1:]


@dataclass(frozen=True)
class ARModel:
    """Gaussian AR(p) source ``X_t = sum_k a_k X_{t-k} + W_t`` observed as ``Y_t = X_t + N_t``.

    Parameters
    ----------
    coefficients : sequence of float
        ``a_1, ..., a_p``; may be empty (white noise).
    noise_var : float
        Innovation variance of ``W``, strictly positive.
    obs_noise_var : float
        Variance of the target noise ``N``, nonnegative.
    """

    coefficients: tuple[float, ...]
    noise_var: float
    obs_noise_var: float = 0.0

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if not all(math.isfinite(a) for a in coeffs):
            raise ValueError("AR coefficients must be finite")
        if not (math.isfinite(self.noise_var) and self.noise_var > 0):
            raise ValueError(f"noise_var must be > 0, got {self.noise_var}")
        if not (math.isfinite(self.obs_noise_var) and self.obs_noise_var >= 0):
            raise ValueError(f"obs_noise_var must be >= 0, got {self.obs_noise_var}")
        if not (self.is_stationary or self.has_unit_root):
            kappa = reflection_coefficients(coeffs)
            raise NonStationaryError(
                f"AR({self.order}) model is not stationary: reflection coefficient "
                f"{kappa[-1]:.6g} at step {len(kappa)} has modulus >= 1 and the "
                f"polynomial has no single unit root (sum of coefficients "
                f"{sum(coeffs):.12g})"
            )

    @property
    def order(self) -> int:
        return len(self.coefficients)

    @property
    def is_stationary(self) -> bool:
        return _is_stationary(self.coefficients)

    @property
    def has_unit_root(self) -> bool:
        """True for a simple root at ``z = 1`` with a stationary first difference."""
        if self.order == 0 or abs(sum(self.coefficients) - 1.0) > UNIT_ROOT_TOL:
            return False
        return _is_stationary(difference_coefficients(self.coefficients))

    def persistence(self) -> float:
        """Largest inverse-root modulus of the stationary part (0 for white noise)."""
        a = np.asarray(self.coefficients)
        if not self.is_stationary:
            a = difference_coefficients(a)
        if a.size == 0 or not np.any(a):
            return 0.0
        roots = np.roots(np.concatenate((-a[::-1], [1.0])))
        return float(np.max(1.0 / np.abs(roots)))


def reference_ar_model(noise_var: float = 0.01, obs_noise_var: float = 0.001) -> ARModel:
    a = np.zeros(max(REFERENCE_AR_COEFFICIENTS))
    for lag, value in REFERENCE_AR_COEFFICIENTS.items():
        a[lag - 1] = value
    return ARModel(tuple(a), noise_var, obs_noise_var)


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    """Tabulated inference error ``h(1..delta_max)``, held at ``h(delta_max)`` beyond.

    ``stderr`` is populated only for curves estimated from data.
    """

    values: np.ndarray
    stderr: np.ndarray | None = None
    bound: float = field(init=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size < 1:
            raise ValueError("error curve needs delta_max >= 1")
        if not np.all(np.isfinite(values)):
            raise ValueError("error curve entries must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.stderr is not None:
            se = np.array(self.stderr, dtype=float).ravel()
            if se.shape != values.shape:
                raise ValueError("stderr must match values")
            se.setflags(write=False)
            object.__setattr__(self, "stderr", se)
        # strict bound M with |h| < M
        object.__setattr__(self, "bound", float(np.max(np.abs(values))) * (1 + 1e-12) + 1e-300)
        cum = np.concatenate(([0.0], np.cumsum(values)))
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def constant(cls, value: float, delta_max: int = 1) -> "ErrorCurve":
        return cls(np.full(delta_max, float(value)))

    @property
    def delta_max(self) -> int:
        return self.values.shape[0]

    @property
    def last(self) -> float:
        return float(self.values[-1])

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())

    def is_nondecreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))

    def __call__(self, delta):
        """``h(delta)`` for integer ``delta >= 1`` (scalar or array)."""
        d = np.asarray(delta)
        if np.any(d < 1):
            raise ValueError("AoI must be >= 1")
        out = self.values[np.minimum(d, self.delta_max) - 1]
        return float(out) if out.ndim == 0 else out

    def cumulative(self, n):
        """``sum_{j=1}^{n} h(j)`` for integer ``n >= 0``, with hold-last extension."""
        n = np.asarray(n)
        dm = self.delta_max
        inside = self._cum[np.minimum(n, dm)]
        out = np.where(n <= dm, inside, self._cum[dm] + (n - dm) * self.values[-1])
        return float(out) if out.ndim == 0 else out

    def window_sum(self, start, length):
        """``sum_{k=0}^{length-1} h(start + k)``."""
        start = np.asarray(start)
        return self.cumulative(start + np.asarray(length) - 1) - self.cumulative(start - 1)

    def to_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            cols = ["delta", "h"] + (["stderr"] if self.stderr is not None else [])
            w.writerow(cols)
            for i, v in enumerate(self.values):
                row = [i + 1, repr(float(v))]
                if self.stderr is not None:
                    row.append(repr(float(self.stderr[i])))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ErrorCurve":
        rows = [r for r in Path(path).read_text().splitlines() if r and not r.startswith("#")]
        reader = csv.DictReader(rows)
        deltas, values = [], []
        for row in reader:
            deltas.append(int(row["delta"]))
            values.append(float(row["h"]))
        if deltas != list(range(1, len(deltas) + 1)):
            raise ValueError(f"{path}: delta column must be 1..n without gaps")
        return cls(np.array(values))


def _yule_walker_autocovariance(a: np.ndarray, noise_var: float, max_lag: int) -> np.ndarray:
    p = a.shape[0]
    m = np.eye(p + 1)
    for k in range(p + 1):
        for j in range(1, p + 1):
            m[k, abs(k - j)] -= a[j - 1]
    rhs = np.zeros(p + 1)
    rhs[0] = noise_var
    try:
        r = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise NonStationaryError(f"singular Yule-Walker system for AR({p})") from exc
    if max_lag <= p:
        return r[: max_lag + 1]
    out = np.empty(max_lag + 1)
    out[: p + 1] = r
    rev = a[::-1]
    for k in range(p + 1, max_lag + 1):
        out[k] = rev @ out[k - p:k]
    return out


def ar_autocovariance(model: ARModel, max_lag: int) -> np.ndarray:
    """Stationary autocovariance ``r(0..max_lag)`` of an AR model.

    Solves the Yule-Walker equations for lags ``0..p`` and extends by the AR
    recursion. Unit-root models have no autocovariance and are rejected.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if not model.is_stationary:
        raise NonStationaryError(
            f"AR({model.order}) model has a unit root; the autocovariance is undefined "
            "(use inference_error_curve, which handles the integrated case)"
        )
    r = _yule_walker_autocovariance(np.asarray(model.coefficients), model.noise_var, max_lag)
    if not r[0] > 0:
        raise NonStationaryError("degenerate source: r(0) <= 0")
    return r


def difference_variogram(model: ARModel, max_lag: int) -> np.ndarray:
    """``Var(X_t - X_{t-d})`` for ``d = 0..max_lag`` of a unit-root model."""
    b = difference_coefficients(model.coefficients)
    ru = _yule_walker_autocovariance(b, model.noise_var, max_lag)
    # V(d+1) = V(d) + r(0) + 2 * sum_{m=1}^{d} r(m)
    increments = ru[0] + 2.0 * np.concatenate(([0.0], np.cumsum(ru[1:max_lag])))
    return np.concatenate(([0.0], np.cumsum(increments)))


def inference_error_curve(model: ARModel, delta_max: int = 500) -> ErrorCurve:
    """Quadratic-loss LMMSE error of predicting ``Y_t`` from ``X_{t-delta}``, ``delta = 1..delta_max``."""
    if delta_max < 1:
        raise ValueError("delta_max must be >= 1")
    if model.is_stationary:
        r = ar_autocovariance(model, delta_max)
        h = r[0] + model.obs_noise_var - r[1:] ** 2 / r[0]
    else:
        h = difference_variogram(model, delta_max)[1:] + model.obs_noise_var
    return ErrorCurve(h)


def simulate_ar(model: ARModel, n: int, rng: np.random.Generator, burn_in: int | None = None):
    """Simulate ``(X, Y)`` trajectories of length ``n`` after discarding ``burn_in`` samples."""
    if burn_in is None:
        rho = model.persistence()
        mem = 0 if rho == 0 else int(math.ceil(20.0 / -math.log(rho)))
        burn_in = max(10 * model.order, mem, 100)
    total = n + burn_in
    w = rng.normal(0.0, math.sqrt(model.noise_var), total)
    x = lfilter([1.0], np.concatenate(([1.0], -np.asarray(model.coefficients))), w)[burn_in:]
    y = x + rng.normal(0.0, math.sqrt(model.obs_noise_var), n) if model.obs_noise_var > 0 else x.copy()
    return x, y


def empirical_error_curve(
    model: ARModel,
    delta_max: int,
    n_samples: int,
    seed=None,
    n_batches: int = 50,
) -> ErrorCurve:
    """Regression estimate of the error curve from a simulated trajectory.

    For every lag a scalar least-squares predictor of ``Y_t`` from
    ``X_{t-delta}`` is fitted on the same ``n_samples`` target times; the
    returned curve carries the in-sample MSE and a batch-means standard error.
    """
    if n_samples < n_batches * 2:
        raise ValueError("n_samples too small for batch-means standard errors")
    rng = np.random.default_rng(seed)
    x, y = simulate_ar(model, n_samples + delta_max, rng)
    target = y[delta_max:]
    mse = np.empty(delta_max)
    se = np.empty(delta_max)
    for d in range(1, delta_max + 1):
        pred = x[delta_max - d: len(x) - d]
        slope = (pred @ target) / (pred @ pred)
        sq = (target - slope * pred) ** 2
        mse[d - 1] = sq.mean()
        se[d - 1] = batch_means(sq, n_batches)[1]
    return ErrorCurve(mse, stderr=se)
