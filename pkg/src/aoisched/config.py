"""Experiment configuration: YAML in, validated dataclasses out.

Layout (every section except the error source is optional)::

    ar_model:                 # or h_table: [h(1), h(2), ...]
      coefficients: {51: 0.015, ...}   # sparse {lag: a_lag} or dense list
      noise_var: 0.01
      obs_noise_var: 0.001
    channel:
      alpha: 0.2              # or transition: [[...], [...]]
      transmission: [[[3, 0.45], [4, 0.25]], ...]   # (delay, prob) pairs per state
      feedback: [[[2, 1.0]], ...]
    policy: {buffer_size: 64, delta_max: 500, nu_max: null, tol: null}
    simulation: {horizon: 1000000, warm_up: null, seeds: 10, alphas: [...], jobs: 1}
    oracle: {wait_cap: null, aoi_cap: null, tol: 1.0e-10, max_iters: 1000000, h_tol: 1.0e-6}
    output: {dir: out}

Omitted delay PMFs default to the two-state experiment channel.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .channel import REFERENCE_FEEDBACK, REFERENCE_TRANSMISSION, ChannelModel, DelayPMF, symmetric_two_state
from .error_model import ARModel, ErrorCurve, inference_error_curve
from .errors import AoischedError, ConfigError

_POLICIES = ("optimal", "iid_baseline", "zero_wait")


def _pairs(raw, path):
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError(path, "expected a non-empty list of [delay, probability] pairs")
    out = []
    for j, item in enumerate(raw):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(f"{path}[{j}]", "expected [delay, probability]")
        d, p = item
        if isinstance(d, bool) or not isinstance(d, (int, float)) or d != int(d):
            raise ConfigError(f"{path}[{j}]", f"delay must be an integer, got {d!r}")
        out.append((int(d), _number(p, f"{path}[{j}]")))
    return tuple(out)


def _number(x, path) -> float:
    # YAML 1.1 reads "1e-10" (no dot) as a string
    if isinstance(x, str):
        try:
            x = float(x)
        except ValueError:
            pass
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(path, f"expected a finite number, got {x!r}")
    return float(x)


def _int(x, path, lo=None) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(path, f"expected an integer, got {x!r}")
    if lo is not None and x < lo:
        raise ConfigError(path, f"must be >= {lo}, got {x}")
    return x


def _opt(x, conv, path, **kw):
    return None if x is None else conv(x, path, **kw)


def _section(raw: dict, name: str, known: set[str]) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected a mapping")
    extra = set(sec) - known
    if extra:
        raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown field")
    return sec


@dataclass(frozen=True)
class ARSection:
    coefficients: tuple[float, ...]
    noise_var: float
    obs_noise_var: float = 0.0

    def to_dict(self) -> dict:
        a = self.coefficients
        nz = {i + 1: v for i, v in enumerate(a) if v != 0.0}
        d = {"coefficients": nz if 2 * len(nz) < len(a) else list(a)}
        # sparse form loses trailing zero lags unless the order is explicit
        if isinstance(d["coefficients"], dict) and max(nz, default=0) < len(a):
            d["order"] = len(a)
        d["noise_var"] = self.noise_var
        d["obs_noise_var"] = self.obs_noise_var
        return d


@dataclass(frozen=True)
class ChannelSection:
    transmission: tuple[tuple[tuple[int, float], ...], ...]
    feedback: tuple[tuple[tuple[int, float], ...], ...]
    alpha: float | None = None
    transition: tuple[tuple[float, ...], ...] | None = None

    def build(self, alpha: float | None = None) -> ChannelModel:
        q = tuple(DelayPMF.from_pairs(p) for p in self.transmission)
        r = tuple(DelayPMF.from_pairs(p) for p in self.feedback)
        alpha = self.alpha if alpha is None else alpha
        if alpha is not None:
            return symmetric_two_state(alpha, q, r)
        if self.transition is None:
            raise ConfigError("channel", "needs alpha or transition")
        return ChannelModel(np.array(self.transition), q, r)

    def to_dict(self) -> dict:
        d = {
            "transmission": [[list(p) for p in s] for s in self.transmission],
            "feedback": [[list(p) for p in s] for s in self.feedback],
        }
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.transition is not None:
            d["transition"] = [list(r) for r in self.transition]
        return d


@dataclass(frozen=True)
class PolicySection:
    buffer_size: int = 64
    delta_max: int = 500
    nu_max: int | None = None
    tol: float | None = None


@dataclass(frozen=True)
class SimulationSection:
    horizon: int = 10**6
    warm_up: int | None = None
    seeds: tuple[int, ...] = tuple(range(10))
    alphas: tuple[float, ...] = tuple(round(0.1 * k, 1) for k in range(1, 11))
    jobs: int = 1
    policies: tuple[str, ...] = _POLICIES


@dataclass(frozen=True)
class OracleSection:
    wait_cap: int | None = None
    aoi_cap: int | None = None
    tol: float = 1e-10
    max_iters: int = 10**6
    h_tol: float = 1e-6


@dataclass(frozen=True)
class ExperimentConfig:
    ar_model: ARSection | None
    h_table: tuple[float, ...] | None
    channel: ChannelSection
    policy: PolicySection = field(default_factory=PolicySection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    output_dir: str = "out"

    # construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, raw) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a mapping at the top level")
        known = {"ar_model", "h_table", "channel", "policy", "simulation", "oracle", "output"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown section")
        has_ar, has_h = raw.get("ar_model") is not None, raw.get("h_table") is not None
        if has_ar == has_h:
            raise ConfigError("ar_model|h_table", "exactly one error source is required" if not has_ar else "give only one of ar_model and h_table")

        ar = h = None
        if has_ar:
            sec = _section(raw, "ar_model", {"coefficients", "order", "noise_var", "obs_noise_var"})
            ar = _parse_ar(sec)
        else:
            vals = raw["h_table"]
            if not isinstance(vals, (list, tuple)) or not vals:
                raise ConfigError("h_table", "expected a non-empty list of numbers")
            h = tuple(_number(v, f"h_table[{i}]") for i, v in enumerate(vals))

        ch = _parse_channel(_section(raw, "channel", {"alpha", "transition", "transmission", "feedback"}))

        sec = _section(raw, "policy", {f.name for f in dataclasses.fields(PolicySection)})
        pol = PolicySection(
            buffer_size=_int(sec.get("buffer_size", 64), "policy.buffer_size", 1),
            delta_max=_int(sec.get("delta_max", 500), "policy.delta_max", 1),
            nu_max=_opt(sec.get("nu_max"), _int, "policy.nu_max", lo=1),
            tol=_opt(sec.get("tol"), _number, "policy.tol"),
        )
        if pol.tol is not None and pol.tol <= 0:
            raise ConfigError("policy.tol", "must be > 0")

        sec = _section(raw, "simulation", {f.name for f in dataclasses.fields(SimulationSection)})
        sim = _parse_simulation(sec)

        sec = _section(raw, "oracle", {f.name for f in dataclasses.fields(OracleSection)})
        orc = OracleSection(
            wait_cap=_opt(sec.get("wait_cap"), _int, "oracle.wait_cap", lo=0),
            aoi_cap=_opt(sec.get("aoi_cap"), _int, "oracle.aoi_cap", lo=1),
            tol=_number(sec.get("tol", 1e-10), "oracle.tol"),
            max_iters=_int(sec.get("max_iters", 10**6), "oracle.max_iters", 1),
            h_tol=_number(sec.get("h_tol", 1e-6), "oracle.h_tol"),
        )
        if orc.tol <= 0:
            raise ConfigError("oracle.tol", "must be > 0")

        out = _section(raw, "output", {"dir"})
        out_dir = out.get("dir", "out")
        if not isinstance(out_dir, str):
            raise ConfigError("output.dir", "expected a path string")

        cfg = cls(ar, h, ch, pol, sim, orc, out_dir)
        cfg._validate_models()
        return cfg

    def _validate_models(self) -> None:
        if self.ar_model is not None:
            try:
                self.source_model()
            except (ValueError, AoischedError) as exc:
                raise ConfigError("ar_model", str(exc)) from exc
        else:
            try:
                ErrorCurve(np.array(self.h_table))
            except (ValueError, AoischedError) as exc:
                raise ConfigError("h_table", str(exc)) from exc
        for name in ("transmission", "feedback"):
            for i, pairs in enumerate(getattr(self.channel, name)):
                try:
                    DelayPMF.from_pairs(pairs)
                except (ValueError, AoischedError) as exc:
                    raise ConfigError(f"channel.{name}[{i}]", str(exc)) from exc
        try:
            if self.channel.alpha is not None or self.channel.transition is not None:
                self.channel.build()
            if len(self.channel.transmission) == 2:
                for a in self.simulation.alphas:
                    self.channel.build(a)
        except (ValueError, AoischedError) as exc:
            raise ConfigError("channel", str(exc)) from exc

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<yaml>", str(exc)) from exc
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {}
        if self.ar_model is not None:
            d["ar_model"] = self.ar_model.to_dict()
        else:
            d["h_table"] = list(self.h_table)
        d["channel"] = self.channel.to_dict()
        d["policy"] = dataclasses.asdict(self.policy)
        sim = dataclasses.asdict(self.simulation)
        d["simulation"] = {k: list(v) if isinstance(v, tuple) else v for k, v in sim.items()}
        d["oracle"] = dataclasses.asdict(self.oracle)
        d["output"] = {"dir": self.output_dir}
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def _digest(self, keys) -> str:
        d = {k: v for k, v in self.to_dict().items() if k in keys}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def config_hash(self) -> str:
        """Hash of everything that affects results (output paths excluded)."""
        return self._digest({"ar_model", "h_table", "channel", "policy", "simulation", "oracle"})

    def model_hash(self) -> str:
        """Hash of the inputs a solved policy depends on."""
        return self._digest({"ar_model", "h_table", "channel", "policy"})

    # model builders -----------------------------------------------------

    def source_model(self) -> ARModel:
        a = self.ar_model
        return ARModel(a.coefficients, a.noise_var, a.obs_noise_var)

    def error_curve(self) -> ErrorCurve:
        if self.ar_model is not None:
            return inference_error_curve(self.source_model(), self.policy.delta_max)
        return ErrorCurve(np.array(self.h_table))

    def channel_model(self, alpha: float | None = None) -> ChannelModel:
        return self.channel.build(alpha)


def _parse_ar(sec: dict) -> ARSection:
    if "coefficients" not in sec:
        raise ConfigError("ar_model.coefficients", "required")
    if "noise_var" not in sec:
        raise ConfigError("ar_model.noise_var", "required")
    raw = sec["coefficients"]
    if isinstance(raw, dict):
        lags = {}
        for k, v in raw.items():
            lag = _int(k, f"ar_model.coefficients.{k}", 1)
            lags[lag] = _number(v, f"ar_model.coefficients.{k}")
        order = _int(sec.get("order", max(lags, default=0)), "ar_model.order", 0)
        if lags and order < max(lags):
            raise ConfigError("ar_model.order", f"smaller than the largest lag {max(lags)}")
        a = [0.0] * order
        for lag, v in lags.items():
            a[lag - 1] = v
    elif isinstance(raw, (list, tuple)):
        if "order" in sec:
            raise ConfigError("ar_model.order", "only used with sparse {lag: value} coefficients")
        a = [_number(v, f"ar_model.coefficients[{i}]") for i, v in enumerate(raw)]
    else:
        raise ConfigError("ar_model.coefficients", "expected a list or a {lag: value} mapping")
    return ARSection(
        tuple(a),
        _number(sec["noise_var"], "ar_model.noise_var"),
        _number(sec.get("obs_noise_var", 0.0), "ar_model.obs_noise_var"),
    )


def _parse_channel(sec: dict) -> ChannelSection:
    alpha = _opt(sec.get("alpha"), _number, "channel.alpha")
    trans = sec.get("transition")
    if trans is not None:
        if not isinstance(trans, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in trans):
            raise ConfigError("channel.transition", "expected a nested list (matrix)")
        trans = tuple(tuple(_number(x, f"channel.transition[{i}][{j}]") for j, x in enumerate(r)) for i, r in enumerate(trans))
    if alpha is not None and trans is not None:
        raise ConfigError("channel.alpha", "give either alpha or transition, not both")
    q = sec.get("transmission", [list(p) for p in REFERENCE_TRANSMISSION])
    r = sec.get("feedback", [list(p) for p in REFERENCE_FEEDBACK])
    for name, val in (("transmission", q), ("feedback", r)):
        if not isinstance(val, (list, tuple)) or not val:
            raise ConfigError(f"channel.{name}", "expected one pair list per state")
    q = tuple(_pairs(p, f"channel.transmission[{i}]") for i, p in enumerate(q))
    r = tuple(_pairs(p, f"channel.feedback[{i}]") for i, p in enumerate(r))
    if len(q) != len(r):
        raise ConfigError("channel.feedback", f"{len(r)} states but transmission has {len(q)}")
    if alpha is not None and len(q) != 2:
        raise ConfigError("channel.alpha", "alpha shorthand needs exactly two states")
    if trans is not None and len(trans) != len(q):
        raise ConfigError("channel.transition", f"{len(trans)} rows but {len(q)} delay PMFs")
    return ChannelSection(q, r, alpha, trans)


def _parse_simulation(sec: dict) -> SimulationSection:
    horizon = _int(sec.get("horizon", 10**6), "simulation.horizon", 2)
    warm_up = _opt(sec.get("warm_up"), _int, "simulation.warm_up", lo=0)
    if warm_up is not None and warm_up >= horizon:
        raise ConfigError("simulation.warm_up", f"must be below horizon {horizon}")
    seeds = sec.get("seeds", 10)
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = tuple(range(_int(seeds, "simulation.seeds", 1)))
    elif isinstance(seeds, (list, tuple)) and seeds:
        seeds = tuple(_int(s, f"simulation.seeds[{i}]", 0) for i, s in enumerate(seeds))
    else:
        raise ConfigError("simulation.seeds", "expected a seed count or a non-empty list")
    alphas = sec.get("alphas", list(SimulationSection.alphas))
    if not isinstance(alphas, (list, tuple)):
        raise ConfigError("simulation.alphas", "expected a list")
    alphas = tuple(_number(a, f"simulation.alphas[{i}]") for i, a in enumerate(alphas))
    for i, a in enumerate(alphas):
        if not 0 < a < 2:
            raise ConfigError(f"simulation.alphas[{i}]", f"must lie in (0, 2), got {a}")
    policies = sec.get("policies", list(_POLICIES))
    if not isinstance(policies, (list, tuple)) or not policies:
        raise ConfigError("simulation.policies", "expected a non-empty list")
    for i, p in enumerate(policies):
        if p not in _POLICIES:
            raise ConfigError(f"simulation.policies[{i}]", f"unknown policy {p!r}; choose from {', '.join(_POLICIES)}")
    return SimulationSection(
        horizon=horizon,
        warm_up=warm_up,
        seeds=seeds,
        alphas=alphas,
        jobs=_int(sec.get("jobs", 1), "simulation.jobs", 1),
        policies=tuple(policies),
    )
