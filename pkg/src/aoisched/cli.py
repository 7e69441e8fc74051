"""``aoisched`` command-line front end.

Subcommands: error-curve, solve, simulate, sweep, oracle-check. Every CSV
starts with a ``# config_hash=... seed=...`` comment line.

Exit codes: 0 success, 1 validation error, 2 solver error, 3 oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .error_model import empirical_error_curve
from .errors import (
    AoischedError,
    ArtifactMismatchError,
    BracketError,
    ChannelError,
    ConfigError,
    EnumerationLimitError,
    NonStationaryError,
    NotConvergedError,
    WaitingCapExceeded,
)
from .oracle import TruncatedSMDP, greedy_matches_threshold, relative_value_iteration
from .policy import PolicyContext, ThresholdPolicy
from .simulator import PolicyKind, ThresholdRule, analytic_cost, run_simulation, run_sweep, write_sweep_csv

log = logging.getLogger("aoisched")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_MISMATCH = 0, 1, 2, 3
POLICY_FILE = "policy.json"
ENUM_PRINT_LIMIT = 16


def _header(cfg: ExperimentConfig, seed) -> str:
    return f"config_hash={cfg.config_hash()} seed={seed}"


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(args, cfg: ExperimentConfig) -> tuple[int, ...]:
    return (args.seed,) if args.seed is not None else cfg.simulation.seeds


def _require_channel(cfg: ExperimentConfig):
    if cfg.channel.alpha is None and cfg.channel.transition is None:
        raise ConfigError("channel", "this command needs channel.alpha or channel.transition")
    return cfg.channel_model()


# commands -----------------------------------------------------------------


def cmd_error_curve(cfg: ExperimentConfig, args) -> int:
    curve = cfg.error_curve()
    seed = args.seed if args.seed is not None else 0
    if args.empirical:
        if cfg.ar_model is None:
            raise ConfigError("ar_model", "--empirical needs an AR source")
        emp = empirical_error_curve(cfg.source_model(), curve.delta_max, args.empirical, seed=seed)
    path = _out_dir(args, cfg) / "error_curve.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_header(cfg, seed)}\n")
        w = csv.writer(fh)
        w.writerow(["delta", "h"] + (["h_empirical", "stderr"] if args.empirical else []))
        for d in range(1, curve.delta_max + 1):
            row = [d, repr(float(curve.values[d - 1]))]
            if args.empirical:
                row += [repr(float(emp.values[d - 1])), repr(float(emp.stderr[d - 1]))]
            w.writerow(row)
    print(f"wrote {curve.delta_max} rows to {path}")
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, args) -> int:
    curve = cfg.error_curve()
    channel = _require_channel(cfg)
    kind = PolicyKind(args.policy)
    if kind is PolicyKind.ZERO_WAIT:
        raise ConfigError("--policy", "zero_wait has nothing to solve")
    design = channel if kind is PolicyKind.OPTIMAL else channel.iid_surrogate()
    ctx = PolicyContext(curve, design, cfg.policy.buffer_size, cfg.policy.nu_max)
    search = ctx.optimize_mapping(cfg.policy.tol)
    policy = ThresholdPolicy(search.mapping, search.h_opt, ctx)
    rule = ThresholdRule.from_policy(kind.value, policy)
    out = _out_dir(args, cfg)
    header = _header(cfg, "none")

    with open(out / "psi.csv", "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["state", "buffer_pos"])
        for c, b in enumerate(search.mapping.positions):
            w.writerow([c, b])

    waits = policy.waits(ctx.gamma.shape[1])
    with open(out / "index.csv", "w", newline="") as fh:
        fh.write(f"# {header} beta={search.h_opt!r}\n")
        w = csv.writer(fh)
        w.writerow(["delta", "state", "gamma", "waiting_time"])
        for c in range(ctx.n_states):
            for d in range(1, ctx.gamma.shape[1] + 1):
                wt = waits[c][d - 1]
                w.writerow([d, c, repr(float(ctx.gamma[c, d - 1])), int(wt) if math.isfinite(wt) else "inf"])

    artifact = {
        "model_hash": cfg.model_hash(),
        "config_hash": cfg.config_hash(),
        "policy": kind.value,
        "buffer_size": cfg.policy.buffer_size,
        "mapping": list(search.mapping.positions),
        "beta": search.h_opt,
        "gamma": ctx.gamma.tolist(),
        "gamma_tail": ctx.e_tail.tolist(),
    }
    (out / POLICY_FILE).write_text(json.dumps(artifact))

    print(f"policy: {kind.value}")
    print(f"psi*: {list(search.mapping.positions)}")
    print(f"beta = h_opt = {search.h_opt:.12g}")
    if kind is PolicyKind.IID_BASELINE:
        print(f"average cost on the true channel: {analytic_cost(rule, curve, channel, cfg.policy.buffer_size):.12g}")
    if len(search.grid) <= ENUM_PRINT_LIMIT:
        for m, b in zip(search.grid, search.betas):
            print(f"  psi={list(map(int, m))} beta={b:.12g}")
    print(f"wrote psi.csv, index.csv, {POLICY_FILE} to {out}")
    return EXIT_OK


def load_rule(path, cfg: ExperimentConfig) -> ThresholdRule:
    art = json.loads(Path(path).read_text())
    if art.get("model_hash") != cfg.model_hash():
        raise ArtifactMismatchError(
            f"policy artifact {path} has model hash {art.get('model_hash')} "
            f"but the config hashes to {cfg.model_hash()}; re-run solve"
        )
    return ThresholdRule(art["policy"], tuple(art["mapping"]), art["beta"], np.array(art["gamma"]), np.array(art["gamma_tail"]))


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    curve = cfg.error_curve()
    channel = _require_channel(cfg)
    if args.policy == PolicyKind.ZERO_WAIT.value:
        rule, beta = ThresholdRule.zero_wait(channel.n_states), math.nan
    else:
        out = Path(args.out or cfg.output_dir)
        rule = load_rule(args.artifact or out / POLICY_FILE, cfg)
        beta = rule.beta
    exact = analytic_cost(rule, curve, channel, cfg.policy.buffer_size)
    seeds = _seeds(args, cfg)
    reports = [run_simulation(rule, channel, curve, cfg.simulation.horizon, cfg.simulation.warm_up, s) for s in seeds]

    path = _out_dir(args, cfg) / "simulate.csv"
    fields = [f.name for f in dataclasses.fields(reports[0])]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_header(cfg, ','.join(map(str, seeds)))}\n")
        w = csv.writer(fh)
        w.writerow(fields)
        for r in reports:
            w.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(r)])

    costs = np.array([r.mean_cost for r in reports])
    se = costs.std(ddof=1) / math.sqrt(costs.size) if costs.size > 1 else reports[0].stderr
    print(f"policy: {rule.name}  seeds: {len(seeds)}  horizon: {cfg.simulation.horizon}")
    print(f"simulated cost: {costs.mean():.8g} +/- {se:.2g}")
    print(f"exact cost:     {exact:.8g}" + (f"  (design beta {beta:.8g})" if math.isfinite(beta) else ""))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    if len(cfg.channel.transmission) != 2:
        raise ConfigError("channel", "the alpha sweep needs a two-state channel")
    sim = cfg.simulation
    rows = run_sweep(
        sim.alphas,
        cfg.error_curve(),
        tuple(cfg.channel_model(sim.alphas[0]).transmission),
        tuple(cfg.channel_model(sim.alphas[0]).feedback),
        cfg.policy.buffer_size,
        sim.policies,
        seeds=_seeds(args, cfg),
        horizon=sim.horizon,
        warm_up=sim.warm_up,
        nu_max=cfg.policy.nu_max,
        tol=cfg.policy.tol,
        jobs=args.jobs or sim.jobs,
    )
    path = _out_dir(args, cfg) / "sweep.csv"
    write_sweep_csv(rows, path, _header(cfg, ",".join(map(str, _seeds(args, cfg)))))
    for r in rows:
        print(f"alpha={r.alpha:<4g} {r.policy:<13} cost={r.mean_cost:.6g} normalized={r.normalized_cost:.4f} se={r.stderr:.2g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_oracle_check(cfg: ExperimentConfig, args) -> int:
    curve = cfg.error_curve()
    channel = _require_channel(cfg)
    o = cfg.oracle
    try:
        smdp = TruncatedSMDP(curve, channel, cfg.policy.buffer_size, o.wait_cap, o.aoi_cap)
    except ValueError as exc:
        raise ConfigError("oracle", str(exc)) from exc
    ctx = PolicyContext(curve, channel, cfg.policy.buffer_size, cfg.policy.nu_max)
    mapping, h_opt = ctx.optimize_mapping(cfg.policy.tol)
    result = relative_value_iteration(smdp, o.tol, o.max_iters)
    report = greedy_matches_threshold(smdp, result, mapping, h_opt, ctx.waiting_time)
    if args.out:
        result.to_csv(_out_dir(args, cfg) / "oracle_values.csv")

    diff = abs(report.h_opt_oracle - report.h_opt_policy)
    print(f"h_opt (threshold solver): {report.h_opt_policy:.12g}")
    print(f"h_opt (value iteration):  {report.h_opt_oracle:.12g}  ({result.iterations} iterations)")
    print(f"difference: {diff:.3e} (tolerance {o.h_tol:g})")
    print(f"decision states checked: {report.checked}, max action gap {report.max_gap:.3e}")
    for m in report.mismatches:
        print(f"  mismatch at delta={m.delta} state={m.state}: greedy {m.greedy} vs threshold {m.threshold} (gap {m.gap:.3e})")
    if report.buffer_depends_on_aoi:
        print("  greedy buffer choice depends on the AoI")
    ok = report.ok and diff <= o.h_tol
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_MISMATCH


COMMANDS = {
    "error-curve": cmd_error_curve,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="YAML experiment configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (default: output.dir from the config)")
    common.add_argument("--seed", type=int, metavar="N", help="run a single seed instead of simulation.seeds")
    common.add_argument("--jobs", type=int, metavar="N", help="worker processes (default: simulation.jobs)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="aoisched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    ec = sub.add_parser("error-curve", parents=[common], help="tabulate h(delta)")
    ec.add_argument("--empirical", type=int, metavar="N", help="also fit the curve from N simulated samples")
    s = sub.add_parser("solve", parents=[common], help="solve the optimal threshold policy")
    s.add_argument("--policy", choices=["optimal", "iid_baseline"], default="optimal")
    sim = sub.add_parser("simulate", parents=[common], help="simulate a solved policy artifact")
    sim.add_argument("--policy", choices=["artifact", "zero_wait"], default="artifact")
    sim.add_argument("--artifact", metavar="PATH", help=f"policy artifact (default: OUT/{POLICY_FILE})")
    sub.add_parser("sweep", parents=[common], help="three-policy alpha sweep")
    sub.add_parser("oracle-check", parents=[common], help="certify the policy by value iteration")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ArtifactMismatchError, ChannelError, NonStationaryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (BracketError, EnumerationLimitError, NotConvergedError, WaitingCapExceeded, AoischedError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
