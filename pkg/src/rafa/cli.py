"""Command-line entry point: ``rafa run | sweep | verify | report``.

Exit codes: 0 success, 1 runtime or audit failure, 2 configuration or usage error.
The output directory comes from ``--out``, else $RAFA_OUT, else ``harness.out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import config as config_mod
from .harness.audit import audit
from .harness.experiments import SweepResult, make_environment, ratio_table, run_member, sweep
from .mdp import ConfigurationError
from .verify import SCOPES, run_checks

log = logging.getLogger("rafa")
LOG2 = math.log(2.0)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _env_spec(cfg: config_mod.ExperimentConfig):
    spec = cfg.environment
    return spec.generator if spec.generator is not None else spec.build(0)


def cmd_run(args) -> int:
    cfg = config_mod.load(args.config)
    agent = cfg.agent if args.seed is None else replace(cfg.agent, seed=args.seed)
    out = config_mod.ensure_writable(cfg.out_dir(args.out))
    env = make_environment(_env_spec(cfg), agent.seed)
    env, record = run_member(env, agent, agent.seed)
    report = audit(record, env)

    env.save(out / "env.json")
    # resolved config: replays from the saved environment file alone
    resolved = cfg.to_dict()
    resolved["environment"] = {"path": "env.json"}
    resolved["agent"] = agent.to_dict()
    resolved["harness"]["out"] = str(out)
    (out / "config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=False))
    record.write_steps(out / "steps.jsonl")
    (out / "summary.json").write_text(json.dumps(record.summary(), indent=1))
    (out / "audit.json").write_text(json.dumps(report.to_dict(), indent=1))

    for line in report.lines():
        print(line)
    print(f"cum_regret {record.cum_regret[-1]:.6g} K {record.K} T {record.T} out {out}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_sweep(args) -> int:
    cfg = config_mod.load(args.config)
    seeds = cfg.harness.seeds if args.seed is None else [args.seed]
    T_grid = cfg.harness.T_grid or [cfg.agent.T]
    members = cfg.members()
    if not seeds or not members or not T_grid:
        raise ConfigurationError("empty sweep grid: need at least one seed, config and T")
    out = config_mod.ensure_writable(cfg.out_dir(args.out))
    env_spec = _env_spec(cfg)
    result = sweep({cid: (env_spec, agent) for cid, agent in members.items()}, seeds, T_grid,
                   jobs=args.jobs, checkpoint_dir=out / "checkpoints")
    result.write(out / "sweep.csv", out / "summary.csv")
    print(f"wrote {len(result.rows)} rows to {out / 'sweep.csv'}")
    if result.failures:
        print("config_id seed status failed_audits")
        for cid in members:
            for seed in seeds:
                failed = result.failures.get((cid, seed))
                print(f"{cid} {seed} {'fail' if failed else 'ok'} {';'.join(failed or [])}")
        return EXIT_FAIL
    return EXIT_OK


def cmd_verify(args) -> int:
    scopes = SCOPES
    if args.only:
        scopes = tuple(s for part in args.only for s in part.split(",") if s)
        unknown = set(scopes) - set(SCOPES)
        if unknown:
            raise ConfigurationError(f"unknown verify scopes {sorted(unknown)}; choose from {SCOPES}")
    checks = run_checks(scopes, seed=args.seed or 0, scale=args.scale)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def report_lines(result: SweepResult, baseline: str | None = None) -> list[str]:
    lines = []
    Ts = result.T_values()
    ids = result.config_ids()
    if len(Ts) < 2:
        lines.append("notice: a single T value; no scaling ratio can be formed (degenerate table)")
    lines.append("# scaling ratios: mean cum_regret(T_high) / mean cum_regret(T_low)")
    lines.append("config_id T_low T_high mean_low mean_high ratio ci_low ci_high note")
    for cid in ids:
        for row in ratio_table(result, cid):
            note = "degenerate" if row.degenerate else row.note.replace(" ", "_") or "-"
            lines.append(f"{cid} {row.T_low} {row.T_high} {row.mean_low:.6g} {row.mean_high:.6g} "
                         f"{row.ratio:.4f} {row.ci_low:.4f} {row.ci_high:.4f} {note}")

    lines.append("# switch counts against the entropy budget (H0 - HT) / log 2")
    lines.append("config_id T mean_K max_switches min_slack violations")
    for cid in ids:
        for T in Ts:
            K = result.values(cid, T, "K")
            if not K.size:
                continue
            budget = (result.values(cid, T, "H0") - result.values(cid, T, "HT")) / LOG2
            slack = budget - (K - 1)
            viol = int(np.sum(slack < -1e-9))
            lines.append(f"{cid} {T} {K.mean():.4g} {int((K - 1).max())} {slack.min():.4g} {viol}")

    base = baseline or next((c for c in ids if "myopic" in c), None)
    if base is not None and base in ids:
        lines.append(f"# baseline comparison against {base}: mean cum_regret ratio")
        lines.append("config_id T mean mean_baseline ratio")
        for cid in ids:
            if cid == base:
                continue
            for T in Ts:
                x, y = result.values(cid, T), result.values(base, T)
                if x.size and y.size and y.mean() > 0:
                    lines.append(f"{cid} {T} {x.mean():.6g} {y.mean():.6g} {x.mean() / y.mean():.4f}")
    else:
        lines.append("notice: no baseline config present")
    return lines


def cmd_report(args) -> int:
    rows = []
    for path in args.csv:
        if not Path(path).is_file():
            raise ConfigurationError(f"sweep CSV not found: {path}")
        rows += SweepResult.read(path).rows
    if not rows:
        print("notice: no rows")
        return EXIT_OK
    for line in report_lines(SweepResult(rows), args.baseline):
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rafa", description=__doc__ + "\n" + config_mod.__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="one run: steps.jsonl, env.json, config.yaml, summary.json, audit.json")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="seeds x configs grid: sweep.csv and summary.csv (resumable)")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, help="run a single seed instead of harness.seeds")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="property checks; prints NAME status value per check")
    v.add_argument("--only", action="append", help=f"scope(s), comma separated: {','.join(SCOPES)}")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--scale", type=float, default=1.0, help="multiplier on sample counts")
    v.set_defaults(func=cmd_verify)

    rep = sub.add_parser("report", help="text tables from sweep CSVs")
    rep.add_argument("csv", nargs="+")
    rep.add_argument("--baseline", help="config_id to compare against (default: first id containing 'myopic')")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure
        log.exception("run failed")
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
