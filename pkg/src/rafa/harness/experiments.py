"""Seeds x configs orchestration, Bayesian-regret estimates and scaling probes."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..agent import AgentConfig, baseline_myopic, run
from ..mdp import EnvGenConfig, LinearMixtureMdp, generate_environment
from ..streams import stream
from .audit import audit

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("config_id", "seed", "T", "cum_regret", "K", "H0", "HT")
SUMMARY_COLUMNS = ("config_id", "T", "n", "mean_cum_regret", "stderr_cum_regret", "mean_K",
                   "mean_H0_minus_HT")


def make_environment(env_spec, seed: int) -> LinearMixtureMdp:
    """Fresh environment per seed from a generator config, or a fixed environment."""
    if isinstance(env_spec, LinearMixtureMdp):
        return env_spec
    if callable(env_spec):
        return env_spec(seed)
    return generate_environment(env_spec, stream(seed, "environment"))


def run_member(env_spec, cfg: AgentConfig, seed: int, baseline: bool = False):
    env = make_environment(env_spec, seed)
    cfg = replace(cfg, seed=seed)
    record = baseline_myopic(env, cfg) if baseline else run(env, cfg)
    return env, record


def _member_rows(args):
    config_id, env_spec, cfg, seed, T_grid = args
    env, record = run_member(env_spec, cfg, seed)
    report = audit(record, env)
    rows = [dict(config_id=config_id, seed=seed, **record.prefix_stats(T)) for T in T_grid]
    return rows, report.passed, [i.line() for i in report.items if not i.ok]


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def values(self, config_id: str, T: int, key: str = "cum_regret") -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["config_id"] == config_id and r["T"] == T], dtype=float)

    def config_ids(self) -> list:
        return sorted({r["config_id"] for r in self.rows})

    def T_values(self) -> list:
        return sorted({r["T"] for r in self.rows})

    def summary_rows(self) -> list:
        out = []
        for cid in self.config_ids():
            for T in self.T_values():
                x = self.values(cid, T)
                if not x.size:
                    continue
                mean, se = bayesian_regret_estimate(x) if x.size >= 2 else (float(x.mean()), float("nan"))
                gap = self.values(cid, T, "H0") - self.values(cid, T, "HT")
                out.append(dict(config_id=cid, T=T, n=int(x.size), mean_cum_regret=mean,
                                stderr_cum_regret=se, mean_K=float(self.values(cid, T, "K").mean()),
                                mean_H0_minus_HT=float(gap.mean())))
        return out

    def write(self, sweep_csv, summary_csv) -> None:
        write_csv(sweep_csv, SWEEP_COLUMNS, sorted(self.rows, key=lambda r: (r["config_id"], r["seed"], r["T"])))
        write_csv(summary_csv, SUMMARY_COLUMNS, self.summary_rows())

    @classmethod
    def read(cls, path) -> "SweepResult":
        with open(path, newline="") as fh:
            rows = [dict(config_id=r["config_id"], seed=int(r["seed"]), T=int(r["T"]),
                         cum_regret=float(r["cum_regret"]), K=int(r["K"]), H0=float(r["H0"]), HT=float(r["HT"]))
                    for r in csv.DictReader(fh)]
        return cls(rows)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def sweep(members: dict, seeds, T_grid, jobs: int = 1, checkpoint_dir=None) -> SweepResult:
    """Run every (config_id, seed) member; ``members`` maps config_id -> (env_spec, AgentConfig).

    With ``checkpoint_dir`` each finished member is written to its own JSON file and skipped
    on the next call, so an interrupted sweep resumes where it stopped.
    """
    seeds = list(dict.fromkeys(int(s) for s in seeds))
    T_grid = sorted(set(int(t) for t in T_grid))
    result = SweepResult()
    todo = []
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
    for cid, (env_spec, cfg) in members.items():
        for seed in seeds:
            path = ckpt / f"{cid}__{seed}.json" if ckpt else None
            if path and path.exists():
                saved = json.loads(path.read_text())
                if saved["T_grid"] == T_grid:
                    result.rows.extend(saved["rows"])
                    if not saved["passed"]:
                        result.failures[(cid, seed)] = saved["failed"]
                    continue
            todo.append(((cid, env_spec, replace(cfg, T=max(T_grid)), seed, T_grid), path))

    def consume(item, out):
        (cid, _, _, seed, _), path = item
        rows, passed, failed = out
        result.rows.extend(rows)
        if not passed:
            result.failures[(cid, seed)] = failed
        if path:
            path.write_text(json.dumps({"T_grid": T_grid, "rows": rows, "passed": passed, "failed": failed}))

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for item, out in zip(todo, pool.map(_member_rows, [a for a, _ in todo])):
                consume(item, out)
    else:
        for item in todo:
            consume(item, _member_rows(item[0]))
    return result


# ----------------------------------------------------------------------------------
# statistics


def bayesian_regret_estimate(values) -> tuple[float, float]:
    """Sample mean and standard error (ddof=1) across members."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two members")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def bootstrap_ratio_ci(num, den, rng: np.random.Generator, n_boot: int = 10_000, level: float = 0.95,
                       paired: bool = True) -> tuple[float, float, float]:
    """Ratio of means num/den with a percentile bootstrap interval over members."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ratio = num.mean() / den.mean()
    i = rng.integers(0, num.size, size=(n_boot, num.size))
    j = i if paired else rng.integers(0, den.size, size=(n_boot, den.size))
    with np.errstate(divide="ignore", invalid="ignore"):
        boots = num[i].mean(axis=1) / den[j].mean(axis=1)
    lo, hi = np.nanquantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return float(ratio), float(lo), float(hi)


@dataclass
class RatioRow:
    T_low: int
    T_high: int
    mean_low: float
    mean_high: float
    ratio: float
    ci_low: float
    ci_high: float
    degenerate: bool = False
    note: str = ""


def ratio_table(sweep_result: SweepResult, config_id: str, seed: int = 0, n_boot: int = 10_000,
                min_seeds_for_ci: int = 5) -> list:
    """Ratios of mean cumulative regret between consecutive T values of one config."""
    rng = np.random.default_rng(seed)
    Ts = sweep_result.T_values()
    rows = []
    for lo, hi in zip(Ts[:-1], Ts[1:]):
        # pair members by seed
        by_seed = {}
        for r in sweep_result.rows:
            if r["config_id"] == config_id and r["T"] in (lo, hi):
                by_seed.setdefault(r["seed"], {})[r["T"]] = r["cum_regret"]
        pairs = np.array([(v[lo], v[hi]) for v in by_seed.values() if lo in v and hi in v])
        if not len(pairs):
            continue
        m_lo, m_hi = pairs[:, 0].mean(), pairs[:, 1].mean()
        if m_lo <= 1e-9:
            rows.append(RatioRow(lo, hi, m_lo, m_hi, float("nan"), float("nan"), float("nan"), True,
                                 "near-zero regret"))
            continue
        note = ""
        if len(pairs) < min_seeds_for_ci:
            note = f"only {len(pairs)} seeds; interval unreliable"
            warnings.warn(note, stacklevel=2)
        ratio, c_lo, c_hi = bootstrap_ratio_ci(pairs[:, 1], pairs[:, 0], rng, n_boot)
        rows.append(RatioRow(lo, hi, m_lo, m_hi, ratio, c_lo, c_hi, False, note))
    return rows


def scaling_probe(agent_cfg: AgentConfig, env_spec, T_grid, n_seeds: int, jobs: int = 1,
                  config_id: str = "probe") -> list:
    """Mean-regret ratios across a geometric T grid (T, 4T, 16T, ...).

    Each seed is run once to max(T_grid); shorter horizons read the prefix, which is
    exactly what a shorter run would have produced because the loop is causal.
    """
    Ts = sorted(T_grid)
    if any(b != 4 * a for a, b in zip(Ts[:-1], Ts[1:])):
        warnings.warn("T grid is not geometric with factor 4", stacklevel=2)
    res = sweep({config_id: (env_spec, agent_cfg)}, range(n_seeds), Ts, jobs)
    return ratio_table(res, config_id)


def default_suite() -> EnvGenConfig:
    return EnvGenConfig(n_states=5, n_actions=3, feature_dim=75, gamma=0.9, lam=1.0,
                        mode="dirichlet-tabular", alpha=1.0)
