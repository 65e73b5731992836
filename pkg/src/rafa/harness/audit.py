"""Post-hoc audits of a RunRecord: each check reports pass / fail / n/a with its slack."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..mdp import value_feature
from ..posterior import entropy_budget, information_gain, regularity_coefficient

LOG2 = math.log(2.0)
ENTROPY_TRIGGERS = ("entropy-log2", "det-ratio-4")


@dataclass
class AuditItem:
    name: str
    status: str  # pass | fail | n/a
    slack: float = float("nan")
    index: int | None = None
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.status != "fail"

    def line(self) -> str:
        where = f" at={self.index}" if self.index is not None else ""
        note = f" ({self.note})" if self.note else ""
        return f"{self.name} {self.status} {self.slack:.6g}{where}{note}"


@dataclass
class AuditReport:
    items: list

    @property
    def passed(self) -> bool:
        return all(i.ok for i in self.items)

    def __getitem__(self, name: str) -> AuditItem:
        for item in self.items:
            if item.name == name:
                return item
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [i.line() for i in self.items]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "items": [i.__dict__ for i in self.items]}


def _first_fail(mask) -> int | None:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def audit(record, env=None, gain_tol: float = 1e-8, regret_tol: float = 1e-6) -> AuditReport:
    """Check the invariants a correct run must satisfy.

    ``env`` enables the regularity-coefficient audit, which needs the feature basis.
    """
    steps = record.steps
    H = np.concatenate([[record.H0], steps["entropy"]])
    gains = steps["info_gain"]
    kind = record.config["switch"]["kind"]
    items = []

    # per-step chain rule: H_t - H_{t+1} equals the gain of the executed feature
    err = np.abs((H[:-1] - H[1:]) - gains)
    tol = gain_tol * np.maximum(1.0, np.abs(H[1:]))
    items.append(AuditItem("gain_chain", "fail" if (err > tol).any() else "pass",
                           float((tol - err).min()) if err.size else 0.0, _first_fail(err > tol)))
    total = abs(gains.sum() - (record.H0 - record.HT))
    items.append(AuditItem("gain_telescoping", "pass" if total <= gain_tol * max(1.0, abs(record.H0)) else "fail",
                           gain_tol * max(1.0, abs(record.H0)) - total))

    rises = H[1:] - H[:-1] > 1e-12 * np.maximum(1.0, np.abs(H[1:]))
    items.append(AuditItem("entropy_monotone", "fail" if rises.any() else "pass",
                           float((H[:-1] - H[1:]).min()) if gains.size else 0.0, _first_fail(rises)))

    R = max(record.feature_bound, record.extras.get("max_psi_norm", 0.0))
    budget = entropy_budget(record.d, record.T, R, record.lam, record.sigma)
    used = record.H0 - record.HT
    items.append(AuditItem("entropy_budget", "pass" if used <= budget + 1e-9 else "fail", budget - used,
                           note=f"H0-HT={used:.4g} budget={budget:.4g}"))

    starts = [e.t_start for e in record.epochs]
    H_start = np.array([e.entropy_start for e in record.epochs])
    if kind in ENTROPY_TRIGGERS:
        K = record.K
        bound = (record.H0 - H_start[-1]) / LOG2
        items.append(AuditItem("switch_count", "pass" if K - 1 <= bound + 1e-9 else "fail", bound - (K - 1),
                               note=f"K={K} bound={bound:.4g}"))
        drops = H_start[:-1] - H_start[1:]
        bad = drops < LOG2
        items.append(AuditItem("epoch_drop", "fail" if bad.any() else "pass",
                               float((drops - LOG2).min()) if drops.size else float("inf"),
                               starts[_first_fail(bad) + 1] if bad.any() else None))
        # every step that did not open a new epoch kept the drop within log 2
        epoch_of = steps["epoch"]
        drop = H_start[epoch_of] - steps["entropy"]
        switching = np.zeros(record.T, dtype=bool)
        switching[np.array(starts[1:], dtype=int) - 1] = True
        viol = (drop > LOG2 + 1e-12) & ~switching
        items.append(AuditItem("within_epoch_drop", "fail" if viol.any() else "pass",
                               float(LOG2 - drop[~switching].max()) if (~switching).any() else LOG2,
                               _first_fail(viol)))
        dis = record.extras.get("trigger_disagreements")
        if dis is None:
            items.append(AuditItem("trigger_equivalence", "n/a"))
        else:
            items.append(AuditItem("trigger_equivalence", "pass" if dis == 0 else "fail", float(-dis)))
    else:
        for name in ("switch_count", "epoch_drop", "within_epoch_drop", "trigger_equivalence"):
            items.append(AuditItem(name, "n/a", note=f"switch={kind}"))

    pol = np.array([record.epochs[k].policy[s] for k, s in zip(steps["epoch"], steps["state"])], dtype=int)
    bad = pol != steps["action"]
    items.append(AuditItem("policy_constancy", "fail" if bad.any() else "pass", 0.0, _first_fail(bad)))

    bad = steps["inst_regret"] < -regret_tol
    items.append(AuditItem("regret_nonnegative", "fail" if bad.any() else "pass",
                           float(steps["inst_regret"].min() + regret_tol) if record.T else 0.0, _first_fail(bad)))

    cfg = record.config
    if cfg["planner"] == "vi" and not cfg["myopic"]:
        certs = np.array([e.epsilon_certificate for e in record.epochs])
        bad = certs > cfg["epsilon"]
        items.append(AuditItem("planner_certificate", "fail" if bad.any() else "pass",
                               float(cfg["epsilon"] - certs.max()),
                               starts[_first_fail(bad)] if bad.any() else None))
    else:
        items.append(AuditItem("planner_certificate", "n/a", note="search or myopic planner"))

    items.append(regularity_audit(record, env))
    return AuditReport(items)


def regularity_audit(record, env=None) -> AuditItem:
    """I(.|D_t1) <= 4 eta I(.|D_t2) for t1 < t2 inside one epoch, eta = d / log(1 + d).

    For a fixed feature the gain only shrinks as data arrives, so the epoch's first and last
    in-epoch posteriors form the extreme pair; the audit checks that pair for every
    (s, a) feature of the epoch's value and of the next epoch's value.
    """
    snaps = record.extras.get("snapshots")
    if env is None or snaps is None or record.config["switch"]["kind"] not in ENTROPY_TRIGGERS:
        return AuditItem("regularity", "n/a")
    eta4 = 4.0 * regularity_coefficient(record.d)
    worst, where = math.inf, None
    values = [v for _, _, v in snaps]
    for k, (first, last, v) in enumerate(snaps):
        vs = [v] + ([values[k + 1]] if k + 1 < len(values) else [])
        for vv in vs:
            psi = value_feature(env, vv).reshape(-1, record.d)
            g1 = np.atleast_1d(information_gain(first, psi))
            g2 = np.atleast_1d(information_gain(last, psi))
            slack = float((eta4 * g2 - g1).min())
            if slack < worst:
                worst, where = slack, record.epochs[k].t_start
    return AuditItem("regularity", "pass" if worst >= -1e-12 else "fail", worst,
                     where if worst < -1e-12 else None)
