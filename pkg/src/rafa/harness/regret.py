"""Ground-truth regret against the true environment, and the per-run record."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..mdp import LINEAR_SOLVE_TOL, LinearMixtureMdp, optimal_solution, policy_evaluation

STEP_FIELDS = ("t", "state", "action", "reward", "next_state", "entropy", "info_gain",
               "epoch", "inst_regret", "cum_regret")


class RegretOracle:
    """Caches V* of the environment and V^pi of every policy it has evaluated."""

    def __init__(self, env: LinearMixtureMdp, tol: float = LINEAR_SOLVE_TOL):
        self.env = env
        self.tol = tol
        self.P = env.kernel()
        self.pi_star, self.v_star = optimal_solution(self.P, env.reward, env.gamma, tol)
        self._cache: dict[bytes, np.ndarray] = {}

    def policy_value(self, pi) -> np.ndarray:
        pi = np.asarray(pi, dtype=np.int64)
        key = pi.tobytes()
        if key not in self._cache:
            v = policy_evaluation(self.P, self.env.reward, self.env.gamma, pi, self.tol)
            v.setflags(write=False)
            self._cache[key] = v
        return self._cache[key]

    def gap(self, pi) -> np.ndarray:
        """Per-state regret vector V* - V^pi, floored at -tol."""
        return np.maximum(self.v_star - self.policy_value(pi), -self.tol)

    def instantaneous_regret(self, pi, s: int) -> float:
        return float(self.gap(pi)[s])


def instantaneous_regret(env: LinearMixtureMdp, pi, s: int, oracle: RegretOracle | None = None) -> float:
    return (oracle or RegretOracle(env)).instantaneous_regret(pi, s)


@dataclass
class EpochSummary:
    k: int
    t_start: int
    entropy_start: float
    logdet_start: float
    policy: list
    planner_id: str
    horizon_used: int
    epsilon_certificate: float
    nodes_expanded: int
    n_steps: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunRecord:
    """Everything a run produced. ``steps`` is a dict of equal-length arrays keyed by field.

    ``extras`` carries in-memory audit material (posterior snapshots, check counters) that
    is not serialized.
    """

    steps: dict
    epochs: list
    H0: float
    d: int
    lam: float
    sigma: float
    feature_bound: float
    config: dict
    seed: int
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:
        return len(self.steps["t"])

    @property
    def K(self) -> int:
        return len(self.epochs)

    @property
    def HT(self) -> float:
        return float(self.steps["entropy"][-1]) if self.T else self.H0

    @property
    def cum_regret(self) -> np.ndarray:
        return self.steps["cum_regret"]

    def prefix_stats(self, T: int) -> dict:
        """Cumulative regret, epoch count and entropies after the first T steps."""
        if not 1 <= T <= self.T:
            raise ValueError(f"prefix length {T} outside 1..{self.T}")
        K = sum(1 for e in self.epochs if e.t_start < T)
        return {"T": T, "cum_regret": float(self.cum_regret[T - 1]), "K": K,
                "H0": float(self.H0), "HT": float(self.steps["entropy"][T - 1])}

    def step_lines(self):
        cols = [self.steps[f] for f in STEP_FIELDS]
        for row in zip(*cols):
            yield json.dumps({f: _py(v) for f, v in zip(STEP_FIELDS, row)})

    def write_steps(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.step_lines():
                fh.write(line + "\n")

    def summary(self) -> dict:
        return {"T": self.T, "K": self.K, "H0": float(self.H0), "HT": self.HT, "d": self.d,
                "lam": self.lam, "sigma": self.sigma, "feature_bound": self.feature_bound,
                "cum_regret": float(self.cum_regret[-1]) if self.T else 0.0, "seed": self.seed,
                "epochs": [e.to_dict() for e in self.epochs], "config": self.config}


def _py(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v
