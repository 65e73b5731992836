"""The plan / act / store / switch loop with BMA, optimistic-bonus and posterior-sampling models.

At each epoch start the agent builds a planning model from the current belief, plans once,
and then executes the frozen policy while updating the belief every step. A new epoch opens
the first time the switching condition fires.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import posterior as post_ops
from .harness.regret import EpochSummary, RegretOracle, RunRecord
from .mdp import ConfigurationError, LinearMixtureMdp, sample_categorical, transition_kernel, value_feature
from .planners import (PlannerResult, PlanningModel, SearchBudget, required_horizon, search_policy,
                       value_iteration)
from .posterior import GaussianPosterior, Observation, entropy
from .streams import stream

VARIANTS = ("rafa-bma", "rafa-bonus", "rafa-ps")
PLANNERS = ("vi", "tree", "beam", "mcts")
SWITCH_KINDS = ("entropy-log2", "det-ratio-4", "prediction-mismatch", "fixed-period", "never")
LOG2 = math.log(2.0)
LOG4 = math.log(4.0)
# the entropy and determinant triggers may only disagree inside this margin (rounding)
_TRIGGER_AGREEMENT_MARGIN = 1e-9


@dataclass(frozen=True)
class SwitchCondition:
    kind: str = "entropy-log2"
    period: int = 1

    def __post_init__(self):
        if self.kind not in SWITCH_KINDS:
            raise ConfigurationError(f"unknown switch condition {self.kind!r}")
        if self.kind == "fixed-period" and self.period < 1:
            raise ConfigurationError("fixed-period needs period >= 1")


@dataclass
class AgentConfig:
    variant: str = "rafa-ps"
    planner: str = "vi"
    budget: SearchBudget = field(default_factory=SearchBudget)
    critic_horizon: int | None = None  # search planners; None uses the VI horizon
    epsilon: float = 0.01
    L: float | None = None  # value bound; None uses r_max / (1 - gamma)
    switch: SwitchCondition = field(default_factory=SwitchCondition)
    T: int = 1000
    seed: int = 0
    lam: float = 1.0
    sigma: float = 1.0
    myopic: bool = False
    learn_reward: bool = False  # plan with a learned per-(s, a) reward instead of the known one

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.planner not in PLANNERS:
            raise ConfigurationError(f"unknown planner {self.planner!r}")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.T < 1:
            raise ConfigurationError("T must be >= 1")
        if self.lam <= 0 or self.sigma <= 0:
            raise ConfigurationError("lam and sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochState:
    k: int
    t_k: int
    H_tk: float
    logdet_tk: float
    frozen_model: PlanningModel
    frozen_result: PlannerResult
    n_steps: int = 0


def plan_model(env: LinearMixtureMdp, post: GaussianPosterior, variant: str, L: float,
               rng: np.random.Generator, v_prev=None, reward_post: GaussianPosterior | None = None
               ) -> PlanningModel:
    """Planning model for one epoch.

    rafa-bonus needs psi at some value function before planning; it uses the previous
    epoch's planned value ``v_prev`` (zero for the first epoch). With ``reward_post`` the
    reward table is the posterior mean (sampled for rafa-ps) clipped to [0, 1].
    """
    if variant == "rafa-ps":
        theta = post_ops.sample(post, rng)
    else:
        theta = post_ops.bma_parameter(post)
    P = transition_kernel(env, theta)
    if reward_post is None:
        r = np.array(env.reward)
    else:
        w = post_ops.sample(reward_post, rng) if variant == "rafa-ps" else reward_post.mean
        r = np.clip(w, 0.0, 1.0).reshape(env.reward.shape)
    if variant == "rafa-bonus":
        v_prev = np.zeros(env.n_states) if v_prev is None else v_prev
        r = r + post_ops.bonus(post, value_feature(env, v_prev), L)
    return PlanningModel(P, r, env.gamma)


def _entropy_trigger(epoch: EpochState, post: GaussianPosterior) -> bool:
    return epoch.H_tk - entropy(post) > LOG2


def _det_trigger(epoch: EpochState, post: GaussianPosterior) -> bool:
    return post.logdet - epoch.logdet_tk > LOG4


def should_switch(cond: SwitchCondition, epoch: EpochState, post: GaussianPosterior, last_step) -> bool:
    """Decide whether to open a new epoch after ``last_step = (s, a, s_next)``."""
    kind = cond.kind
    if kind in ("entropy-log2", "det-ratio-4"):
        by_entropy = _entropy_trigger(epoch, post)
        by_det = _det_trigger(epoch, post)
        if by_entropy != by_det and abs(post.logdet - epoch.logdet_tk - LOG4) > _TRIGGER_AGREEMENT_MARGIN:
            raise AssertionError("entropy and determinant switching triggers disagree")
        return by_entropy if kind == "entropy-log2" else by_det
    if kind == "prediction-mismatch":
        s, a, s_next = last_step
        return int(epoch.frozen_model.successor()[s, a]) != int(s_next)
    if kind == "fixed-period":
        return epoch.n_steps >= cond.period
    return False


def _plan(model: PlanningModel, cfg: AgentConfig, L: float, rng: np.random.Generator) -> PlannerResult:
    if cfg.myopic:
        return value_iteration(model, 1)
    L_plan = max(L, float(np.abs(model.r).max()) / (1.0 - model.gamma))
    U = required_horizon(model.gamma, cfg.epsilon, L_plan) if cfg.epsilon < L_plan else 1
    if cfg.planner == "vi":
        return value_iteration(model, U)
    return search_policy(model, cfg.planner, cfg.budget, cfg.critic_horizon or U, rng)


def run(env: LinearMixtureMdp, cfg: AgentConfig, initial_posterior: GaussianPosterior | None = None,
        oracle: RegretOracle | None = None) -> RunRecord:
    T, S = cfg.T, env.n_states
    L = cfg.L or env.value_bound
    rng_env = stream(cfg.seed, "transitions")
    rng_agent = stream(cfg.seed, "agent")
    rng_plan = stream(cfg.seed, "planner")
    oracle = oracle or RegretOracle(env)
    P_true = env.kernel()

    post = initial_posterior or GaussianPosterior.prior(env.dim, cfg.lam, cfg.sigma)
    if post.d != env.dim:
        raise ConfigurationError(f"posterior dimension {post.d} != feature dimension {env.dim}")
    H0 = entropy(post)
    reward_post = GaussianPosterior.prior(S * env.n_actions, cfg.lam, cfg.sigma) if cfg.learn_reward else None

    cols = {k: np.zeros(T, dtype=int) for k in ("t", "state", "action", "next_state", "epoch")}
    cols.update({k: np.zeros(T) for k in ("reward", "entropy", "info_gain", "inst_regret")})
    epochs: list[EpochSummary] = []
    snapshots = []  # (posterior at epoch start, last posterior inside the epoch, observed value)
    max_psi_norm = 0.0
    trigger_disagreements = 0

    s = sample_categorical(env.rho, rng_env)
    t = 0
    v_prev = np.zeros(S)
    while t < T:
        k = len(epochs)
        model = plan_model(env, post, cfg.variant, L, rng_agent, v_prev, reward_post)
        result = _plan(model, cfg, L, rng_plan)
        epoch = EpochState(k, t, entropy(post), post.logdet, model, result)
        summary = EpochSummary(k, t, epoch.H_tk, epoch.logdet_tk, result.pi.tolist(), result.planner_id,
                               result.horizon_used, result.epsilon_certificate, result.nodes_expanded)
        epochs.append(summary)
        # targets use the epoch's value clipped to the configured value bound
        v_obs = np.clip(result.v, -L, L)
        psi_table = value_feature(env, v_obs)
        gap = oracle.gap(result.pi)
        start_post = last_in_epoch = post

        while t < T:
            a = int(result.pi[s])
            s_next = sample_categorical(P_true[s, a], rng_env)
            psi = psi_table[s, a]
            max_psi_norm = max(max_psi_norm, float(np.linalg.norm(psi)))
            gain = post_ops.information_gain(post, psi)
            post = post.update(Observation(psi, v_obs[s_next]))
            if reward_post is not None:
                reward_post = reward_post.update(Observation(np.eye(reward_post.d)[s * env.n_actions + a],
                                                             env.reward[s, a]))

            cols["t"][t], cols["state"][t], cols["action"][t], cols["next_state"][t] = t, s, a, s_next
            cols["epoch"][t] = k
            cols["reward"][t] = env.reward[s, a]
            cols["entropy"][t] = entropy(post)
            cols["info_gain"][t] = gain
            cols["inst_regret"][t] = gap[s]
            t += 1
            epoch.n_steps += 1
            summary.n_steps += 1

            if cfg.switch.kind in ("entropy-log2", "det-ratio-4"):
                trigger_disagreements += _entropy_trigger(epoch, post) != _det_trigger(epoch, post)
            switch = should_switch(cfg.switch, epoch, post, (s, a, s_next))
            s = s_next
            if switch:
                break
            last_in_epoch = post
        snapshots.append((start_post, last_in_epoch, v_obs))
        v_prev = v_obs

    cols["cum_regret"] = np.cumsum(cols["inst_regret"])
    extras = {"snapshots": snapshots, "max_psi_norm": max_psi_norm, "value_bound": L,
              "trigger_disagreements": trigger_disagreements,
              "final_posterior": post}
    return RunRecord(steps=cols, epochs=epochs, H0=H0, d=env.dim, lam=post.lam, sigma=post.sigma,
                     feature_bound=env.feature_bound, config=cfg.to_dict(), seed=cfg.seed, extras=extras)


def baseline_myopic(env: LinearMixtureMdp, cfg: AgentConfig, **kwargs) -> RunRecord:
    """Same loop with a one-step greedy planner (U = 1 value iteration)."""
    return run(env, replace(cfg, myopic=True, planner="vi"), **kwargs)
