"""Property checks for every module, shared by the CLI ``verify`` command and the test suite.

Each check returns a ``Check`` whose ``value`` is the measured slack (>= 0 means the
property held with that much room) or a violation count, as stated per check.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import posterior as post_ops
from .agent import AgentConfig, SwitchCondition, run
from .harness.audit import audit
from .harness.regret import RegretOracle
from .mdp import (EnvGenConfig, from_tabular, generate_environment, optimal_solution, policy_evaluation,
                  project_kernel, value_feature)
from .planners import (PlanningModel, SearchBudget, beam_search, mcts, required_horizon, tree_search,
                       value_iteration, vi_critic)
from .posterior import GaussianPosterior, Observation

SCOPES = ("mdp", "posterior", "planners", "agent", "harness")


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    note: str = ""

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def line(self) -> str:
        return f"{self.name} {self.status} {self.value:.6g}"


# ----------------------------------------------------------------------------------
# mdp


def check_kernel_rows(n: int, rng: np.random.Generator) -> Check:
    """Projected kernels are row-stochastic for arbitrary parameters."""
    worst = 0.0
    for _ in range(n):
        S, A = rng.integers(2, 6), rng.integers(1, 4)
        env = generate_environment(EnvGenConfig(S, A, feature_dim=int(rng.integers(2, 8)),
                                                mode="raw-gaussian-projected"), rng)
        P = project_kernel(env.phi @ rng.normal(size=env.dim))
        worst = max(worst, float(np.abs(P.sum(-1) - 1).max()), float(-P.min()))
    return Check("mdp.kernel_rows", worst <= 1e-12, 1e-12 - worst)


def check_optimality_dominance(n: int, rng: np.random.Generator, tol: float = 1e-6) -> Check:
    """V* dominates V^pi of random policies on random instances."""
    worst = math.inf
    for _ in range(n):
        S, A = int(rng.integers(2, 7)), int(rng.integers(2, 4))
        P = rng.dirichlet(np.ones(S), size=(S, A))
        r = rng.random((S, A))
        gamma = float(rng.choice([0.5, 0.9, 0.99]))
        _, v_star = optimal_solution(P, r, gamma)
        for _ in range(5):
            v_pi = policy_evaluation(P, r, gamma, rng.integers(0, A, size=S))
            worst = min(worst, float((v_star - v_pi).min()))
    return Check("mdp.optimality_dominance", worst >= -tol, worst + tol)


# ----------------------------------------------------------------------------------
# posterior


def random_observations(rng: np.random.Generator, d: int, n: int):
    scale = rng.choice([0.1, 1.0, 10.0])
    psis = rng.normal(size=(n, d)) * scale
    ys = rng.normal(size=n) * scale
    return psis, ys


def check_posterior_sequences(n_seq: int, rng: np.random.Generator, mean_tol: float = 1e-8,
                              gain_tol: float = 1e-10) -> list[Check]:
    """Incremental updates against the dense ridge solve, gain chain rule, strict entropy decrease."""
    worst_mean = worst_gain = 0.0
    min_drop = math.inf
    for _ in range(n_seq):
        d = int(rng.integers(1, 9))
        n = int(rng.integers(1, 31))
        lam = float(rng.uniform(0.1, 5.0))
        sigma = float(rng.uniform(0.2, 3.0))
        psis, ys = random_observations(rng, d, n)
        post = GaussianPosterior.prior(d, lam, sigma)
        for psi, y in zip(psis, ys):
            gain = post_ops.information_gain(post, psi)
            h0 = post_ops.entropy(post)
            post = post.update(Observation(psi, y))
            h1 = post_ops.entropy(post)
            worst_gain = max(worst_gain, abs((h0 - h1) - gain))
            min_drop = min(min_drop, h0 - h1)
        ref = post_ops.ridge_solution(psis, ys, lam, sigma)
        err = np.linalg.norm(post.mean - ref) / max(np.linalg.norm(ref), 1e-300)
        worst_mean = max(worst_mean, float(err))
    return [Check("posterior.ridge_match", worst_mean <= mean_tol, mean_tol - worst_mean),
            Check("posterior.gain_chain", worst_gain <= gain_tol, gain_tol - worst_gain),
            Check("posterior.entropy_decrease", min_drop > 0.0, min_drop)]


def check_det_ratio_norm(n: int, rng: np.random.Generator) -> Check:
    """For SPD A >= D: ||x||_A <= ||x||_D sqrt(det A / det D)."""
    worst = math.inf
    for _ in range(n):
        d = int(rng.integers(1, 7))
        M = rng.normal(size=(d, d))
        D = M @ M.T + 0.1 * np.eye(d)
        N = rng.normal(size=(d, int(rng.integers(1, d + 2))))
        A = D + N @ N.T
        x = rng.normal(size=d)
        lhs = math.sqrt(x @ A @ x)
        ratio = math.exp(np.linalg.slogdet(A)[1] - np.linalg.slogdet(D)[1])
        rhs = math.sqrt(x @ D @ x) * math.sqrt(ratio)
        worst = min(worst, (rhs - lhs) / max(rhs, 1e-300))
    return Check("posterior.det_ratio_norm", worst >= -1e-12, worst)


def random_posterior(env, rng: np.random.Generator, n_max: int = 40) -> GaussianPosterior:
    """Prior plus a random number of value-targeted observations on ``env``."""
    vmax = float(env.reward.max()) / (1.0 - env.gamma)
    post = GaussianPosterior.prior(env.dim, float(rng.uniform(1.0, 2.0)), 1.0)
    for _ in range(int(rng.integers(0, n_max + 1))):
        V = rng.uniform(0.0, vmax, size=env.n_states)
        s, a = rng.integers(env.n_states), rng.integers(env.n_actions)
        sp = rng.choice(env.n_states, p=env.kernel()[s, a])
        post = post.update(Observation(value_feature(env, V, s, a), V[sp]))
    return post


def check_variance_contraction(n_triples: int, n_samples: int, rng: np.random.Generator,
                               n_se: float = 3.0) -> Check:
    """Var over posterior draws of r + gamma psi.theta <= 2 L^2 I + n_se Monte-Carlo standard errors.

    L bounds |r + V| for rewards in [0, 1] and V in [0, 1 / (1 - gamma)]. The value is the
    number of violations.
    """
    violations = 0
    worst = math.inf
    for _ in range(n_triples):
        cfg = EnvGenConfig(int(rng.integers(2, 6)), int(rng.integers(2, 4)),
                           gamma=float(rng.choice([0.5, 0.9])))
        env = generate_environment(cfg, rng)
        post = random_posterior(env, rng)
        vmax = 1.0 / (1.0 - env.gamma)
        L = 1.0 + vmax
        V = rng.uniform(0.0, vmax, size=env.n_states)
        s, a = int(rng.integers(env.n_states)), int(rng.integers(env.n_actions))
        psi = value_feature(env, V, s, a)
        z = rng.standard_normal((n_samples, env.dim))
        thetas = post.mean + solve_triangular(post.chol, z.T, lower=True, trans="T").T
        b = env.reward[s, a] + env.gamma * thetas @ psi
        dev = b - b.mean()
        var = float(dev @ dev / (n_samples - 1))
        m4 = float(np.mean(dev**4))
        se = math.sqrt(max(m4 - var**2, 0.0) / n_samples)
        bound = 2.0 * L**2 * post_ops.information_gain(post, psi)
        slack = bound + n_se * se - var
        worst = min(worst, slack)
        violations += slack < 0
    return Check("posterior.variance_contraction", violations == 0, float(violations),
                 note=f"min slack {worst:.4g}")


def check_regularity_pairs(n: int, rng: np.random.Generator) -> Check:
    """I(x|D_t1) <= 4 eta I(x|D_t2) for t1 < t2 while the determinant grows by at most 4x."""
    worst = math.inf
    for _ in range(n):
        d = int(rng.integers(1, 8))
        eta4 = 4.0 * post_ops.regularity_coefficient(d)
        post = GaussianPosterior.prior(d, float(rng.uniform(0.5, 2.0)))
        psis, ys = random_observations(rng, d, 30)
        start = post
        for psi, y in zip(psis, ys):
            nxt = post.update(Observation(psi, y))
            if nxt.logdet - start.logdet > math.log(4.0):
                break
            post = nxt
        X = rng.normal(size=(20, d)) * rng.choice([0.1, 1.0, 10.0])
        g1 = post_ops.information_gain(start, X)
        g2 = post_ops.information_gain(post, X)
        worst = min(worst, float((eta4 * g2 - g1).min()))
    return Check("posterior.regularity", worst >= -1e-12, worst)


# ----------------------------------------------------------------------------------
# planners


def check_vi_certificate(n_models: int, rng: np.random.Generator, gammas=(0.5, 0.9, 0.99),
                         epsilons=(0.1, 0.01)) -> Check:
    """Truncated VI at the required horizon: certificate <= eps and <= gamma^(U-1) L. Value: violations."""
    violations = 0
    worst = math.inf
    for gamma, eps in itertools.product(gammas, epsilons):
        for _ in range(n_models):
            S, A = int(rng.integers(2, 8)), int(rng.integers(2, 5))
            model = PlanningModel(rng.dirichlet(np.ones(S), size=(S, A)), rng.random((S, A)), gamma)
            L = float(model.r.max()) / (1.0 - gamma)
            U = required_horizon(gamma, eps, L)
            cert = value_iteration(model, U).epsilon_certificate
            slack = min(eps - cert, gamma ** (U - 1) * L - cert)
            worst = min(worst, slack)
            violations += slack < 0
    return Check("planners.vi_certificate", violations == 0, float(violations), note=f"min slack {worst:.4g}")


def deterministic_instance(rng: np.random.Generator, S: int, A: int, gamma: float) -> PlanningModel:
    succ = rng.integers(0, S, size=(S, A))
    return PlanningModel(np.eye(S)[succ], rng.random((S, A)), gamma)


def exhaustive_first_action(model: PlanningModel, critic: np.ndarray, s0: int, depth: int) -> int:
    """Enumerate every action sequence of length depth + 1 in a deterministic model."""
    succ = model.successor()
    best_val, best_a = -math.inf, 0
    for seq in itertools.product(range(model.n_actions), repeat=depth + 1):
        s, val = s0, 0.0
        for u, a in enumerate(seq):
            val += model.gamma**u * model.r[s, a]
            s = succ[s, a]
        val += model.gamma ** (depth + 1) * critic[s]
        if val > best_val:  # strict: first (lowest) sequence wins ties
            best_val, best_a = val, seq[0]
    return int(best_a)


def check_planner_equivalence(n: int, rng: np.random.Generator, depth: int = 2) -> Check:
    """tree, beam, exhaustive enumeration and MCTS pick the same first action. Value: mismatches."""
    mismatches = 0
    for _ in range(n):
        S, A = int(rng.integers(2, 7)), int(rng.integers(2, 4))
        model = deterministic_instance(rng, S, A, float(rng.choice([0.5, 0.9])))
        critic = vi_critic(model, 2000)  # converged to machine precision
        budget = SearchBudget(breadth=A, depth=depth, proposal_width=A, fanout=1,
                              expansions=A ** (depth + 1))
        s0 = int(rng.integers(S))
        acts = {exhaustive_first_action(model, critic, s0, depth),
                tree_search(model, critic, s0, budget).action,
                beam_search(model, critic, s0, budget).action,
                mcts(model, critic, s0, budget, rng).action}
        mismatches += len(acts) > 1
    return Check("planners.oracle_equivalence", mismatches == 0, float(mismatches))


def two_armed_model(p: float = 0.7, gamma: float = 0.9) -> PlanningModel:
    """State 0 picks an arm; arm a reaches the rewarding state 1 w.p. p (arm 0) or 1 - p (arm 1)."""
    P = np.zeros((3, 2, 3))
    P[0, 0] = [0.0, p, 1 - p]
    P[0, 1] = [0.0, 1 - p, p]
    P[1, :, 1] = 1.0
    P[2, :, 2] = 1.0
    r = np.zeros((3, 2))
    r[1] = 1.0
    return PlanningModel(P, r, gamma)


def check_mcts_stochastic(n: int, rng: np.random.Generator, expansions: int = 200, fanout: int = 32,
                          min_rate: float = 0.95) -> Check:
    model = two_armed_model()
    critic = vi_critic(model, 2000)
    budget = SearchBudget(breadth=2, depth=2, proposal_width=2, fanout=fanout, expansions=expansions)
    hits = sum(mcts(model, critic, 0, budget, rng).action == 0 for _ in range(n))
    return Check("planners.mcts_stochastic", hits >= min_rate * n, hits / n - min_rate)


# ----------------------------------------------------------------------------------
# agent and harness


def _small_runs(n: int, rng: np.random.Generator, T: int = 300):
    for i in range(n):
        env = generate_environment(EnvGenConfig(3, 2), rng)
        variant = ("rafa-ps", "rafa-bonus", "rafa-bma")[i % 3]
        yield env, run(env, AgentConfig(variant=variant, T=T, seed=int(rng.integers(2**31))))


def check_agent_audits(n: int, rng: np.random.Generator) -> list[Check]:
    """Gain chain, switch-count law, policy constancy and regularity on short runs. Value: failing runs."""
    names = ("gain_chain", "switch_count", "epoch_drop", "policy_constancy", "regularity")
    failures = dict.fromkeys(names, 0)
    for env, record in _small_runs(n, rng):
        rep = audit(record, env)
        for name in names:
            failures[name] += not rep[name].ok
    return [Check(f"agent.{k}", v == 0, float(v)) for k, v in failures.items()]


def check_regret_nonnegative(n: int, rng: np.random.Generator, tol: float = 1e-6) -> Check:
    worst = math.inf
    for _ in range(n):
        S, A = int(rng.integers(2, 6)), int(rng.integers(2, 4))
        env = from_tabular(rng.dirichlet(np.ones(S), size=(S, A)), rng.random((S, A)), 0.9)
        oracle = RegretOracle(env)
        for _ in range(5):
            worst = min(worst, float(oracle.gap(rng.integers(0, A, size=S)).min()))
    return Check("harness.regret_nonnegative", worst >= -tol, worst + tol)


def check_cache_coherence(rng: np.random.Generator) -> Check:
    env = generate_environment(EnvGenConfig(4, 2), rng)
    oracle = RegretOracle(env)
    pi = rng.integers(0, 2, size=4)
    a = oracle.policy_value(pi).copy()
    oracle._cache.clear()
    b = oracle.policy_value(pi)
    return Check("harness.cache_coherence", bool(np.array_equal(a, b)), float(np.abs(a - b).max()))


def check_replay(rng: np.random.Generator) -> Check:
    env = generate_environment(EnvGenConfig(3, 2), rng)
    cfg = AgentConfig(T=200, seed=int(rng.integers(2**31)), switch=SwitchCondition("det-ratio-4"))
    a = list(run(env, cfg).step_lines())
    b = list(run(env, cfg).step_lines())
    return Check("harness.replay", a == b, float(sum(x != y for x, y in zip(a, b))))


def run_checks(scopes=SCOPES, seed: int = 0, scale: float = 1.0) -> list[Check]:
    """Run the checks for the selected scopes; ``scale`` multiplies every sample count."""
    unknown = set(scopes) - set(SCOPES)
    if unknown:
        raise ValueError(f"unknown verify scopes {sorted(unknown)}")
    rng = np.random.default_rng(seed)

    def n(k):
        return max(1, int(round(k * scale)))

    out = []
    if "mdp" in scopes:
        out += [check_kernel_rows(n(50), rng), check_optimality_dominance(n(50), rng)]
    if "posterior" in scopes:
        out += check_posterior_sequences(n(200), rng)
        out += [check_det_ratio_norm(n(200), rng), check_variance_contraction(n(40), 10_000, rng),
                check_regularity_pairs(n(100), rng)]
    if "planners" in scopes:
        out += [check_vi_certificate(n(20), rng), check_planner_equivalence(n(50), rng),
                check_mcts_stochastic(100, rng)]
    if "agent" in scopes:
        out += check_agent_audits(n(6), rng)
    if "harness" in scopes:
        out += [check_regret_nonnegative(n(50), rng), check_cache_coherence(rng), check_replay(rng)]
    return out
