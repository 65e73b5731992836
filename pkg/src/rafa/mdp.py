"""Finite linear-mixture MDPs and the exact Bellman machinery used as ground truth.

Transition kernels are linear in a known basis, ``P_theta(s'|s,a) = phi(s'|s,a) . theta``.
Array conventions used throughout the package:

    phi     (S, A, S, d)   basis feature per (s, a, s')
    P       (S, A, S)      transition kernel
    r       (S, A)         reward table
    V       (S,)           state values
    Q       (S, A)         action values
    pi      (S,)           deterministic policy, int action per state
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

ROW_TOL = 1e-12
LINEAR_SOLVE_TOL = 1e-8
FIXED_POINT_TOL = 1e-6
_EXACT_CORNER_MAX_STATES = 12


class ConfigurationError(ValueError):
    """Raised for configurations that cannot describe a valid experiment."""


@dataclass(frozen=True, eq=False)
class LinearMixtureMdp:
    phi: np.ndarray
    theta_star: np.ndarray
    reward: np.ndarray
    gamma: float
    rho: np.ndarray
    value_bound: float = 0.0  # 0 means r_max / (1 - gamma)
    feature_bound: float = field(default=0.0)

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        theta = np.asarray(self.theta_star, dtype=float).reshape(-1)
        reward = np.asarray(self.reward, dtype=float)
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        if phi.ndim != 4 or phi.shape[0] != phi.shape[2]:
            raise ConfigurationError(f"phi must have shape (S, A, S, d), got {phi.shape}")
        S, A, _, d = phi.shape
        if theta.shape != (d,):
            raise ConfigurationError(f"theta_star must have shape ({d},), got {theta.shape}")
        if reward.shape != (S, A):
            raise ConfigurationError(f"reward must have shape ({S}, {A}), got {reward.shape}")
        if rho.shape != (S,):
            raise ConfigurationError(f"rho must have shape ({S},), got {rho.shape}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(theta))):
            raise ConfigurationError("phi and theta_star must be finite")
        if reward.min() < 0.0 or reward.max() > 1.0:
            raise ConfigurationError("rewards must lie in [0, 1]")
        if rho.min() < 0.0 or abs(rho.sum() - 1.0) > ROW_TOL * S:
            raise ConfigurationError("rho must be a probability vector")
        P = phi @ theta
        if P.min() < -ROW_TOL or np.abs(P.sum(axis=2) - 1.0).max() > 1e-9:
            raise ConfigurationError("phi . theta_star is not a valid transition kernel")

        for name, arr in (("phi", phi), ("theta_star", theta), ("reward", reward), ("rho", rho)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))
        L = float(self.value_bound) or float(reward.max()) / (1.0 - self.gamma)
        object.__setattr__(self, "value_bound", L)
        R = float(self.feature_bound) or _feature_norm_bound(phi, L)
        if R < _feature_norm_bound(phi, L) - 1e-9:
            raise ConfigurationError(f"feature_bound {R} is smaller than the computed bound")
        object.__setattr__(self, "feature_bound", R)

    @property
    def n_states(self) -> int:
        return self.phi.shape[0]

    @property
    def n_actions(self) -> int:
        return self.phi.shape[1]

    @property
    def dim(self) -> int:
        return self.phi.shape[3]

    @cached_property
    def _kernel(self) -> np.ndarray:
        P = transition_kernel(self, self.theta_star)
        P.setflags(write=False)
        return P

    def kernel(self) -> np.ndarray:
        return self._kernel

    # serialization -----------------------------------------------------------------

    def to_dict(self) -> dict:
        S, A, _, d = self.phi.shape
        return {
            "kind": "linear_mixture_mdp",
            "version": 1,
            "n_states": S,
            "n_actions": A,
            "feature_dim": d,
            "gamma": self.gamma,
            "value_bound": self.value_bound,
            "feature_bound": self.feature_bound,
            "rho": self.rho.tolist(),
            "reward": self.reward.tolist(),
            "theta_star": self.theta_star.tolist(),
            "phi": self.phi.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearMixtureMdp":
        if data.get("kind") != "linear_mixture_mdp":
            raise ConfigurationError("not a serialized linear_mixture_mdp")
        phi = np.asarray(data["phi"], dtype=float)
        expected = (data["n_states"], data["n_actions"], data["n_states"], data["feature_dim"])
        if phi.shape != expected:
            raise ConfigurationError(f"phi shape {phi.shape} does not match header {expected}")
        return cls(
            phi=phi,
            theta_star=np.asarray(data["theta_star"], dtype=float),
            reward=np.asarray(data["reward"], dtype=float),
            gamma=data["gamma"],
            rho=np.asarray(data["rho"], dtype=float),
            value_bound=data["value_bound"],
            feature_bound=data["feature_bound"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "LinearMixtureMdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _feature_norm_bound(phi: np.ndarray, L: float) -> float:
    """Upper bound on ||psi_V(s,a)||_2 over all V in the box [-L, L]^S.

    The norm is convex in V so its maximum over the box sits at a corner; corners are
    enumerated for small S, otherwise the triangle inequality bound is used.
    """
    S = phi.shape[0]
    if S <= _EXACT_CORNER_MAX_STATES:
        corners = np.array(list(itertools.product((-1.0, 1.0), repeat=S))) * L
        best = 0.0
        for block in phi.reshape(-1, S, phi.shape[3]):
            best = max(best, float(np.linalg.norm(corners @ block, axis=1).max()))
        return best
    return float(L * np.linalg.norm(phi, axis=-1).sum(axis=2).max())


# ----------------------------------------------------------------------------------
# features and kernels


def value_feature(mdp: LinearMixtureMdp, V, s: int | None = None, a: int | None = None) -> np.ndarray:
    """psi_V(s,a) = sum_{s'} phi(s'|s,a) V(s').

    With ``s`` and ``a`` omitted the full (S, A, d) table is returned.
    """
    V = np.asarray(V, dtype=float)
    if V.shape != (mdp.n_states,):
        raise ValueError(f"V must have shape ({mdp.n_states},), got {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("V must be finite")
    if s is None:
        return np.einsum("ijkd,k->ijd", mdp.phi, V)
    return V @ mdp.phi[s, a]


def project_kernel(P: np.ndarray) -> np.ndarray:
    """Clip negative entries to zero and renormalize rows; all-zero rows become uniform.

    Rows that are already valid (within ``ROW_TOL``) are returned untouched.
    """
    P = np.asarray(P, dtype=float)
    bad = (P.min(axis=-1) < 0.0) | (np.abs(P.sum(axis=-1) - 1.0) > ROW_TOL)
    if not bad.any():
        return P
    out = P.copy()
    rows = np.clip(out[bad], 0.0, None)
    mass = rows.sum(axis=-1, keepdims=True)
    n = P.shape[-1]
    rows = np.where(mass > 0.0, rows / np.where(mass > 0.0, mass, 1.0), 1.0 / n)
    out[bad] = rows
    return out


def transition_kernel(mdp: LinearMixtureMdp, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return project_kernel(mdp.phi @ theta)


def step(mdp: LinearMixtureMdp, s: int, a: int, rng: np.random.Generator, P: np.ndarray | None = None):
    """Sample s' ~ P_theta*(.|s,a) by inverse CDF; the reward is the known r(s,a)."""
    row = (mdp.kernel() if P is None else P)[s, a]
    return sample_categorical(row, rng), float(mdp.reward[s, a])


def sample_categorical(row: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(row)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    # guard against u landing on the float-rounded last edge
    return min(idx, len(row) - 1)


# ----------------------------------------------------------------------------------
# Bellman machinery


def greedy(Q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; np.argmax returns the lowest index among ties."""
    return np.argmax(Q, axis=1)


def _check_model(P, r, gamma):
    P = np.asarray(P, dtype=float)
    r = np.asarray(r, dtype=float)
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(r))):
        raise ValueError("model must be finite")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    return P, r


def policy_evaluation(P, r, gamma: float, pi, tol: float = LINEAR_SOLVE_TOL) -> np.ndarray:
    """Solve (I - gamma P^pi) V = r^pi directly and check the fixed-point residual."""
    P, r = _check_model(P, r, gamma)
    pi = np.asarray(pi, dtype=int)
    S = P.shape[0]
    idx = np.arange(S)
    P_pi = P[idx, pi]
    r_pi = r[idx, pi]
    V = np.linalg.solve(np.eye(S) - gamma * P_pi, r_pi)
    residual = np.abs(V - r_pi - gamma * P_pi @ V).max()
    if residual > tol:
        raise ArithmeticError(f"policy evaluation residual {residual:.3e} exceeds tol {tol:.1e}")
    return V


def bellman_backup(P, r, gamma, V) -> np.ndarray:
    return r + gamma * (P @ V)


def optimal_solution(P, r, gamma: float, tol: float = LINEAR_SOLVE_TOL, max_iter: int = 10_000):
    """Policy iteration with exact evaluation; returns (pi*, V*).

    A policy only changes at a state when the improvement exceeds a tiny margin, which
    prevents cycling between tied actions.
    """
    P, r = _check_model(P, r, gamma)
    pi = greedy(r)
    for _ in range(max_iter):
        V = policy_evaluation(P, r, gamma, pi, tol)
        Q = bellman_backup(P, r, gamma, V)
        best = greedy(Q)
        gain = Q[np.arange(len(pi)), best] - Q[np.arange(len(pi)), pi]
        improve = gain > 1e-12 * max(1.0, np.abs(V).max())
        if not improve.any():
            break
        pi = np.where(improve, best, pi)
    else:
        raise ArithmeticError("policy iteration did not converge")
    Q = bellman_backup(P, r, gamma, V)
    residual = np.abs(V - Q.max(axis=1)).max()
    if residual > tol:
        raise ArithmeticError(f"optimality residual {residual:.3e} exceeds tol {tol:.1e}")
    return greedy(Q), V


# ----------------------------------------------------------------------------------
# environment construction


@dataclass
class EnvGenConfig:
    n_states: int = 5
    n_actions: int = 3
    feature_dim: int | None = None
    gamma: float = 0.9
    lam: float = 1.0
    mode: str = "dirichlet-tabular"  # or raw-gaussian-projected
    alpha: float = 1.0
    reward: str = "uniform"  # uniform | bernoulli-sparse
    rho: str = "uniform"  # uniform | first


def from_tabular(P, r, gamma: float, rho=None, value_bound: float = 0.0) -> LinearMixtureMdp:
    """Embed a tabular MDP as a linear mixture with one-hot basis, d = S*A*S.

    theta* holds the tabular probabilities in (s, a, s') order.
    """
    P = np.asarray(P, dtype=float)
    S, A, _ = P.shape
    d = S * A * S
    phi = np.eye(d).reshape(S, A, S, d)
    rho = np.full(S, 1.0 / S) if rho is None else np.asarray(rho, dtype=float)
    return LinearMixtureMdp(phi=phi, theta_star=P.reshape(-1), reward=r, gamma=gamma, rho=rho,
                            value_bound=value_bound)


def generate_environment(cfg: EnvGenConfig, rng: np.random.Generator) -> LinearMixtureMdp:
    S, A = cfg.n_states, cfg.n_actions
    if S < 1 or A < 1:
        raise ConfigurationError("n_states and n_actions must be positive")
    if not 0.0 < cfg.gamma < 1.0:
        raise ConfigurationError("gamma must lie in (0, 1)")

    if cfg.reward == "uniform":
        r = rng.random((S, A))
    elif cfg.reward == "bernoulli-sparse":
        r = (rng.random((S, A)) < 0.2).astype(float)
    else:
        raise ConfigurationError(f"unknown reward kind {cfg.reward!r}")
    if cfg.rho == "uniform":
        rho = np.full(S, 1.0 / S)
    elif cfg.rho == "first":
        rho = np.eye(S)[0]
    else:
        raise ConfigurationError(f"unknown rho kind {cfg.rho!r}")

    rows = rng.dirichlet(np.full(S, cfg.alpha), size=(S, A))
    if cfg.mode == "dirichlet-tabular":
        if cfg.feature_dim not in (None, S * A * S):
            raise ConfigurationError(
                f"dirichlet-tabular needs feature_dim = S*A*S = {S * A * S}, got {cfg.feature_dim}")
        return from_tabular(rows, r, cfg.gamma, rho)

    if cfg.mode == "raw-gaussian-projected":
        d = cfg.feature_dim
        if d is None or d < 1:
            raise ConfigurationError("raw-gaussian-projected needs feature_dim >= 1")
        theta = rng.normal(0.0, np.sqrt(cfg.lam), size=d)
        while np.linalg.norm(theta) < 1e-8:
            theta = rng.normal(0.0, np.sqrt(cfg.lam), size=d)
        raw = rng.normal(size=(S, A, S, d))
        # move each raw feature onto the hyperplane {x : x . theta = target probability}
        shift = (rows - raw @ theta) / (theta @ theta)
        phi = raw + shift[..., None] * theta
        return LinearMixtureMdp(phi=phi, theta_star=theta, reward=r, gamma=cfg.gamma, rho=rho)

    raise ConfigurationError(f"unknown generator mode {cfg.mode!r}")


def delayed_reward_chain(n_states: int = 6, gamma: float = 0.9, p_forward: float = 0.9,
                         small_reward: float = 0.05, big_reward: float = 1.0) -> LinearMixtureMdp:
    """Chain where staying at the left end pays a little now and the far right end pays more.

    Action 0 moves left deterministically, action 1 moves right with ``p_forward`` (else
    stays). Start state is 0.
    """
    S, A = n_states, 2
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))
    for s in range(S):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, min(s + 1, S - 1)] += p_forward
        P[s, 1, s] += 1.0 - p_forward
    r[0, 0] = small_reward
    r[S - 1, 1] = big_reward
    return from_tabular(P, r, gamma, rho=np.eye(S)[0])
