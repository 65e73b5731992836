"""Conjugate Gaussian belief over the mixture weights.

The belief is N(mean, precision^-1) with precision = lam*I + sum psi psi^T / sigma^2, fitted by
value-targeted regression on pairs (psi_V(s_t, a_t), V(s_{t+1})).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

LOG_2PI_E = 1.0 + np.log(2.0 * np.pi)


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Observation:
    psi: np.ndarray
    y: float

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(psi)) and np.isfinite(self.y)):
            raise ValueError("observation must be finite")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Immutable snapshot of the belief; ``update`` returns a new snapshot.

    ``covariance`` is only carried along when built through the Sherman-Morrison path
    (``fast=True``); otherwise every query goes through a Cholesky factor of the precision.
    """

    precision: np.ndarray
    xty: np.ndarray
    lam: float = 1.0
    sigma: float = 1.0
    n_obs: int = 0
    covariance: np.ndarray | None = None

    @classmethod
    def prior(cls, d: int, lam: float = 1.0, sigma: float = 1.0, fast: bool = False) -> "GaussianPosterior":
        if d < 1 or lam <= 0 or sigma <= 0:
            raise ValueError("need d >= 1, lam > 0, sigma > 0")
        cov = np.eye(d) / lam if fast else None
        return cls(np.eye(d) * lam, np.zeros(d), float(lam), float(sigma), 0, cov)

    @property
    def d(self) -> int:
        return self.xty.shape[0]

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the precision."""
        try:
            return np.linalg.cholesky(self.precision)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("precision matrix is not positive definite") from exc

    @cached_property
    def mean(self) -> np.ndarray:
        if self.covariance is not None:
            return self.covariance @ self.xty
        return cho_solve((self.chol, True), self.xty)

    @cached_property
    def logdet(self) -> float:
        return float(2.0 * np.log(np.diag(self.chol)).sum())

    def update(self, obs: Observation) -> "GaussianPosterior":
        psi = obs.psi
        if psi.shape != (self.d,):
            raise ValueError(f"psi must have shape ({self.d},), got {psi.shape}")
        w = 1.0 / self.sigma**2
        precision = self.precision + w * np.outer(psi, psi)
        xty = self.xty + w * obs.y * psi
        cov = None
        if self.covariance is not None:
            u = self.covariance @ psi
            cov = self.covariance - np.outer(u, u) * (w / (1.0 + w * psi @ u))
        return GaussianPosterior(precision, xty, self.lam, self.sigma, self.n_obs + 1, cov)

    def quad_inv(self, psi) -> np.ndarray:
        """psi^T precision^-1 psi, vectorized over leading axes of ``psi``."""
        psi = np.asarray(psi, dtype=float)
        flat = psi.reshape(-1, self.d)
        z = solve_triangular(self.chol, flat.T, lower=True)
        return (z * z).sum(axis=0).reshape(psi.shape[:-1])

    # serialization -----------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian_posterior",
            "version": 1,
            "d": self.d,
            "lam": self.lam,
            "sigma": self.sigma,
            "n_obs": self.n_obs,
            "precision": self.precision.tolist(),
            "xty": self.xty.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianPosterior":
        if data.get("kind") != "gaussian_posterior":
            raise ValueError("not a serialized gaussian_posterior")
        precision = np.asarray(data["precision"], dtype=float)
        xty = np.asarray(data["xty"], dtype=float)
        if precision.shape != (data["d"], data["d"]) or xty.shape != (data["d"],):
            raise ValueError("posterior arrays do not match the declared dimension")
        return cls(precision, xty, float(data["lam"]), float(data["sigma"]), int(data["n_obs"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "GaussianPosterior":
        return cls.from_dict(json.loads(Path(path).read_text()))


def update(post: GaussianPosterior, obs: Observation) -> GaussianPosterior:
    return post.update(obs)


def entropy(post: GaussianPosterior) -> float:
    """Differential entropy of N(mean, precision^-1); it falls as data accumulates."""
    return 0.5 * post.d * LOG_2PI_E - 0.5 * post.logdet


def information_gain(post: GaussianPosterior, psi) -> np.ndarray | float:
    """1/2 log(1 + psi^T precision^-1 psi / sigma^2), by the matrix determinant lemma."""
    g = 0.5 * np.log1p(post.quad_inv(psi) / post.sigma**2)
    return float(g) if np.ndim(g) == 0 else g


def sample(post: GaussianPosterior, rng: np.random.Generator) -> np.ndarray:
    # precision = L L^T  =>  L^-T z ~ N(0, precision^-1)
    z = rng.standard_normal(post.d)
    return post.mean + solve_triangular(post.chol, z, lower=True, trans="T")


def bma_parameter(post: GaussianPosterior) -> np.ndarray:
    """Posterior mean; psi . mean equals the posterior average of psi . theta."""
    return post.mean.copy()


def bonus(post: GaussianPosterior, psi, L: float):
    """Optimistic reward bonus sqrt(2) * L * sqrt(information gain)."""
    if L <= 0:
        raise ValueError("value bound L must be positive")
    return np.sqrt(2.0) * L * np.sqrt(information_gain(post, psi))


def ridge_solution(psis, ys, lam: float, sigma: float = 1.0) -> np.ndarray:
    """Dense normal-equation solve, independent of the incremental path (used in audits)."""
    X = np.asarray(psis, dtype=float).reshape(-1, np.shape(psis)[-1])
    y = np.asarray(ys, dtype=float).reshape(-1)
    A = lam * np.eye(X.shape[1]) + X.T @ X / sigma**2
    return np.linalg.solve(A, X.T @ y / sigma**2)


def entropy_budget(d: int, T: int, R: float, lam: float, sigma: float = 1.0) -> float:
    """Upper bound on H_0 - H_T from the trace-determinant inequality."""
    return 0.5 * d * (np.log(lam + T * R**2 / (d * sigma**2)) - np.log(lam))


def regularity_coefficient(d: int) -> float:
    return d / np.log1p(d)


def probabilistic_value_bound(R: float, lam: float, d: int, T: int, delta: float, c: float = 1.0) -> float:
    """High-probability bound on |V_t(s)| over T steps for a Gaussian linear model.

    Reporting helper only; runtime bonuses use the deterministic bound r_max / (1 - gamma).
    """
    return (c + 1.0) * R * np.sqrt(2.0 * lam * d * np.log(2.0 * d * T / delta))
