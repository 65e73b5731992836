"""Experiment configuration: one YAML file fully determines a run or sweep.

Schema (version 1)::

    schema_version: 1
    environment:              # exactly one of generator / chain / path
      generator: {n_states: 5, n_actions: 3, feature_dim: 75, gamma: 0.9, lam: 1.0,
                  mode: dirichlet-tabular, alpha: 1.0, reward: uniform, rho: uniform}
      chain: {n_states: 6, gamma: 0.9, p_forward: 0.9, small_reward: 0.05, big_reward: 1.0}
      path: env.json          # a saved LinearMixtureMdp
    agent:                    # AgentConfig fields
      variant: rafa-ps        # rafa-ps | rafa-bonus | rafa-bma
      planner: vi             # vi | tree | beam | mcts
      budget: {breadth: 2, depth: 2, proposal_width: 2, fanout: 1, expansions: 50}
      critic_horizon: null
      epsilon: 0.01
      L: null
      switch: {kind: entropy-log2, period: 1}
      T: 1000
      seed: 0
      lam: 1.0
      sigma: 1.0
      myopic: false
    harness:
      seeds: [0, 1, 2]
      T_grid: [500, 2000, 8000]
      out: runs/default       # overridden by $RAFA_OUT
      configs:                # sweep members: id -> agent overrides (empty: one member "default")
        ps: {variant: rafa-ps}
        myopic: {myopic: true}

Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .agent import AgentConfig, SwitchCondition
from .mdp import ConfigurationError, EnvGenConfig, LinearMixtureMdp, delayed_reward_chain
from .planners import SearchBudget

SCHEMA_VERSION = 1
OUT_ENV_VAR = "RAFA_OUT"
_CHAIN_KEYS = ("n_states", "gamma", "p_forward", "small_reward", "big_reward")


def _check_keys(section: str, data, allowed) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{section}: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{section}: unknown keys {unknown}")
    return data


def _names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def agent_from_dict(data: dict, base: AgentConfig | None = None) -> AgentConfig:
    data = dict(_check_keys("agent", data, _names(AgentConfig)))
    if "budget" in data:
        data["budget"] = SearchBudget(**_check_keys("agent.budget", data["budget"], _names(SearchBudget)))
    if "switch" in data:
        data["switch"] = SwitchCondition(**_check_keys("agent.switch", data["switch"], _names(SwitchCondition)))
    try:
        return replace(base, **data) if base else AgentConfig(**data)
    except TypeError as exc:
        raise ConfigurationError(f"agent: {exc}") from exc


@dataclass
class EnvironmentSpec:
    generator: EnvGenConfig | None = None
    chain: dict | None = None
    path: str | None = None

    def build(self, seed: int):
        """An env_spec usable by the harness: generator configs draw per seed, others are fixed."""
        if self.generator is not None:
            return self.generator
        if self.chain is not None:
            return delayed_reward_chain(**self.chain)
        return LinearMixtureMdp.load(self.path)

    def to_dict(self) -> dict:
        if self.generator is not None:
            return {"generator": dict(self.generator.__dict__)}
        if self.chain is not None:
            return {"chain": dict(self.chain)}
        return {"path": self.path}


@dataclass
class HarnessConfig:
    seeds: list = field(default_factory=lambda: [0])
    T_grid: list = field(default_factory=list)
    out: str = "runs/default"
    configs: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    environment: EnvironmentSpec
    agent: AgentConfig
    harness: HarnessConfig
    schema_version: int = SCHEMA_VERSION

    def out_dir(self, override: str | None = None) -> Path:
        return Path(override or os.environ.get(OUT_ENV_VAR) or self.harness.out)

    def members(self) -> dict:
        """Sweep members: config_id -> AgentConfig."""
        if not self.harness.configs:
            return {"default": self.agent}
        return {cid: agent_from_dict(over or {}, self.agent) for cid, over in self.harness.configs.items()}

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "environment": self.environment.to_dict(),
                "agent": self.agent.to_dict(), "harness": dict(self.harness.__dict__)}


def from_dict(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    data = _check_keys("config", data, ("schema_version", "environment", "agent", "harness"))
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")

    env = _check_keys("environment", data.get("environment"), ("generator", "chain", "path"))
    if len(env) != 1:
        raise ConfigurationError("environment: give exactly one of generator, chain, path")
    spec = EnvironmentSpec()
    if "generator" in env:
        gen = _check_keys("environment.generator", env["generator"], _names(EnvGenConfig))
        spec.generator = EnvGenConfig(**gen)
    elif "chain" in env:
        spec.chain = dict(_check_keys("environment.chain", env["chain"], _CHAIN_KEYS))
    else:
        path = Path(env["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigurationError(f"environment.path: no such file {path}")
        spec.path = str(path)

    agent = agent_from_dict(data.get("agent") or {})
    h = dict(_check_keys("harness", data.get("harness"), _names(HarnessConfig)))
    harness = HarnessConfig(**h)
    harness.seeds = [int(s) for s in harness.seeds]
    harness.T_grid = [int(t) for t in harness.T_grid]
    if not isinstance(harness.configs, dict):
        raise ConfigurationError("harness.configs must be a mapping")
    cfg = ExperimentConfig(spec, agent, harness, version)
    cfg.members()  # validate overrides early
    return cfg


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return from_dict(data or {}, path.parent)


def ensure_writable(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out):
            pass
    except OSError as exc:
        raise ConfigurationError(f"output directory not writable: {out} ({exc})") from exc
    return out
