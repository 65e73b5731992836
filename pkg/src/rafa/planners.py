"""Epsilon-optimal planners on an estimated model (P_hat, r_hat).

Every argmax breaks ties toward the lowest action index.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mdp import ConfigurationError, greedy


@dataclass(frozen=True)
class PlanningModel:
    P: np.ndarray  # (S, A, S)
    r: np.ndarray  # (S, A)
    gamma: float

    @property
    def n_states(self) -> int:
        return self.r.shape[0]

    @property
    def n_actions(self) -> int:
        return self.r.shape[1]

    def successor(self) -> np.ndarray:
        """Deterministic-mode transition: most probable next state (lowest index on ties)."""
        return np.argmax(self.P, axis=2)


@dataclass
class PlannerResult:
    pi: np.ndarray
    v: np.ndarray
    q: np.ndarray
    epsilon_certificate: float
    planner_id: str
    horizon_used: int
    nodes_expanded: int = 0


@dataclass(frozen=True)
class SearchBudget:
    breadth: int = 2  # B
    depth: int = 2  # U; rollouts carry U + 1 actions
    proposal_width: int = 2  # L for beam / MCTS proposals
    fanout: int = 1  # L' sampled successors per MCTS action
    expansions: int = 50  # E
    max_rollouts: int = 1_000_000

    def __post_init__(self):
        for name in ("breadth", "proposal_width", "fanout", "expansions", "max_rollouts"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.depth < 0:
            raise ConfigurationError("depth must be non-negative")


def required_horizon(gamma: float, epsilon: float, L: float) -> int:
    """Smallest U with gamma^(U-1) * L <= epsilon, i.e. 1 + ceil(log_gamma(epsilon / L))."""
    if not 0.0 < gamma < 1.0 or epsilon <= 0.0:
        raise ValueError("need 0 < gamma < 1 and epsilon > 0")
    if epsilon >= L:
        warnings.warn(f"epsilon={epsilon} >= L={L}: horizon bound is vacuous, using U=1", stacklevel=2)
        return 1
    return 1 + math.ceil(math.log(epsilon / L) / math.log(gamma))


def bellman_residual(q, v, model: PlanningModel) -> float:
    """max_{s,a} |q(s,a) - r(s,a) - gamma (P v)(s,a)| over cells where q is defined."""
    res = np.abs(q - model.r - model.gamma * (model.P @ v))
    res = res[np.isfinite(q)]
    return float(res.max()) if res.size else 0.0


def epsilon_check(result: PlannerResult, model: PlanningModel) -> float:
    return bellman_residual(result.q, result.v, model)


def value_iteration(model: PlanningModel, U: int) -> PlannerResult:
    """Truncated value iteration: U Bellman backups starting from V = 0.

    Returns the greedy policy on the last Q together with V = max_a Q. The certificate is
    the residual of one further backup, bounded by gamma^U * max|r|.
    """
    if U < 1:
        raise ConfigurationError(f"horizon U must be >= 1, got {U}")
    P, r, gamma = model.P, model.r, model.gamma
    v = np.zeros(model.n_states)
    for _ in range(U):
        q = r + gamma * (P @ v)
        v = q.max(axis=1)
    pi = greedy(q)
    cert = bellman_residual(q, v, model)
    return PlannerResult(pi=pi, v=v, q=q, epsilon_certificate=cert, planner_id="vi", horizon_used=U)


def vi_critic(model: PlanningModel, horizon: int) -> np.ndarray:
    return value_iteration(model, horizon).v


# ----------------------------------------------------------------------------------
# deterministic search planners


def _one_step_scores(model: PlanningModel, succ: np.ndarray, critic: np.ndarray, s: int) -> np.ndarray:
    return model.r[s] + model.gamma * critic[succ[s]]


def elite(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k action indices by score; stable sort keeps lower indices first on ties."""
    return np.argsort(-scores, kind="stable")[:k]


def _rollout_cap(budget: SearchBudget, width: int) -> None:
    if width ** (budget.depth + 1) > budget.max_rollouts:
        raise ConfigurationError(
            f"search tree of {width}^{budget.depth + 1} rollouts exceeds cap {budget.max_rollouts}")


@dataclass
class SearchOutcome:
    action: int
    rollout: list  # [(s0, a0), (s1, a1), ..., (s_{U+1}, None)]
    value: float
    root_q: np.ndarray  # rollout value per root action, -inf where not proposed
    nodes_expanded: int = 0


def tree_search(model: PlanningModel, critic: np.ndarray, s0: int, budget: SearchBudget) -> SearchOutcome:
    """Exhaustive search over the B^(U+1) tree of Elite proposals.

    A rollout scores sum_u gamma^u r(s_u, a_u) + gamma^(U+1) critic(s_{U+1}).
    """
    B = min(budget.breadth, model.n_actions)
    _rollout_cap(budget, B)
    succ = model.successor()
    gamma = model.gamma
    expanded = 0

    def best(s: int, level: int):
        nonlocal expanded
        expanded += 1
        cand = elite(_one_step_scores(model, succ, critic, s), B)
        out = np.full(model.n_actions, -np.inf)
        tails = {}
        for a in cand:
            nxt = succ[s, a]
            if level == budget.depth:
                tail, path = critic[nxt], [(int(nxt), None)]
            else:
                tail, path, _ = best(nxt, level + 1)
            out[a] = model.r[s, a] + gamma * tail
            tails[a] = path
        a_star = int(np.argmax(out))
        return out[a_star], [(int(s), a_star)] + tails[a_star], out

    value, rollout, root_q = best(s0, 0)
    return SearchOutcome(int(rollout[0][1]), rollout, float(value), root_q, expanded)


def beam_search(model: PlanningModel, critic: np.ndarray, s0: int, budget: SearchBudget) -> SearchOutcome:
    """Beam search with global pruning to B partial rollouts per level.

    Each beam proposes L_prop actions (top by r + gamma * critic). Candidates are ranked by
    their discounted return so far plus the discounted critic tail, which orders siblings
    exactly by Q_hat(s_u, a) and makes partial rollouts from different parents comparable.
    """
    B = budget.breadth
    Lp = min(budget.proposal_width, model.n_actions)
    if Lp < min(B, model.n_actions):
        raise ConfigurationError("proposal width must be at least the beam breadth")
    succ = model.successor()
    gamma = model.gamma
    # beam entry: (return so far, state path, action path)
    beams = [(0.0, [int(s0)], [])]
    expanded = 0
    for u in range(budget.depth + 1):
        cands = []
        for ret, states, actions in beams:
            s = states[-1]
            expanded += 1
            q = _one_step_scores(model, succ, critic, s)
            for a in elite(q, Lp):
                new_ret = ret + gamma**u * model.r[s, a]
                score = new_ret + gamma ** (u + 1) * critic[succ[s, a]]
                cands.append((score, new_ret, states + [int(succ[s, a])], actions + [int(a)]))
        # stable sort: earlier beams and lower actions win ties
        order = sorted(range(len(cands)), key=lambda i: -cands[i][0])
        beams = [cands[i][1:] for i in order[:B]]

    finals = [(ret + gamma ** (budget.depth + 1) * critic[states[-1]], states, actions)
              for ret, states, actions in beams]
    root_q = np.full(model.n_actions, -np.inf)
    for val, _, actions in finals:
        root_q[actions[0]] = max(root_q[actions[0]], val)
    a0 = int(np.argmax(root_q))
    val, states, actions = max((f for f in finals if f[2][0] == a0), key=lambda f: f[0])
    rollout = list(zip(states[:-1], actions)) + [(states[-1], None)]
    return SearchOutcome(a0, rollout, float(val), root_q, expanded)


# ----------------------------------------------------------------------------------
# Monte-Carlo tree search


@dataclass
class _StateNode:
    s: int
    value: float
    children: dict = field(default_factory=dict)  # action -> _ActionNode


@dataclass
class _ActionNode:
    a: int
    reward: float
    children: list  # sampled _StateNode successors
    q: float = 0.0


def mcts(model: PlanningModel, critic: np.ndarray, s0: int, budget: SearchBudget,
         rng: np.random.Generator) -> SearchOutcome:
    """MCTS with greedy selection on Q_hat and mean-value backups.

    Selection takes the child with the highest Q_hat (no exploration term) and then a
    uniformly drawn sampled successor. Each expansion proposes L actions, samples L'
    successors per action from the model, scores leaves with the critic and backs up
    Q_hat = r + gamma * mean child value, V_hat = max Q_hat to the root.
    """
    L = min(budget.proposal_width, model.n_actions)
    Lp = budget.fanout
    gamma = model.gamma
    expected = model.r + gamma * (model.P @ critic)
    cdf = np.cumsum(model.P, axis=2)
    root = _StateNode(int(s0), float(critic[s0]))

    def draw(s, a):
        u = rng.random(Lp) * cdf[s, a, -1]
        return np.minimum(np.searchsorted(cdf[s, a], u, side="right"), model.n_states - 1)

    for _ in range(budget.expansions):
        node, path = root, []
        while node.children:
            act = _best_action(node)
            path.append((node, act))
            node = act.children[rng.integers(len(act.children))] if len(act.children) > 1 else act.children[0]
        for a in elite(expected[node.s], L):
            kids = [_StateNode(int(sp), float(critic[sp])) for sp in draw(node.s, a)]
            act = _ActionNode(int(a), float(model.r[node.s, a]), kids)
            act.q = act.reward + gamma * np.mean([k.value for k in kids])
            node.children[int(a)] = act
        node.value = _best_action(node).q
        for parent, act in reversed(path):
            act.q = act.reward + gamma * np.mean([k.value for k in act.children])
            parent.value = _best_action(parent).q

    root_q = np.full(model.n_actions, -np.inf)
    for a, act in root.children.items():
        root_q[a] = act.q
    a0 = int(np.argmax(root_q))
    rollout, node = [], root
    while node.children:
        act = _best_action(node) if rollout else root.children[a0]
        rollout.append((node.s, act.a))
        node = max(act.children, key=lambda k: k.value)
    rollout.append((node.s, None))
    return SearchOutcome(a0, rollout, float(root_q[a0]), root_q, budget.expansions)


def _best_action(node: _StateNode) -> _ActionNode:
    # highest q, lowest action index on ties
    return max(sorted(node.children.values(), key=lambda c: c.a), key=lambda c: c.q)


# ----------------------------------------------------------------------------------
# policy-producing wrappers used by the agent


def search_policy(model: PlanningModel, kind: str, budget: SearchBudget, critic_horizon: int,
                  rng: np.random.Generator | None = None) -> PlannerResult:
    """Run a search planner from every state to build a full policy.

    q holds the root action values found by each search (NaN where not proposed); the
    certificate is measured on those cells only.
    """
    critic = vi_critic(model, critic_horizon)
    S, A = model.n_states, model.n_actions
    q = np.full((S, A), np.nan)
    pi = np.zeros(S, dtype=int)
    nodes = 0
    for s in range(S):
        if kind == "tree":
            out = tree_search(model, critic, s, budget)
        elif kind == "beam":
            out = beam_search(model, critic, s, budget)
        elif kind == "mcts":
            out = mcts(model, critic, s, budget, rng)
        else:
            raise ConfigurationError(f"unknown planner {kind!r}")
        finite = np.isfinite(out.root_q)
        q[s, finite] = out.root_q[finite]
        pi[s] = out.action
        nodes += out.nodes_expanded
    v = q[np.arange(S), pi]
    if kind == "mcts":
        P_eval = model
    else:
        P_eval = PlanningModel(np.eye(S)[model.successor()], model.r, model.gamma)
    cert = bellman_residual(q, v, P_eval)
    return PlannerResult(pi=pi, v=v, q=q, epsilon_certificate=cert, planner_id=kind,
                         horizon_used=budget.depth + 1, nodes_expanded=nodes)
