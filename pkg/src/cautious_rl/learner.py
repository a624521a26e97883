"""The optimistic learner and the training driver.

Tabular Q-learning runs on the on-the-fly product. When padding is on, every
step first asks the pessimistic learner for per-action violation bounds and
only picks among the permitted actions, trading value against risk.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cautious_rl.automata import Ldba, initial_frontier
from cautious_rl.env.base import AgentView, EnvModel
from cautious_rl.product import (
    Epsilon,
    ProductAction,
    ProductState,
    action_key,
    available_actions,
    initial_state,
    is_terminal,
    product_step,
    reward_and_update,
)
from cautious_rl.safety import (
    BeliefKernel,
    LocalSafety,
    PaddingParams,
    permissive_actions,
    schedule_horizon,
    schedule_kappa,
    violation_bound,
)

log = logging.getLogger(__name__)

__all__ = [
    "QTable",
    "TrainConfig",
    "EpisodeStats",
    "TrainResult",
    "GreedyPolicy",
    "q_update",
    "select_action",
    "run_episode",
    "train",
    "evaluate_policy",
]


class QTable:
    """Sparse action values; unseen pairs read ``q_init``."""

    def __init__(self, q_init: float = 0.0):
        self.q_init = q_init
        self.values: dict[tuple[ProductState, ProductAction], float] = {}
        self.updates: dict[tuple[ProductState, ProductAction], int] = {}

    def get(self, ps: ProductState, a: ProductAction) -> float:
        return self.values.get((ps, a), self.q_init)

    def max_value(self, ps: ProductState, actions: Sequence[ProductAction]) -> float:
        return max(self.values.get((ps, a), self.q_init) for a in actions)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    mu: float = 0.85
    # per-pair step size mu / (1 + n) ** mu_decay; 0 keeps it constant
    mu_decay: float = 0.0
    r_p: float = 10.0
    it_threshold: int = 1000
    episodes: int = 500
    tol: float = 1e-3
    window: int = 10
    stop_at_convergence: bool = False
    epsilon: float = 0.1
    epsilon_decay: float = 1.0
    epsilon_min: float = 0.0
    q_init: float = 0.0
    padding: bool = True
    use_prior: bool = True
    params: PaddingParams = field(default_factory=PaddingParams)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError("mu must lie in (0, 1]")
        if self.it_threshold < 1:
            raise ValueError("it_threshold must be >= 1")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def epsilon_at(self, episode: int) -> float:
        return max(self.epsilon_min, self.epsilon * self.epsilon_decay**episode)


@dataclass
class EpisodeStats:
    episode: int
    steps: int
    cause: str  # "sink", "accept" or "threshold"
    unsafe_entries: int
    resets: int
    reward: float
    forced: int
    max_dq: float

    @property
    def success(self) -> bool:
        """At least one full pass over the accepting sets and no sink entry."""
        return self.resets > 0 and self.cause != "sink"


def q_update(
    qt: QTable,
    ps: ProductState,
    a: ProductAction,
    r: float,
    ps2: ProductState,
    next_actions: Sequence[ProductAction] | None,
    mu: float,
    gamma: float,
) -> float:
    """One Q-learning backup; returns the signed change. ``None`` marks a terminal ``ps2``."""
    key = (ps, a)
    old = qt.values.get(key, qt.q_init)
    nxt = 0.0 if not next_actions else qt.max_value(ps2, next_actions)
    new = old + mu * (r + gamma * nxt - old)
    qt.values[key] = new
    qt.updates[key] = qt.updates.get(key, 0) + 1
    return new - old


def select_action(
    qt: QTable,
    ps: ProductState,
    permissive: Sequence[ProductAction],
    bounds: dict | None,
    r_p: float,
    epsilon: float,
    rng: np.random.Generator,
) -> ProductAction:
    """Epsilon-greedy over ``permissive`` on ``Q - r_p * U``; ties go to the lowest action id."""
    if not permissive:
        raise ValueError("empty permissive list")
    if epsilon > 0.0 and rng.random() < epsilon:
        return permissive[int(rng.integers(len(permissive)))]
    best, best_val = None, -math.inf
    for a in sorted(permissive, key=action_key):
        val = qt.get(ps, a)
        if bounds is not None:
            val -= r_p * bounds[a]
        if val > best_val:
            best, best_val = a, val
    return best


def _padded_choice(view, ldba, belief, ps, actions, cfg):
    """Permissive list, bounds and whether the fallback was forced."""
    params = cfg.params
    v = belief.visits(ps.s)
    horizon = schedule_horizon(v, params.r_o, params.n_h)
    ls = LocalSafety.for_product(view, ldba, belief, ps, horizon, params.r_o)
    bounds = {a: violation_bound(ps, a, belief, ls, ldba) for a in actions}
    n_allowed = sum(1 for u in bounds.values() if u < params.p_critical)
    if n_allowed:
        perm = permissive_actions(bounds, params.p_critical, schedule_kappa(v, n_allowed))
        return perm, bounds, False
    # every action is critical: take the least risky one anyway
    safest = min(actions, key=lambda a: (bounds[a], action_key(a)))
    return [safest], bounds, True


def run_episode(
    view,
    ldba: Ldba,
    qt: QTable,
    belief: BeliefKernel,
    cfg: TrainConfig,
    rng: np.random.Generator,
    episode: int = 0,
) -> tuple[QTable, BeliefKernel, EpisodeStats]:
    eps = cfg.epsilon_at(episode)
    ps = initial_state(view, ldba)
    fr = initial_frontier(ldba)
    steps = resets = forced = unsafe = 0
    total_reward = 0.0
    max_dq = 0.0
    cause = is_terminal(ps, ldba)
    actions = available_actions(ps, view, ldba)
    while cause is None and steps < cfg.it_threshold:
        if cfg.padding:
            perm, bounds, was_forced = _padded_choice(view, ldba, belief, ps, actions, cfg)
            if was_forced:
                forced += 1
                log.debug("forced_unsafe_choice state=%s action=%s", ps, perm[0])
        else:
            perm, bounds = sorted(actions, key=action_key), None
        a = select_action(qt, ps, perm, bounds, cfg.r_p, eps, rng)
        ps2 = product_step(ps, a, view, ldba, rng)
        if not isinstance(a, Epsilon):
            belief.record(ps.s, a, ps2.s)
        r, upd = reward_and_update(ps2, fr, cfg.r_p, ldba)
        fr = upd.frontier
        resets += upd.reset
        total_reward += r
        cause = is_terminal(ps2, ldba)
        next_actions = None if cause else available_actions(ps2, view, ldba)
        mu = cfg.mu
        if cfg.mu_decay:
            mu = cfg.mu / (1 + qt.updates.get((ps, a), 0)) ** cfg.mu_decay
        dq = q_update(qt, ps, a, r, ps2, next_actions, mu, cfg.gamma)
        max_dq = max(max_dq, abs(dq))
        steps += 1
        if cause == "sink":
            unsafe += 1
        ps, actions = ps2, next_actions
    stats = EpisodeStats(
        episode=episode,
        steps=steps,
        cause=cause or "threshold",
        unsafe_entries=unsafe,
        resets=resets,
        reward=total_reward,
        forced=forced,
        max_dq=max_dq,
    )
    return qt, belief, stats


class GreedyPolicy:
    """``argmax_a Q(ps, a)`` over the available actions, ties to the lowest id."""

    def __init__(self, qt: QTable, view, ldba: Ldba):
        self.qt = qt
        self.view = view
        self.ldba = ldba

    def __call__(self, ps: ProductState) -> ProductAction:
        actions = sorted(available_actions(ps, self.view, self.ldba), key=action_key)
        best, best_val = None, -math.inf
        for a in actions:
            val = self.qt.get(ps, a)
            if val > best_val:
                best, best_val = a, val
        return best


@dataclass
class TrainResult:
    qtable: QTable
    belief: BeliefKernel
    policy: GreedyPolicy
    stats: list[EpisodeStats]
    converged: bool
    converged_at: int | None


def train(
    env: EnvModel | AgentView,
    ldba: Ldba,
    cfg: TrainConfig,
    rng: np.random.Generator | int = 0,
) -> TrainResult:
    """Run episodes until the budget is spent (or convergence, if requested).

    Convergence means the largest Q change within an episode stayed below
    ``cfg.tol`` for ``cfg.window`` consecutive episodes; ``converged_at`` is
    the episode count at which that first happened.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    view = env if isinstance(env, AgentView) else AgentView(env)
    qt = QTable(cfg.q_init)
    belief = BeliefKernel(view.prior if cfg.use_prior else None)
    stats: list[EpisodeStats] = []
    quiet = 0
    converged_at = None
    for e in range(cfg.episodes):
        _, _, st = run_episode(view, ldba, qt, belief, cfg, rng, e)
        stats.append(st)
        quiet = quiet + 1 if st.max_dq < cfg.tol else 0
        if converged_at is None and quiet >= cfg.window:
            converged_at = e + 1
            if cfg.stop_at_convergence:
                break
    return TrainResult(
        qtable=qt,
        belief=belief,
        policy=GreedyPolicy(qt, view, ldba),
        stats=stats,
        converged=converged_at is not None,
        converged_at=converged_at,
    )


def evaluate_policy(
    env: EnvModel | AgentView,
    ldba: Ldba,
    policy,
    n_rollouts: int,
    rng: np.random.Generator | int = 0,
    it_threshold: int = 1000,
) -> tuple[float, float]:
    """Monte-Carlo satisfaction estimate and its 95% normal-approximation half-width.

    A rollout succeeds when it completes at least one pass over the accepting
    sets without entering a sink within ``it_threshold`` steps.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    view = env if isinstance(env, AgentView) else AgentView(env)
    wins = 0
    for _ in range(n_rollouts):
        ps = initial_state(view, ldba)
        fr = initial_frontier(ldba)
        resets = 0
        cause = is_terminal(ps, ldba)
        steps = 0
        while cause is None and steps < it_threshold:
            ps = product_step(ps, policy(ps), view, ldba, rng)
            _, upd = reward_and_update(ps, fr, 0.0, ldba)
            fr = upd.frontier
            resets += upd.reset
            cause = is_terminal(ps, ldba)
            steps += 1
        wins += resets > 0 and cause != "sink"
    p = wins / n_rollouts if n_rollouts else 0.0
    half = 1.96 * math.sqrt(p * (1 - p) / n_rollouts) if n_rollouts else 0.0
    return p, half
