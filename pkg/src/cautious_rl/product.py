"""On-the-fly product of an environment with an automaton, plus the reward rule.

The automaton coordinate is tracked by replaying labels; no product graph is
ever built here (the oracle module does that for small instances).
"""

from __future__ import annotations

from typing import AbstractSet, Hashable, NamedTuple, Union

import numpy as np

from cautious_rl.automata import FrontierUpdate, Ldba, accepting_frontier, step

__all__ = [
    "ProductState",
    "Epsilon",
    "ProductAction",
    "action_key",
    "initial_state",
    "available_actions",
    "product_step",
    "reward_and_update",
    "is_terminal",
]


class ProductState(NamedTuple):
    s: Hashable
    q: int


class Epsilon(NamedTuple):
    """Jump of the automaton to ``target`` without moving the environment."""

    target: int


ProductAction = Union[int, Epsilon]


def action_key(a: ProductAction) -> tuple[int, int]:
    """Fixed total order on product actions: env actions first, then epsilon targets."""
    if isinstance(a, Epsilon):
        return (1, a.target)
    return (0, a)


def initial_state(env, ldba: Ldba) -> ProductState:
    s0 = env.initial_state
    return ProductState(s0, step(ldba, ldba.init, env.label(s0)))


def available_actions(ps: ProductState, env, ldba: Ldba) -> tuple[ProductAction, ...]:
    return tuple(env.actions(ps.s)) + tuple(Epsilon(t) for t in ldba.eps[ps.q])


def product_step(
    ps: ProductState, pa: ProductAction, env, ldba: Ldba, rng: np.random.Generator
) -> ProductState:
    if isinstance(pa, Epsilon):
        return ProductState(ps.s, pa.target)
    s2 = env.sample(ps.s, pa, rng)
    return ProductState(s2, step(ldba, ps.q, env.label(s2)))


def reward_and_update(
    ps2: ProductState, fr: AbstractSet[int], r_p: float, ldba: Ldba
) -> tuple[float, FrontierUpdate]:
    """Pay ``r_p`` when entering a state the frontier still owes, then advance it."""
    reward = r_p if ps2.q in fr else 0.0
    return reward, accepting_frontier(ps2.q, fr, ldba)


def is_terminal(ps: ProductState, ldba: Ldba) -> str | None:
    """``"sink"`` or ``"accept"`` when an episode must stop at ``ps``, else None."""
    if ps.q in ldba.sinks:
        return "sink"
    if ps.q in ldba.accept_absorbing:
        return "accept"
    return None
