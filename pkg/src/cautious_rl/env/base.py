"""Environment interface and the agent-facing view."""

from __future__ import annotations

from collections import deque
from typing import Hashable, Iterable, Sequence

import numpy as np

State = Hashable
Distribution = list  # list of (state, probability) pairs


def sample_from(dist: Sequence[tuple[State, float]], rng: np.random.Generator) -> State:
    """Draw one outcome; consumes exactly one uniform from ``rng``."""
    u = rng.random()
    acc = 0.0
    for s, p in dist:
        acc += p
        if u < acc:
            return s
    return dist[-1][0]


class EnvModel:
    """Black-box labeled MDP.

    Actions are small integers indexing :attr:`action_names`. Subclasses
    provide the true kernel; learners only ever see an :class:`AgentView`.
    """

    action_names: tuple[str, ...] = ()
    # every label symbol the environment can emit; None when open-ended
    alphabet: tuple[str, ...] | None = None
    initial_state: State

    def actions(self, s: State) -> tuple[int, ...]:
        raise NotImplementedError

    def label(self, s: State) -> frozenset[str]:
        raise NotImplementedError

    def kernel(self, s: State, a: int) -> Distribution:
        """True next-state distribution; oracle use only."""
        raise NotImplementedError

    def sample(self, s: State, a: int, rng: np.random.Generator) -> State:
        return sample_from(self.kernel(s, a), rng)

    def support(self, s: State) -> Iterable[State]:
        """Successors of ``s`` under any action with positive probability."""
        seen: dict[State, None] = {}
        for a in self.actions(s):
            for s2, p in self.kernel(s, a):
                if p > 0:
                    seen[s2] = None
        return seen.keys()

    def prior(self, s: State, a: int) -> Distribution | None:
        """Declared self-model used as the agent's starting belief, if any."""
        return None

    def observe(self, s: State, radius: int) -> list[tuple[State, frozenset[str]]]:
        """States within directed distance ``radius`` of ``s``, with labels (BFS order)."""
        if radius < 1:
            raise ValueError("observation radius must be >= 1")
        dist = {s: 0}
        queue = deque([s])
        while queue:
            x = queue.popleft()
            if dist[x] == radius:
                continue
            for y in self.support(x):
                if y not in dist:
                    dist[y] = dist[x] + 1
                    queue.append(y)
        return [(x, self.label(x)) for x in dist]

    def within(self, s: State, x: State, radius: int) -> bool:
        """True when the directed distance from ``s`` to ``x`` is at most ``radius``."""
        return any(y == x for y, _ in self.observe(s, radius))

    def states(self) -> Iterable[State]:
        """All states, for environments small enough to enumerate."""
        raise NotImplementedError


class AgentView:
    """What the learner may use: actions, labels, observation and sampling.

    The true kernel is deliberately not reachable through this object.
    """

    __slots__ = ("_env",)

    def __init__(self, env: EnvModel):
        self._env = env

    @property
    def action_names(self) -> tuple[str, ...]:
        return self._env.action_names

    @property
    def initial_state(self) -> State:
        return self._env.initial_state

    def actions(self, s: State) -> tuple[int, ...]:
        return self._env.actions(s)

    def label(self, s: State) -> frozenset[str]:
        return self._env.label(s)

    def observe(self, s: State, radius: int) -> list[tuple[State, frozenset[str]]]:
        return self._env.observe(s, radius)

    def within(self, s: State, x: State, radius: int) -> bool:
        return self._env.within(s, x, radius)

    def sample(self, s: State, a: int, rng: np.random.Generator) -> State:
        return self._env.sample(s, a, rng)

    def prior(self, s: State, a: int) -> Distribution | None:
        return self._env.prior(s, a)


class ExplicitMdp(EnvModel):
    """Finite MDP given as tables; handy for small hand-written examples."""

    def __init__(
        self,
        kernel: dict[tuple[State, int], Distribution],
        labels: dict[State, Iterable[str]],
        initial_state: State,
        action_names: Sequence[str],
    ):
        self._kernel = {k: [(s2, float(p)) for s2, p in v] for k, v in kernel.items()}
        self._labels = {s: frozenset(v) for s, v in labels.items()}
        self.initial_state = initial_state
        self.action_names = tuple(action_names)
        acts: dict[State, list[int]] = {s: [] for s in self._labels}
        for s, a in self._kernel:
            acts[s].append(a)
        self._actions = {s: tuple(sorted(v)) for s, v in acts.items()}

    def actions(self, s):
        return self._actions[s]

    def label(self, s):
        return self._labels[s]

    def kernel(self, s, a):
        return self._kernel[(s, a)]

    def states(self):
        return list(self._labels)
