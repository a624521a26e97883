"""Small Pacman with chasing ghosts.

Maze text: ``#`` wall, ``.`` free, ``P`` pacman start, ``G`` ghost start
(one per ghost), ``1`` and ``2`` the two food cells. Cells are flat indices
``row * width + col``; a state is the tuple ``(pacman, ghost_1, ..., ghost_k)``.

Pacman moves deterministically and must move. Each ghost then moves: with
probability ``p_g`` it takes the step that minimises maze distance to
pacman's new cell (ties broken in the order up, down, left, right),
otherwise a uniformly random legal step.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import product as cartesian

import numpy as np

from cautious_rl.env.base import EnvModel

ACTIONS = ("up", "down", "left", "right")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class MazeFormatError(ValueError):
    pass


class IllegalMove(ValueError):
    pass


@dataclass(frozen=True)
class PacmanWorld(EnvModel):
    width: int
    height: int
    walls: frozenset[int]
    pacman_start: int
    ghost_starts: tuple[int, ...]
    food1: int
    food2: int
    p_g: float = 0.9
    _moves: dict = field(default=None, repr=False, compare=False)
    _dist: dict = field(default=None, repr=False, compare=False)

    action_names = ACTIONS
    alphabet = ("f1", "f2", "g", "n")

    def __post_init__(self):
        if not 0.0 <= self.p_g <= 1.0:
            raise ValueError("p_g must lie in [0, 1]")
        moves = {}
        for c in self.free_cells():
            r, col = divmod(c, self.width)
            legal = []
            for a, (dr, dc) in enumerate(_MOVES):
                r2, c2 = r + dr, col + dc
                c_next = r2 * self.width + c2
                if 0 <= r2 < self.height and 0 <= c2 < self.width and c_next not in self.walls:
                    legal.append((a, c_next))
            moves[c] = tuple(legal)
        object.__setattr__(self, "_moves", moves)
        dist = {}
        for src in moves:
            d = {src: 0}
            queue = deque([src])
            while queue:
                x = queue.popleft()
                for _, y in moves[x]:
                    if y not in d:
                        d[y] = d[x] + 1
                        queue.append(y)
            dist[src] = d
        object.__setattr__(self, "_dist", dist)
        object.__setattr__(self, "_exact", {})
        object.__setattr__(self, "_label_cache", {})

    @property
    def initial_state(self) -> tuple[int, ...]:
        return (self.pacman_start, *self.ghost_starts)

    @property
    def n_ghosts(self) -> int:
        return len(self.ghost_starts)

    def free_cells(self) -> list[int]:
        return [c for c in range(self.width * self.height) if c not in self.walls]

    def states(self):
        cells = self.free_cells()
        return cartesian(cells, repeat=1 + self.n_ghosts)

    def actions(self, s):
        return tuple(a for a, _ in self._moves[s[0]])

    def label(self, s):
        lab = self._label_cache.get(s)
        if lab is None:
            p = s[0]
            if p in s[1:]:
                lab = frozenset({"g"})
            elif p == self.food1:
                lab = frozenset({"f1"})
            elif p == self.food2:
                lab = frozenset({"f2"})
            else:
                lab = frozenset({"n"})
            self._label_cache[s] = lab
        return lab

    def pacman_target(self, cell: int, a: int) -> int:
        for a2, c2 in self._moves[cell]:
            if a2 == a:
                return c2
        raise IllegalMove(f"action {ACTIONS[a]} runs into a wall at cell {cell}")

    def chase_move(self, ghost: int, pacman: int) -> int:
        best = None
        for _, c2 in self._moves[ghost]:
            d = self._dist[c2].get(pacman, 1 << 30)
            if best is None or d < best[0]:
                best = (d, c2)
        return ghost if best is None else best[1]

    def ghost_distribution(self, ghost: int, pacman: int, p_g: float) -> list[tuple[int, float]]:
        legal = [c2 for _, c2 in self._moves[ghost]]
        if not legal:
            return [(ghost, 1.0)]
        out: dict[int, float] = {}
        chase = self.chase_move(ghost, pacman)
        if p_g > 0:
            out[chase] = p_g
        share = (1.0 - p_g) / len(legal)
        if share > 0:
            for c2 in legal:
                out[c2] = out.get(c2, 0.0) + share
        return list(out.items())

    def _joint(self, s, a, p_g):
        p = self.pacman_target(s[0], a)
        per_ghost = [self.ghost_distribution(g, p, p_g) for g in s[1:]]
        out: dict[tuple, float] = {}
        for combo in cartesian(*per_ghost):
            prob = 1.0
            for _, q in combo:
                prob *= q
            key = (p, *(c for c, _ in combo))
            out[key] = out.get(key, 0.0) + prob
        return list(out.items())

    def kernel(self, s, a):
        return self._joint(s, a, self.p_g)

    def prior(self, s, a):
        """The agent's initial self-model: ghosts wander uniformly."""
        return self._joint(s, a, 0.0)

    def sample(self, s, a, rng):
        return pacman_step(self, s, a, rng)

    def support(self, s):
        out: dict[tuple, None] = {}
        for a in self.actions(s):
            for s2, p in self.kernel(s, a):
                if p > 0:
                    out[s2] = None
        return out.keys()

    def _exact_reach(self, k: int) -> dict[int, frozenset[int]]:
        """Cells reachable from each cell in exactly ``k`` moves."""
        cached = self._exact.get(k)
        if cached is None:
            if k == 0:
                cached = {c: frozenset({c}) for c in self._moves}
            else:
                prev = self._exact_reach(k - 1)
                cached = {
                    c: frozenset(y for x in prev[c] for _, y in self._moves[x]) or frozenset({c})
                    for c in self._moves
                }
            self._exact[k] = cached
        return cached

    def within(self, s, x, radius):
        if self.p_g >= 1.0:
            return super().within(s, x, radius)
        # every component moves once per step, so a state is k steps away when
        # each component can reach its target in exactly k moves
        for k in range(radius + 1):
            reach = self._exact_reach(k)
            if all(b in reach[a] for a, b in zip(s, x)):
                return True
        return False


def pacman_step(w: PacmanWorld, s: tuple[int, ...], a: int, rng: np.random.Generator) -> tuple:
    p = w.pacman_target(s[0], a)
    ghosts = []
    for g in s[1:]:
        legal = w._moves[g]
        if not legal:
            ghosts.append(g)
            continue
        if rng.random() < w.p_g:
            ghosts.append(w.chase_move(g, p))
        else:
            ghosts.append(legal[int(rng.integers(len(legal)))][1])
    return (p, *ghosts)


def load_maze(text: str, p_g: float = 0.9) -> PacmanWorld:
    rows = [line.rstrip("\r") for line in text.splitlines() if line.strip()]
    if not rows:
        raise MazeFormatError("empty maze")
    width = len(rows[0])
    walls, ghosts = set(), []
    pacman = food1 = food2 = None
    for i, row in enumerate(rows):
        if len(row) != width:
            raise MazeFormatError(f"row {i}: expected {width} columns, got {len(row)}")
        for j, ch in enumerate(row):
            c = i * width + j
            if ch == "#":
                walls.add(c)
            elif ch == "P":
                if pacman is not None:
                    raise MazeFormatError(f"row {i}, column {j}: second pacman")
                pacman = c
            elif ch == "G":
                ghosts.append(c)
            elif ch == "1":
                food1 = c
            elif ch == "2":
                food2 = c
            elif ch != ".":
                raise MazeFormatError(f"row {i}, column {j}: unknown cell {ch!r}")
    if pacman is None or food1 is None or food2 is None:
        raise MazeFormatError("maze needs P, 1 and 2")
    return PacmanWorld(width, len(rows), frozenset(walls), pacman, tuple(ghosts), food1, food2, p_g)
