"""Slippery grid world.

Map text uses one character per cell: ``.`` safe, ``u`` unsafe, ``t`` target,
``s`` start (exactly one). Row 0 is the top row. States are flat indices
``row * width + col``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cautious_rl.env.base import EnvModel

ACTIONS = ("left", "right", "up", "down", "stay")
_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))
_LABELS = {".": "safe", "u": "unsafe", "t": "target", "s": "start"}


class GridFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GridWorld(EnvModel):
    width: int
    height: int
    cells: tuple[str, ...]
    p_slip: float = 0.15
    start: int = field(default=0)

    action_names = ACTIONS
    alphabet = tuple(_LABELS.values())

    @property
    def initial_state(self) -> int:
        return self.start

    def __post_init__(self):
        if not 0.0 <= self.p_slip <= 1.0:
            raise ValueError("p_slip must lie in [0, 1]")
        # neighbour table: _nbr[s][a] is the clamped target of move a from s
        nbr = []
        for s in range(self.width * self.height):
            r, c = divmod(s, self.width)
            row = []
            for dr, dc in _MOVES:
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < self.height and 0 <= c2 < self.width:
                    row.append(r2 * self.width + c2)
                else:
                    row.append(s)
            nbr.append(tuple(row))
        object.__setattr__(self, "_nbr", tuple(nbr))
        labels = tuple(frozenset({_LABELS[ch]}) for row in self.cells for ch in row)
        object.__setattr__(self, "_labels", labels)

    def cell(self, s: int) -> tuple[int, int]:
        return divmod(s, self.width)

    def state_at(self, row: int, col: int) -> int:
        return row * self.width + col

    def states(self):
        return range(self.width * self.height)

    def actions(self, s):
        return (0, 1, 2, 3, 4)

    def label(self, s):
        return self._labels[s]

    def kernel(self, s, a):
        nbr = self._nbr[s]
        out: dict[int, float] = {nbr[a]: 1.0 - self.p_slip}
        share = self.p_slip / len(_MOVES)
        for s2 in nbr:
            out[s2] = out.get(s2, 0.0) + share
        return [(s2, p) for s2, p in out.items() if p > 0]

    def sample(self, s, a, rng):
        return grid_step(self, s, a, rng)

    def support(self, s):
        return dict.fromkeys(self._nbr[s]).keys()

    def within(self, s, x, radius):
        r1, c1 = divmod(s, self.width)
        r2, c2 = divmod(x, self.width)
        return abs(r1 - r2) + abs(c1 - c2) <= radius

    def prior(self, s, a):
        """The agent's initial self-model: every action reaches its intended cell."""
        return [(self._nbr[s][a], 1.0)]


def grid_step(w: GridWorld, s: int, a: int, rng: np.random.Generator) -> int:
    """Sample the next cell; one uniform draw per call."""
    u = rng.random()
    keep = 1.0 - w.p_slip
    if u < keep:
        return w._nbr[s][a]
    k = min(int((u - keep) / w.p_slip * len(_MOVES)), len(_MOVES) - 1)
    return w._nbr[s][k]


def load_grid(text: str, p_slip: float = 0.15) -> GridWorld:
    rows = [line.rstrip("\r") for line in text.splitlines()]
    rows = [r for r in rows if r.strip() and not r.lstrip().startswith("#")]
    if not rows:
        raise GridFormatError("empty map")
    width = len(rows[0])
    starts = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise GridFormatError(f"row {i}: expected {width} columns, got {len(row)}")
        for j, ch in enumerate(row):
            if ch not in _LABELS:
                raise GridFormatError(f"row {i}, column {j}: unknown cell {ch!r}")
            if ch == "s":
                starts.append((i, j))
    if len(starts) != 1:
        raise GridFormatError(f"map needs exactly one start cell, found {len(starts)}")
    (r, c) = starts[0]
    return GridWorld(width, len(rows), tuple(rows), p_slip, r * width + c)
