from __future__ import annotations

from collections import Counter
from importlib.resources import files

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cautious_rl.env import AgentView, ExplicitMdp, load_grid, load_maze, sample_from
from cautious_rl.env.grid import GridFormatError
from cautious_rl.env.pacman import IllegalMove, MazeFormatError

DATA = files("cautious_rl") / "data"


@pytest.fixture(scope="module")
def bridge():
    return load_grid((DATA / "bridge_20x20.map").read_text())


@pytest.fixture(scope="module")
def maze():
    return load_maze((DATA / "pacman_7x7.maze").read_text())


def test_corridor_decode():
    g = load_grid("s.t")
    assert (g.width, g.height) == (3, 1)
    assert g.cell(g.initial_state) == (0, 0)
    assert g.label(2) == {"target"}


def test_bridge_layout(bridge):
    assert (bridge.width, bridge.height) == (20, 20)
    assert bridge.cell(bridge.initial_state) == (19, 0)
    # one safe column crosses the unsafe band
    band = [r for r in range(20) if "u" in bridge.cells[r]]
    assert len(band) == 6
    for r in band:
        safe = [c for c, ch in enumerate(bridge.cells[r]) if ch != "u"]
        assert safe == [10]
    assert all(set(bridge.cells[r]) == {"t"} for r in range(min(band)))


@pytest.mark.parametrize(
    "text, match",
    [("s.\n.", "row 1"), ("s.\n..s", "row 1"), ("s.x", "column 2"), ("s.\ns.", "exactly one start"), ("..", "exactly one start")],
)
def test_grid_format_errors(text, match):
    with pytest.raises(GridFormatError, match=match):
        load_grid(text)


def test_kernel_rows_sum_to_one(bridge):
    for s in bridge.states():
        for a in bridge.actions(s):
            dist = bridge.kernel(s, a)
            assert sum(p for _, p in dist) == pytest.approx(1.0, abs=1e-12)
            assert all(p > 0 for _, p in dist)


def test_kernel_interior_mixture(bridge):
    s = bridge.state_at(15, 5)
    dist = dict(bridge.kernel(s, 2))  # up
    assert dist[bridge.state_at(14, 5)] == pytest.approx(0.85 + 0.03)
    assert dist[bridge.state_at(15, 5)] == pytest.approx(0.03)
    assert dist[bridge.state_at(16, 5)] == pytest.approx(0.03)


def test_sampling_matches_kernel(bridge):
    rng = np.random.default_rng(7)
    s = bridge.state_at(19, 0)  # corner: clamped moves pile onto s
    n = 100_000
    counts = Counter(bridge.sample(s, 1, rng) for _ in range(n))
    for s2, p in bridge.kernel(s, 1):
        assert counts[s2] / n == pytest.approx(p, abs=0.01)


def test_sampling_uses_one_draw(bridge):
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    for _ in range(100):
        bridge.sample(bridge.initial_state, 2, a)
        b.random()
    assert a.random() == b.random()


@pytest.mark.parametrize("row, col, radius, count", [(10, 5, 1, 5), (15, 5, 2, 13), (19, 0, 1, 3)])
def test_observe_counts(bridge, row, col, radius, count):
    obs = bridge.observe(bridge.state_at(row, col), radius)
    assert len(obs) == count
    assert all(lab == bridge.label(x) for x, lab in obs)


def test_observe_rejects_zero_radius(bridge):
    with pytest.raises(ValueError):
        bridge.observe(0, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 399), st.integers(1, 4))
def test_observe_monotone_and_matches_within(s, r):
    g = load_grid((DATA / "bridge_20x20.map").read_text())
    small = {x for x, _ in g.observe(s, r)}
    big = {x for x, _ in g.observe(s, r + 1)}
    assert small <= big
    assert small == {x for x in g.states() if g.within(s, x, r)}


def test_prior_is_deterministic_intent(bridge):
    s = bridge.state_at(15, 5)
    assert bridge.prior(s, 0) == [(bridge.state_at(15, 4), 1.0)]


def test_agent_view_hides_kernel(bridge):
    view = AgentView(bridge)
    assert not hasattr(view, "kernel")
    with pytest.raises(AttributeError):
        view.extra = 1


def test_sample_from_consumes_one_uniform():
    rng = np.random.default_rng(0)
    u = np.random.default_rng(0).random()
    out = sample_from([("a", 0.25), ("b", 0.75)], rng)
    assert out == ("a" if u < 0.25 else "b")


def test_explicit_mdp():
    m = ExplicitMdp({(0, 0): [(1, 1.0)], (1, 0): [(1, 1.0)]}, {0: [], 1: ["x"]}, 0, ["go"])
    assert m.actions(0) == (0,)
    assert [x for x, _ in m.observe(0, 1)] == [0, 1]


# --- pacman ---


def test_maze_decode(maze):
    assert maze.n_ghosts == 2
    assert maze.label(maze.initial_state) == {"n"}
    assert len(maze.free_cells()) ** 3 <= 7**2 * 49**2


def test_chase_in_corridor():
    w = load_maze("#######\n#P.G12#\n#######", p_g=1.0)
    s = w.initial_state
    rng = np.random.default_rng(0)
    # pacman steps right onto the ghost's neighbour, the ghost chases left
    s2 = w.sample(s, 3, rng)
    assert s2 == (s[0] + 1, s[1] - 1)
    assert w.label(s2) == {"g"}


def test_ghost_scatter_is_uniform(maze):
    rng = np.random.default_rng(11)
    w = load_maze((DATA / "pacman_7x7.maze").read_text(), p_g=0.0)
    s = w.initial_state
    legal = [c for _, c in w._moves[s[1]]]
    n = 100_000
    counts = Counter(w.sample(s, 2, rng)[1] for _ in range(n))
    for c in legal:
        assert counts[c] / n == pytest.approx(1 / len(legal), abs=0.01)


def test_collision_label(maze):
    p = maze.pacman_start
    assert maze.label((p, p, maze.ghost_starts[1])) == {"g"}
    assert maze.label((maze.food1, *maze.ghost_starts)) == {"f1"}
    assert maze.label((maze.food2, *maze.ghost_starts)) == {"f2"}


def test_illegal_move(maze):
    with pytest.raises(IllegalMove):
        maze.sample(maze.initial_state, 0, np.random.default_rng(0))  # wall above the start


def test_pacman_kernel_sums(maze):
    s = maze.initial_state
    for a in maze.actions(s):
        assert sum(p for _, p in maze.kernel(s, a)) == pytest.approx(1.0)
        assert sum(p for _, p in maze.prior(s, a)) == pytest.approx(1.0)


def test_pacman_within_is_a_superset_of_observe(maze):
    s = maze.initial_state
    seen = {x for x, _ in maze.observe(s, 2)}
    assert all(maze.within(s, x, 2) for x in seen)


@pytest.mark.parametrize("text", ["#P#", "#P1#\n#..#", "#P12x#", ""])
def test_maze_format_errors(text):
    with pytest.raises(MazeFormatError):
        load_maze(text)
