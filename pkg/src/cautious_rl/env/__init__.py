from cautious_rl.env.base import AgentView, EnvModel, ExplicitMdp, sample_from
from cautious_rl.env.grid import GridWorld, grid_step, load_grid
from cautious_rl.env.pacman import PacmanWorld, load_maze, pacman_step

__all__ = [
    "AgentView",
    "EnvModel",
    "ExplicitMdp",
    "GridWorld",
    "PacmanWorld",
    "grid_step",
    "load_grid",
    "load_maze",
    "pacman_step",
    "sample_from",
]
