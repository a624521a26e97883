"""Experiment configuration files.

INI text with sections ``[env]``, ``[automaton]``, ``[learning]``,
``[padding]`` and ``[run]``. File paths are resolved against the config
file's directory; a ``data:`` prefix points at the assets shipped with the
package instead.

    [env]
    kind = grid
    map = data:bridge_20x20.map
    p_slip = 0.15

    [automaton]
    file = data:reach_avoid.ldba
    ltl = F target & G !unsafe
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from importlib.resources import files
from pathlib import Path

from cautious_rl.automata import Ldba, load_ldba
from cautious_rl.env import EnvModel, load_grid, load_maze
from cautious_rl.learner import TrainConfig
from cautious_rl.ltl import atoms, parse_ltl
from cautious_rl.safety import PaddingParams

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "resolve_path"]


class ConfigError(ValueError):
    """Bad or inconsistent configuration; the message names the offending key."""


_SECTIONS = {
    "env": {"kind", "map", "maze", "p_slip", "p_g"},
    "automaton": {"file", "ltl"},
    "learning": {
        "gamma",
        "mu",
        "mu_decay",
        "r_p",
        "it_threshold",
        "episodes",
        "tol",
        "window",
        "stop_at_convergence",
        "epsilon",
        "epsilon_decay",
        "epsilon_min",
        "q_init",
        "use_prior",
    },
    "padding": {"enabled", "r_o", "p_critical", "n_h"},
    "run": {"seeds", "out", "oracle_cap", "oracle_tol", "oracle_max_iter"},
}

_INT_KEYS = {"it_threshold", "episodes", "window"}
_BOOL_KEYS = {"stop_at_convergence", "use_prior"}


def resolve_path(value: str, base: Path) -> Path:
    if value.startswith("data:"):
        return Path(str(files("cautious_rl") / "data" / value[5:]))
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def parse_seeds(text: str) -> tuple[int, ...]:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty seed list")
    return tuple(out)


def parse_switch(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


@dataclass
class ExperimentConfig:
    kind: str
    env_path: Path
    automaton_path: Path
    ltl: str | None
    train: TrainConfig
    seeds: tuple[int, ...] = (0,)
    out: Path = Path("runs")
    p_slip: float = 0.15
    p_g: float = 0.9
    oracle_cap: int = 200_000
    oracle_tol: float = 1e-8
    oracle_max_iter: int = 5_000
    source: Path | None = field(default=None, repr=False)

    def load_env(self) -> EnvModel:
        key = "map" if self.kind == "grid" else "maze"
        if not self.env_path.is_file():
            raise FileNotFoundError(f"{key} file not found: {self.env_path}")
        text = self.env_path.read_text()
        if self.kind == "grid":
            return load_grid(text, self.p_slip)
        return load_maze(text, self.p_g)

    def load_automaton(self) -> Ldba:
        if not self.automaton_path.is_file():
            raise FileNotFoundError(f"automaton file not found: {self.automaton_path}")
        return load_ldba(self.automaton_path.read_text())

    def with_overrides(
        self,
        seeds: tuple[int, ...] | None = None,
        padding: bool | None = None,
        out: Path | None = None,
        episodes: int | None = None,
    ) -> "ExperimentConfig":
        train = self.train
        if padding is not None:
            train = replace(train, padding=padding)
        if episodes is not None:
            train = replace(train, episodes=episodes)
        return replace(
            self,
            train=train,
            seeds=seeds if seeds is not None else self.seeds,
            out=out if out is not None else self.out,
        )


def _get(cp: configparser.ConfigParser, section: str, key: str, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def parse_config(text: str, base: Path = Path(".")) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    for section in cp.sections():
        known = _SECTIONS.get(section)
        if known is None:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp.options(section):
            if key not in known:
                raise ConfigError(f"[{section}] {key}: unknown key")

    kind = _get(cp, "env", "kind", str.strip, "grid")
    if kind not in ("grid", "pacman"):
        raise ConfigError(f"[env] kind: expected grid or pacman, got {kind!r}")
    env_key = "map" if kind == "grid" else "maze"
    if not cp.has_option("env", env_key):
        raise ConfigError(f"[env] {env_key}: required for kind = {kind}")
    if not cp.has_option("automaton", "file"):
        raise ConfigError("[automaton] file: required")

    learn = {}
    for key in sorted(_SECTIONS["learning"]):
        conv = int if key in _INT_KEYS else parse_switch if key in _BOOL_KEYS else float
        val = _get(cp, "learning", key, conv, None)
        if val is not None:
            learn[key] = val
    pad = {}
    for key, conv in (("r_o", int), ("p_critical", float), ("n_h", int)):
        val = _get(cp, "padding", key, conv, None)
        if val is not None:
            pad[key] = val
    try:
        params = PaddingParams(**pad)
    except ValueError as exc:
        raise ConfigError(f"[padding] {exc}") from None
    enabled = _get(cp, "padding", "enabled", parse_switch, True)
    try:
        train = TrainConfig(padding=enabled, params=params, **learn)
    except ValueError as exc:
        raise ConfigError(f"[learning] {exc}") from None

    ltl = _get(cp, "automaton", "ltl", str.strip, None)
    if ltl:
        try:
            parse_ltl(ltl)
        except ValueError as exc:
            raise ConfigError(f"[automaton] ltl: {exc}") from None

    return ExperimentConfig(
        kind=kind,
        env_path=resolve_path(cp.get("env", env_key), base),
        automaton_path=resolve_path(cp.get("automaton", "file"), base),
        ltl=ltl or None,
        train=train,
        seeds=_get(cp, "run", "seeds", parse_seeds, (0,)),
        out=resolve_path(_get(cp, "run", "out", str.strip, "runs"), base),
        p_slip=_get(cp, "env", "p_slip", float, 0.15),
        p_g=_get(cp, "env", "p_g", float, 0.9),
        oracle_cap=_get(cp, "run", "oracle_cap", int, 200_000),
        oracle_tol=_get(cp, "run", "oracle_tol", float, 1e-8),
        oracle_max_iter=_get(cp, "run", "oracle_max_iter", int, 5_000),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(), path.parent)
    cfg.source = path
    return cfg


def check_alphabets(cfg: ExperimentConfig, env: EnvModel, ldba: Ldba) -> None:
    """``atoms(ltl) <= automaton AP <= environment labels``, else ConfigError."""
    ap = set(ldba.ap)
    if cfg.ltl:
        missing = atoms(parse_ltl(cfg.ltl)) - ap
        if missing:
            raise ConfigError(f"[automaton] ltl: atoms {sorted(missing)} not in automaton AP")
    if env.alphabet is not None:
        extra = ap - set(env.alphabet)
        if extra:
            raise ConfigError(f"[automaton] file: AP {sorted(extra)} never emitted by the environment")
