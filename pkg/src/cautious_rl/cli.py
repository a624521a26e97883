"""Command line entry point: ``cautious-rl {train,compare,oracle,validate}``.

Exit codes: 0 success, 2 configuration or file errors, 3 when the oracle's
materialization cap is exceeded.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import statistics
import sys
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from cautious_rl.automata import LdbaError
from cautious_rl.config import ConfigError, ExperimentConfig, check_alphabets, load_config, parse_seeds, parse_switch
from cautious_rl.learner import TrainResult, train
from cautious_rl.oracle import CapExceeded, materialize_product, max_sat_probability
from cautious_rl.product import Epsilon

log = logging.getLogger("cautious_rl")

CSV_HEADER = "# cautious-rl csv v1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAP = 3


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a versioned CSV atomically (temp file in the same directory, then rename)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def state_text(s) -> str:
    if isinstance(s, tuple):
        return ";".join(str(x) for x in s)
    return str(s)


def action_text(env, a) -> str:
    if isinstance(a, Epsilon):
        return f"eps:{a.target}"
    return env.action_names[a]


def fail_rate(result: TrainResult) -> float:
    st = result.stats
    return sum(s.cause == "sink" for s in st) / len(st) if st else 0.0


def success_rate(result: TrainResult) -> float:
    st = result.stats
    return sum(s.success for s in st) / len(st) if st else 0.0


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def run_seed(cfg: ExperimentConfig, env, ldba, seed: int) -> TrainResult:
    log.info("training seed %d, padding %s", seed, "on" if cfg.train.padding else "off")
    return train(env, ldba, cfg.train, seed)


def dump_run(out: Path, env, ldba, result: TrainResult) -> None:
    write_csv(
        out / "episodes.csv",
        ["episode", "steps", "cause", "unsafe_entries", "resets", "reward", "forced", "max_dq", "success"],
        (
            [s.episode, s.steps, s.cause, s.unsafe_entries, s.resets, s.reward, s.forced, s.max_dq, int(s.success)]
            for s in result.stats
        ),
    )
    belief = result.belief
    visited = sorted({s for s, *_ in belief.rows()}, key=repr)
    rows = []
    for s in visited:
        extra = list(divmod(s, env.width)) if hasattr(env, "cells") else ["", ""]
        rows.append([state_text(s), *extra, belief.visits(s)])
    write_csv(out / "visits.csv", ["state", "row", "col", "visits"], rows)
    q_rows = []
    for (ps, a), v in sorted(result.qtable.values.items(), key=lambda kv: repr(kv[0])):
        q_rows.append(
            [state_text(ps.s), ldba.names[ps.q], action_text(env, a), v, result.qtable.updates.get((ps, a), 0)]
        )
    write_csv(out / "qtable.csv", ["state", "q", "action", "value", "updates"], q_rows)
    b_rows = sorted(
        ([state_text(s), env.action_names[a], state_text(s2), c, total] for s, a, s2, c, total in belief.rows()),
        key=repr,
    )
    write_csv(out / "belief.csv", ["state", "action", "next_state", "psi", "Psi"], b_rows)


def _prepare(cfg: ExperimentConfig):
    env = cfg.load_env()
    ldba = cfg.load_automaton()
    check_alphabets(cfg, env, ldba)
    return env, ldba


def cmd_train(cfg: ExperimentConfig) -> int:
    env, ldba = _prepare(cfg)
    summary = []
    for seed in cfg.seeds:
        res = run_seed(cfg, env, ldba, seed)
        dump_run(cfg.out / f"seed_{seed}", env, ldba, res)
        summary.append(
            [
                seed,
                "on" if cfg.train.padding else "off",
                len(res.stats),
                _fmt(fail_rate(res)),
                _fmt(success_rate(res)),
                res.converged_at if res.converged else "",
                sum(s.unsafe_entries for s in res.stats),
                sum(s.forced for s in res.stats),
            ]
        )
    cols = ["seed", "padding", "episodes", "fail_rate", "success_rate", "converged_at", "unsafe_entries", "forced"]
    write_csv(cfg.out / "summary.csv", cols, summary)
    print(",".join(cols))
    for row in summary:
        print(",".join(str(x) for x in row))
    return EXIT_OK


def compare_runs(cfg: ExperimentConfig, env, ldba) -> dict[bool, list[TrainResult]]:
    out = {}
    for padding in (True, False):
        sub = cfg.with_overrides(padding=padding)
        out[padding] = [run_seed(sub, env, ldba, seed) for seed in cfg.seeds]
    return out


def cmd_compare(cfg: ExperimentConfig) -> int:
    env, ldba = _prepare(cfg)
    cols = ["padding", "seeds", "episodes", "fail_rate", "success_rate", "median_converged_at", "unsafe_entries"]
    if cfg.train.episodes == 0:
        write_csv(cfg.out / "compare.csv", cols, [])
        write_csv(cfg.out / "cumulative_unsafe.csv", ["seed", "episode", "on", "off"], [])
        print(",".join(cols))
        return EXIT_OK
    runs = compare_runs(cfg, env, ldba)
    table = []
    for padding in (True, False):
        results = runs[padding]
        conv = [r.converged_at if r.converged else len(r.stats) for r in results]
        table.append(
            [
                "on" if padding else "off",
                len(results),
                sum(len(r.stats) for r in results),
                _fmt(statistics.fmean(fail_rate(r) for r in results)),
                _fmt(statistics.fmean(success_rate(r) for r in results)),
                statistics.median(conv),
                sum(s.unsafe_entries for r in results for s in r.stats),
            ]
        )
    write_csv(cfg.out / "compare.csv", cols, table)
    series = []
    for seed, on, off in zip(cfg.seeds, runs[True], runs[False]):
        c_on = c_off = 0
        for s_on, s_off in zip(on.stats, off.stats):
            c_on += s_on.unsafe_entries
            c_off += s_off.unsafe_entries
            series.append([seed, s_on.episode, c_on, c_off])
    write_csv(cfg.out / "cumulative_unsafe.csv", ["seed", "episode", "on", "off"], series)
    print(f"{'padding':<8}{'fail':>10}{'success':>10}{'conv@':>8}{'unsafe':>8}")
    for row in table:
        fail, succ = float(row[3]), float(row[4])
        print(f"{row[0]:<8}{fail:>10.2%}{succ:>10.2%}{row[5]:>8}{row[6]:>8}")
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig, dump: bool = False) -> int:
    env, ldba = _prepare(cfg)
    ep = materialize_product(env, ldba, cfg.oracle_cap)
    res = max_sat_probability(ep, cfg.oracle_tol, cfg.oracle_max_iter)
    print(f"{res.value[0]:.6f}")
    if dump:
        rows = []
        for r in range(ep.n_rows):
            i = int(ep.row_state[r])
            ps = ep.states[i]
            lo, hi = ep.P.indptr[r], ep.P.indptr[r + 1]
            for t, p in zip(ep.P.indices[lo:hi], ep.P.data[lo:hi]):
                nxt = ep.states[t]
                rows.append(
                    [state_text(ps.s), ldba.names[ps.q], action_text(env, ep.row_action[r]),
                     state_text(nxt.s), ldba.names[nxt.q], p]
                )
        write_csv(cfg.out / "product.csv", ["state", "q", "action", "next_state", "next_q", "prob"], rows)
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig) -> int:
    env, ldba = _prepare(cfg)
    sinks = sorted(ldba.names[q] for q in ldba.sinks)
    print(f"automaton: {ldba.n_states} states, {len(ldba.accepting)} accepting set(s), sinks {sinks or 'none'}")
    print(f"environment: {cfg.kind}, initial state {state_text(env.initial_state)}")
    if ldba.init in ldba.sinks:
        print("warning: the initial automaton state is already a sink")
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cautious-rl", description="Safe-padded Q-learning under LTL tasks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train per seed and write CSV reports"),
        ("compare", "matched-seed padding on/off comparison"),
        ("oracle", "exact maximal satisfaction probability at the initial state"),
        ("validate", "check a config and its automaton"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=parse_seeds, help="comma list, ranges allowed: 0-4,7")
        sp.add_argument("--padding", type=parse_switch, help="on or off; overrides the config")
        sp.add_argument("--out", type=Path)
        sp.add_argument("--episodes", type=int)
        if name == "oracle":
            sp.add_argument("--dump", action="store_true", help="also write product.csv")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config).with_overrides(
            seeds=args.seed, padding=args.padding, out=args.out, episodes=args.episodes
        )
        if cfg.train.episodes < 0:
            raise ConfigError("--episodes must be >= 0")
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "oracle":
            return cmd_oracle(cfg, args.dump)
        return cmd_validate(cfg)
    except CapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ConfigError, LdbaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
