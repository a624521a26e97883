"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The grid and maze runs take minutes; everything else is seconds.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import replace
from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest

from cautious_rl.automata import accepting_frontier, initial_frontier, load_ldba, sink_components, step
from cautious_rl.cli import fail_rate, main
from cautious_rl.config import load_config
from cautious_rl.env import AgentView, load_grid
from cautious_rl.learner import QTable, TrainConfig, run_episode, train
from cautious_rl.oracle import (
    brute_force_violation,
    exact_q,
    materialize_product,
    max_sat_probability,
    policy_choice,
    policy_sat_probability,
)
from cautious_rl.product import ProductState
from cautious_rl.safety import BeliefKernel, LocalSafety, violation_bound
from corpus import IndexFrontier, brute_force_sinks, corpus, random_window, safety_automaton

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DATA = files("cautious_rl") / "data"


@pytest.fixture
def report(capsys):
    def _report(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

    return _report


def test_criterion_1_frontier(report):
    t0 = time.perf_counter()
    automata = corpus(60, seed=11)
    rng = np.random.default_rng(1)
    empty = mismatched = 0
    for a in automata:
        accepting = sorted(a.accepting_union)
        # half of the visits are automaton runs, half arbitrary states biased towards acceptance
        q = a.init
        fr = initial_frontier(a)
        sim = IndexFrontier(a)
        resets = 0
        for i in range(10_000):
            if i % 2:
                nxt = int(rng.choice(accepting)) if rng.random() < 0.5 else int(rng.integers(a.n_states))
            elif a.eps[q] and rng.random() < 0.3:
                nxt = int(rng.choice(a.eps[q]))
            else:
                nxt = a.delta[q][int(rng.integers(len(a.delta[q])))]
            q = nxt
            upd = accepting_frontier(q, fr, a)
            sim.visit(q)
            fr = upd.frontier
            resets += upd.reset
            empty += not fr
            mismatched += fr != sim.states()
        mismatched += resets != sim.resets
    elapsed = time.perf_counter() - t0
    ok = empty == 0 and mismatched == 0 and elapsed < 10
    report(1, ok, f"{len(automata)} automata x 10^4 visits, empty={empty} mismatched={mismatched} t={elapsed:.1f}s")
    assert ok


def test_criterion_2_sinks(report):
    automata = corpus(60, seed=11)
    bad = [i for i, a in enumerate(automata) if sink_components(a)[0] != brute_force_sinks(a)]
    with_sinks = sum(bool(a.sinks) for a in automata)
    ok = not bad
    report(2, ok, f"{len(automata)} automata ({with_sinks} with sinks), mismatches={bad}")
    assert ok


def test_criterion_3_violation_bound(report):
    rng = np.random.default_rng(3)
    a = safety_automaton()
    worst = 0.0
    cases = 0
    while cases < 1000:
        env = random_window(rng, 20)
        s = int(rng.integers(len(env.states())))
        if env.label(s):
            continue
        horizon = int(rng.integers(1, 4))
        r_o = int(rng.integers(1, 4))
        b = BeliefKernel(env.kernel)
        ls = LocalSafety.for_product(AgentView(env), a, b, ProductState(s, 0), horizon, r_o)
        kernel = {(x, c): env.kernel(x, c) for x in env.states() for c in env.actions(x)}
        safe = {x for x in env.states() if env.within(s, x, r_o) and step(a, 0, env.label(x)) not in a.sinks}
        for act in env.actions(s):
            got = violation_bound(ProductState(s, 0), act, b, ls, a)
            worst = max(worst, abs(got - brute_force_violation(kernel, safe, s, act, horizon)))
        cases += 1
    ok = worst <= 1e-9
    report(3, ok, f"{cases} windows, max |difference| = {worst:.2e}")
    assert ok


def test_criterion_4_small_bridge(report):
    cfg = load_config(CONFIGS / "bridge5.ini")
    env, a = cfg.load_env(), cfg.load_automaton()
    assert not cfg.train.padding
    t0 = time.perf_counter()
    res = train(env, a, cfg.train, cfg.seeds[0])
    elapsed = time.perf_counter() - t0
    ep = materialize_product(env, a)
    best = max_sat_probability(ep).value[0]
    got = policy_sat_probability(ep, policy_choice(ep, res.policy))[0]
    ok = abs(best - got) <= 0.05 and elapsed < 60
    report(4, ok, f"greedy {got:.4f} vs optimum {best:.4f}, train t={elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def bridge_runs():
    cfg = load_config(CONFIGS / "bridge20.ini")
    env, a = cfg.load_env(), cfg.load_automaton()
    t0 = time.perf_counter()
    runs = {
        padding: [train(env, a, replace(cfg.train, padding=padding), seed) for seed in cfg.seeds]
        for padding in (True, False)
    }
    return cfg, runs, time.perf_counter() - t0


def test_criterion_5_bridge_fail_rates(report, bridge_runs):
    cfg, runs, elapsed = bridge_runs
    on = statistics.fmean(fail_rate(r) for r in runs[True])
    off = statistics.fmean(fail_rate(r) for r in runs[False])
    ok = len(cfg.seeds) >= 5 and off >= 0.20 and on <= 0.05 and elapsed < 600
    per_seed = " ".join(f"{fail_rate(x):.3f}/{fail_rate(y):.3f}" for x, y in zip(runs[True], runs[False]))
    report(5, ok, f"fail on={on:.2%} (<= 5%) off={off:.2%} (>= 20%), per seed on/off {per_seed}, t={elapsed:.0f}s")
    assert ok


def test_criterion_6_convergence_and_unsafe(report, bridge_runs):
    _, runs, _ = bridge_runs

    def conv(r):
        return r.converged_at if r.converged else len(r.stats)

    med_on = statistics.median(conv(r) for r in runs[True])
    med_off = statistics.median(conv(r) for r in runs[False])
    unsafe_on = [sum(s.unsafe_entries for s in r.stats) for r in runs[True]]
    unsafe_off = [sum(s.unsafe_entries for s in r.stats) for r in runs[False]]
    fewer = all(x < y for x, y in zip(unsafe_on, unsafe_off))
    ok = med_on < med_off and fewer
    report(
        6,
        ok,
        f"median episodes to convergence on={med_on} off={med_off}; "
        f"cumulative unsafe on={unsafe_on} off={unsafe_off}",
    )
    assert ok


def test_criterion_7_pacman(report):
    cfg = load_config(CONFIGS / "pacman.ini")
    env, a = cfg.load_env(), cfg.load_automaton()
    assert cfg.train.episodes == 2000
    t0 = time.perf_counter()
    rates = {}
    for padding in (True, False):
        results = [train(env, a, replace(cfg.train, padding=padding), seed) for seed in cfg.seeds]
        rates[padding] = statistics.fmean(fail_rate(r) for r in results)
    elapsed = time.perf_counter() - t0
    ok = rates[True] * 2 <= rates[False] and elapsed < 1200
    report(7, ok, f"fail on={rates[True]:.2%} off={rates[False]:.2%} (need on <= off/2), t={elapsed:.0f}s")
    assert ok


def learn_for_steps(env, a, cfg: TrainConfig, seed: int, budget: int) -> QTable:
    view = AgentView(env)
    qt = QTable(cfg.q_init)
    belief = BeliefKernel()
    rng = np.random.default_rng(seed)
    steps = episode = 0
    while steps < budget:
        _, _, st = run_episode(view, a, qt, belief, cfg, rng, episode)
        steps += st.steps
        episode += 1
    return qt


def test_criterion_8_q_learning_soundness(report):
    cases = [("corridor_1x3.map", "eventually_target.ldba", 20), ("bridge_5x5.map", "reach_avoid.ldba", 50)]
    cfg = TrainConfig(padding=False, epsilon=1.0, mu=1.0, mu_decay=0.6)
    gaps = []
    for map_name, ldba_name, thr in cases:
        env = load_grid((DATA / map_name).read_text(), p_slip=0.0)
        a = load_ldba((DATA / ldba_name).read_text())
        ep = materialize_product(env, a)
        assert ep.n_states <= 200
        exact = exact_q(ep, cfg.r_p, cfg.gamma).for_frontier(frozenset(initial_frontier(a)))
        for seed in range(3):
            qt = learn_for_steps(env, a, replace(cfg, it_threshold=thr), seed, 100_000)
            gaps.append(max(abs(qt.get(ps, act) - v) for (ps, act), v in exact.items()))
    ok = max(gaps) <= 1e-2
    report(8, ok, f"sup-norm gaps {[f'{g:.1e}' for g in gaps]} (<= 1e-2)")
    assert ok


def test_criterion_9_determinism(report, tmp_path):
    differing = []
    compared = 0
    for name, extra in (("bridge5.ini", ["--episodes", "200"]), ("bridge20.ini", ["--episodes", "5", "--seed", "0,1"])):
        for command in ("train", "compare"):
            outs = []
            for run in ("a", "b"):
                out = tmp_path / name / command / run
                argv = [command, "--config", str(CONFIGS / name), "--out", str(out), "--padding", "on", *extra]
                assert main(argv) == 0
                outs.append(out)
            rel = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
            assert rel == sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*.csv"))
            for r in rel:
                compared += 1
                if (outs[0] / r).read_bytes() != (outs[1] / r).read_bytes():
                    differing.append(f"{name}:{command}:{r}")
    ok = compared > 0 and not differing
    report(9, ok, f"{compared} CSV files compared, differing={differing}")
    assert ok
