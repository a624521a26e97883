"""Exact ground truth on small instances.

Everything here needs the true environment kernel, so it is for testing and
reporting only and never feeds back into learning.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from cautious_rl.automata import Ldba, accepting_frontier, initial_frontier, step
from cautious_rl.product import (
    Epsilon,
    ProductAction,
    ProductState,
    action_key,
    available_actions,
    initial_state,
)

__all__ = [
    "CapExceeded",
    "ExplicitProduct",
    "ExactQ",
    "materialize_product",
    "mec_decomposition",
    "max_sat_probability",
    "policy_choice",
    "policy_sat_probability",
    "exact_q",
    "brute_force_violation",
]


class CapExceeded(RuntimeError):
    pass


@dataclass
class ExplicitProduct:
    states: list[ProductState]
    index: dict[ProductState, int]
    # choice rows, grouped by state: rows state_start[i]:state_start[i+1] belong to state i
    state_start: np.ndarray
    row_state: np.ndarray
    row_action: list[ProductAction]
    P: sp.csr_matrix  # n_rows x n_states
    accepting: list[np.ndarray]  # one boolean mask per accepting set
    sink: np.ndarray
    terminal: np.ndarray
    ldba: Ldba

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_rows(self) -> int:
        return len(self.row_action)

    def rows_of(self, i: int) -> range:
        return range(self.state_start[i], self.state_start[i + 1])

    def transition_rows(self):
        """Yield ``(state, action, next_state, probability)`` for CSV export."""
        P = self.P
        for r in range(self.n_rows):
            lo, hi = P.indptr[r], P.indptr[r + 1]
            for t, p in zip(P.indices[lo:hi], P.data[lo:hi]):
                yield self.states[self.row_state[r]], self.row_action[r], self.states[t], float(p)


def materialize_product(env, ldba: Ldba, cap: int = 200_000) -> ExplicitProduct:
    """Breadth-first enumeration of the product reachable from the initial state."""
    s0 = initial_state(env, ldba)
    index = {s0: 0}
    states = [s0]
    queue = deque([s0])
    state_start = [0]
    row_state: list[int] = []
    row_action: list[ProductAction] = []
    indptr = [0]
    cols: list[int] = []
    data: list[float] = []

    def intern(ps: ProductState) -> int:
        i = index.get(ps)
        if i is None:
            if len(states) >= cap:
                raise CapExceeded(f"product exceeds {cap} states")
            i = len(states)
            index[ps] = i
            states.append(ps)
            queue.append(ps)
        return i

    label_q: dict[tuple[Hashable, int], int] = {}
    while queue:
        ps = queue.popleft()
        i = index[ps]
        actions = sorted(available_actions(ps, env, ldba), key=action_key)
        for a in actions:
            if isinstance(a, Epsilon):
                row = {intern(ProductState(ps.s, a.target)): 1.0}
            else:
                row = {}
                for s2, p in env.kernel(ps.s, a):
                    if p <= 0:
                        continue
                    key = (s2, ps.q)
                    q2 = label_q.get(key)
                    if q2 is None:
                        q2 = step(ldba, ps.q, env.label(s2))
                        label_q[key] = q2
                    j = intern(ProductState(s2, q2))
                    row[j] = row.get(j, 0.0) + p
            row_state.append(i)
            row_action.append(a)
            for j in sorted(row):
                cols.append(j)
                data.append(row[j])
            indptr.append(len(cols))
        if not actions:
            # a state without actions keeps running in place
            row_state.append(i)
            row_action.append(None)
            cols.append(i)
            data.append(1.0)
            indptr.append(len(cols))
        state_start.append(len(row_state))

    n = len(states)
    P = sp.csr_matrix(
        (np.array(data), np.array(cols, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(row_state), n),
    )
    qs = np.array([ps.q for ps in states])
    accepting = [np.isin(qs, sorted(F)) for F in ldba.accepting]
    sink = np.isin(qs, sorted(ldba.sinks))
    terminal = sink | np.isin(qs, sorted(ldba.accept_absorbing))
    return ExplicitProduct(
        states=states,
        index=index,
        state_start=np.array(state_start, dtype=np.int64),
        row_state=np.array(row_state, dtype=np.int64),
        row_action=row_action,
        P=P,
        accepting=accepting,
        sink=sink,
        terminal=terminal,
        ldba=ldba,
    )


def _row_max(ep: ExplicitProduct, row_values: np.ndarray) -> np.ndarray:
    return np.maximum.reduceat(row_values, ep.state_start[:-1])


def mec_decomposition(ep: ExplicitProduct) -> tuple[np.ndarray, np.ndarray]:
    """Maximal end components.

    Returns ``(mec_id, row_inside)``: ``mec_id[i]`` is the component of state
    ``i`` or -1, and ``row_inside[r]`` marks the choice rows that keep the
    run inside its component.
    """
    n = ep.n_states
    coo = ep.P.tocoo()
    row_of_entry = coo.row
    target = coo.col
    src_state = ep.row_state[row_of_entry]
    row_ok = np.ones(ep.n_rows, dtype=bool)
    state_ok = np.ones(n, dtype=bool)
    comp = np.zeros(n, dtype=np.int64)
    while True:
        live = row_ok[row_of_entry] & state_ok[src_state] & state_ok[target]
        g = sp.csr_matrix(
            (np.ones(int(live.sum())), (src_state[live], target[live])), shape=(n, n)
        )
        _, comp = connected_components(g, directed=True, connection="strong")
        leaves = ~state_ok[target] | (comp[src_state] != comp[target])
        bad = np.zeros(ep.n_rows, dtype=bool)
        np.logical_or.at(bad, row_of_entry, leaves)
        new_row_ok = row_ok & ~bad & state_ok[ep.row_state]
        has_row = np.zeros(n, dtype=bool)
        np.logical_or.at(has_row, ep.row_state, new_row_ok)
        new_state_ok = state_ok & has_row
        if np.array_equal(new_row_ok, row_ok) and np.array_equal(new_state_ok, state_ok):
            break
        row_ok, state_ok = new_row_ok, new_state_ok
    mec_id = np.where(state_ok, comp, -1)
    # relabel densely in order of first appearance
    labels: dict[int, int] = {}
    for i in range(n):
        c = mec_id[i]
        if c >= 0:
            mec_id[i] = labels.setdefault(int(c), len(labels))
    return mec_id, row_ok


def _accepting_mec_states(ep: ExplicitProduct, mec_id: np.ndarray) -> np.ndarray:
    target = np.zeros(ep.n_states, dtype=bool)
    n_mec = int(mec_id.max()) + 1 if mec_id.size else 0
    for m in range(n_mec):
        members = mec_id == m
        if all(bool((members & F).any()) for F in ep.accepting):
            target |= members
    return target


def _can_reach(adj: sp.csr_matrix, goal: np.ndarray) -> np.ndarray:
    """States with a path into ``goal`` (``adj[s, t]`` is an edge s -> t)."""
    reach = goal.copy()
    frontier = goal.copy()
    while frontier.any():
        nxt = (adj @ frontier.astype(np.float64)) > 0
        frontier = nxt & ~reach
        reach |= nxt
    return reach


def _state_graph(ep: ExplicitProduct) -> sp.csr_matrix:
    coo = ep.P.tocoo()
    n = ep.n_states
    return sp.csr_matrix(
        (np.ones(coo.nnz), (ep.row_state[coo.row], coo.col)), shape=(n, n)
    )


@dataclass
class SatResult:
    lower: np.ndarray
    upper: np.ndarray
    iterations: int

    @property
    def value(self) -> np.ndarray:
        return (self.lower + self.upper) / 2


def max_sat_probability(
    ep: ExplicitProduct, tol: float = 1e-8, max_iter: int = 5_000
) -> SatResult:
    """Maximal probability of acceptance from every product state.

    Acceptance means eventually staying in an end component that meets every
    accepting set, so this is maximal reachability of the accepting end
    components. It is solved by interval iteration on the quotient where every
    other end component is collapsed to one node keeping only its exit
    choices; without end components the upper sequence converges too.

    Convergence can still be very slow when leaving some region is rare, so
    after ``max_iter`` sweeps the greedy policy of the lower bound is refined
    by policy iteration, which solves the quotient exactly.
    """
    n = ep.n_states
    mec_id, row_inside = mec_decomposition(ep)
    goal = _accepting_mec_states(ep, mec_id)
    maybe = _can_reach(_state_graph(ep), goal) & ~goal

    rep = np.arange(n)
    collapsed = (mec_id >= 0) & ~goal
    for m in np.unique(mec_id[collapsed]):
        members = np.flatnonzero(mec_id == m)
        rep[members] = members[0]
    keep = ~(collapsed[ep.row_state] & row_inside)
    keep &= maybe[ep.row_state]
    rows = np.flatnonzero(keep)
    owner = rep[ep.row_state[rows]]
    order = np.argsort(owner, kind="stable")
    rows, owner = rows[order], owner[order]
    R = sp.csr_matrix((np.ones(n), (np.arange(n), rep)), shape=(n, n))
    Pq = (ep.P[rows] @ R).tocsr()
    starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]]) if rows.size else rows
    nodes = owner[starts]

    lower = goal.astype(np.float64)
    upper = (goal | maybe).astype(np.float64)
    it = 0
    while rows.size and it < max_iter:
        it += 1
        lower[nodes] = np.maximum.reduceat(Pq @ lower, starts)
        upper[nodes] = np.maximum.reduceat(Pq @ upper, starts)
        if float(np.max(upper[nodes] - lower[nodes])) < tol:
            return SatResult(lower[rep], upper[rep], it)
    if rows.size:
        exact = _policy_iteration(Pq, starts, nodes, goal, lower)
        lower, upper = exact, exact.copy()
    return SatResult(lower[rep], upper[rep], it)


def _policy_iteration(Pq, starts, nodes, goal, guess, max_rounds: int = 1000):
    """Exact maximal reachability on a quotient without end components."""
    ends = np.r_[starts[1:], Pq.shape[0]]
    goal_f = goal.astype(np.float64)

    def greedy(values):
        row_vals = Pq @ values
        best = np.array([s + int(np.argmax(row_vals[s:e])) for s, e in zip(starts, ends)])
        return best, row_vals

    choice, _ = greedy(guess)
    x = goal_f.copy()
    for _ in range(max_rounds):
        Pc = Pq[choice]
        A = sp.identity(nodes.size, format="csr") - Pc[:, nodes]
        b = Pc @ goal_f
        x = goal_f.copy()
        x[nodes] = np.atleast_1d(spsolve(A.tocsc(), b))
        best, row_vals = greedy(x)
        better = row_vals[best] > row_vals[choice] + 1e-12
        if not better.any():
            break
        choice = np.where(better, best, choice)
    return x


def policy_choice(ep: ExplicitProduct, policy: Callable[[ProductState], ProductAction]) -> np.ndarray:
    """Row index chosen by ``policy`` at every state."""
    choice = np.empty(ep.n_states, dtype=np.int64)
    for i, ps in enumerate(ep.states):
        rows = ep.rows_of(i)
        if len(rows) == 1:
            choice[i] = rows[0]
            continue
        a = policy(ps)
        for r in rows:
            if ep.row_action[r] == a:
                choice[i] = r
                break
        else:
            raise ValueError(f"policy picked unavailable action {a!r} at {ps}")
    return choice


def policy_sat_probability(ep: ExplicitProduct, choice: np.ndarray) -> np.ndarray:
    """Acceptance probability of the Markov chain induced by fixed choices.

    Solved directly: find the bottom components of the chain, keep those
    meeting every accepting set, and solve the linear reachability system.
    """
    n = ep.n_states
    Pc = ep.P[choice].tocsr()
    _, comp = connected_components(Pc, directed=True, connection="strong")
    coo = Pc.tocoo()
    leaving = np.zeros(comp.max() + 1, dtype=bool)
    np.logical_or.at(leaving, comp[coo.row], comp[coo.row] != comp[coo.col])
    goal = np.zeros(n, dtype=bool)
    for c in np.flatnonzero(~leaving):
        members = comp == c
        if all(bool((members & F).any()) for F in ep.accepting):
            goal |= members
    maybe = _can_reach(Pc, goal) & ~goal
    x = goal.astype(np.float64)
    idx = np.flatnonzero(maybe)
    if idx.size:
        A = sp.identity(idx.size, format="csr") - Pc[idx][:, idx]
        b = np.asarray(Pc[idx][:, np.flatnonzero(goal)].sum(axis=1)).ravel()
        x[idx] = np.atleast_1d(spsolve(A.tocsc(), b))
    return x


@dataclass
class ExactQ:
    """Optimal action values on the product augmented with the accepting frontier."""

    values: dict[tuple[ProductState, frozenset, ProductAction], float]
    iterations: int

    def for_frontier(self, fr: frozenset) -> dict[tuple[ProductState, ProductAction], float]:
        return {(ps, a): v for (ps, f, a), v in self.values.items() if f == fr}


def exact_q(
    ep: ExplicitProduct,
    r_p: float,
    gamma: float,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> ExactQ:
    """Value iteration for the reward rule, tracking the frontier exactly.

    Entering a product state whose automaton state is still owed by the
    frontier pays ``r_p``; terminal states (sinks and accept-absorbing
    states) end the episode and are worth 0 afterwards.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("exact_q needs gamma < 1")
    ldba = ep.ldba
    P = ep.P
    start = (0, initial_frontier(ldba))
    aug_index = {start: 0}
    aug = [start]
    queue = deque([start])
    # per augmented state: list of (row, [(next_aug, prob, reward)])
    rows_out: list[list[tuple[int, list[tuple[int, float, float]]]]] = []
    while queue:
        i, fr = queue.popleft()
        out = []
        if not ep.terminal[i]:
            for r in ep.rows_of(i):
                lo, hi = P.indptr[r], P.indptr[r + 1]
                succ = []
                for t, p in zip(P.indices[lo:hi], P.data[lo:hi]):
                    q2 = ep.states[t].q
                    reward = r_p if q2 in fr else 0.0
                    fr2 = accepting_frontier(q2, fr, ldba).frontier
                    key = (int(t), fr2)
                    j = aug_index.get(key)
                    if j is None:
                        j = len(aug)
                        aug_index[key] = j
                        aug.append(key)
                        queue.append(key)
                    succ.append((j, float(p), reward))
                out.append((r, succ))
        rows_out.append(out)

    # flatten into arrays for vectorised sweeps
    entry_row, entry_next, entry_p, entry_r = [], [], [], []
    row_owner, row_ref = [], []
    for j, out in enumerate(rows_out):
        for r, succ in out:
            k = len(row_owner)
            row_owner.append(j)
            row_ref.append(r)
            for t, p, rew in succ:
                entry_row.append(k)
                entry_next.append(t)
                entry_p.append(p)
                entry_r.append(rew)
    n_aug = len(aug)
    n_rows = len(row_owner)
    entry_row = np.array(entry_row, dtype=np.int64)
    entry_next = np.array(entry_next, dtype=np.int64)
    entry_p = np.array(entry_p)
    entry_r = np.array(entry_r)
    row_owner = np.array(row_owner, dtype=np.int64)
    terminal = np.array([bool(ep.terminal[i]) for i, _ in aug])
    expected_r = np.bincount(entry_row, entry_p * entry_r, minlength=n_rows)
    T = sp.csr_matrix((entry_p, (entry_row, entry_next)), shape=(n_rows, n_aug))

    q = np.zeros(n_rows)
    v = np.zeros(n_aug)
    it = 0
    while it < max_iter:
        it += 1
        q_new = expected_r + gamma * (T @ v)
        v_new = np.full(n_aug, -np.inf)
        np.maximum.at(v_new, row_owner, q_new)
        v_new[terminal | ~np.isfinite(v_new)] = 0.0
        delta = float(np.max(np.abs(q_new - q), initial=0.0))
        q, v = q_new, v_new
        if delta < tol:
            break
    values = {}
    for k in range(n_rows):
        i, fr = aug[row_owner[k]]
        values[(ep.states[i], fr, ep.row_action[row_ref[k]])] = float(q[k])
    return ExactQ(values, it)


def brute_force_violation(
    kernel: Mapping[tuple[Hashable, int], Sequence[tuple[Hashable, float]]],
    safe: set,
    s: Hashable,
    a: int,
    horizon: int,
) -> float:
    """``1 - sum_s' P(s, a, s') * stay(s', horizon)`` by plain path-tree expansion.

    ``stay(x, k)`` is the smallest probability, over the action chosen at every
    node of the tree, that the next ``k`` transitions from ``x`` all remain in
    ``safe`` (``x`` included). ``kernel`` maps ``(state, action)`` to its
    outcome list; the actions of a state are the keys present for it. No
    memoisation: every path is expanded separately.
    """
    actions: dict[Hashable, list[int]] = {}
    for x, b in kernel:
        actions.setdefault(x, []).append(b)

    def stay(x, k):
        if x not in safe:
            return 0.0
        if k == 0:
            return 1.0
        options = actions.get(x)
        if not options:
            return 0.0
        return min(sum(p * stay(x2, k - 1) for x2, p in kernel[(x, b)]) for b in options)

    return 1.0 - sum(p * stay(x2, horizon) for x2, p in kernel.get((s, a), ()))
