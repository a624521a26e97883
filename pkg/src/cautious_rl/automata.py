"""Limit-deterministic Büchi automata: loading, validation, sinks, frontier.

Automaton file format (line oriented, UTF-8, ``#`` starts a comment)::

    ap a b                  # atomic propositions, fixes the label bit order
    state q0 N              # state name and partition tag (N or D)
    state q2 D accept 1     # membership in accepting set 1 (repeatable)
    init q0
    trans q0 {a} q1         # exact label set; {} is the empty label
    trans q1 else q1        # default for every label not listed for q1
    eps q1 q2               # epsilon transition

Labels are handled internally as bitmasks over the ``ap`` order: bit ``i`` is
set when ``ap[i]`` holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import AbstractSet, Iterable, Sequence, Union

from cautious_rl.graph import tarjan_scc

__all__ = [
    "Ldba",
    "LdbaError",
    "FrontierUpdate",
    "build_ldba",
    "load_ldba",
    "dump_ldba",
    "step",
    "epsilon_successors",
    "sink_components",
    "accepting_frontier",
    "initial_frontier",
]

Label = Union[int, AbstractSet[str]]


class LdbaError(ValueError):
    """Malformed or structurally invalid automaton."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Ldba:
    ap: tuple[str, ...]
    names: tuple[str, ...]
    partition: tuple[str, ...]
    init: int
    # delta[q][mask] is the successor of q under the label encoded by mask
    delta: tuple[tuple[int, ...], ...]
    eps: tuple[tuple[int, ...], ...]
    accepting: tuple[frozenset[int], ...]
    sinks: frozenset[int] = field(default=frozenset())
    sink_transitions: frozenset[tuple[int, int, int]] = field(default=frozenset())
    accept_absorbing: frozenset[int] = field(default=frozenset())

    @property
    def n_states(self) -> int:
        return len(self.names)

    @property
    def n_labels(self) -> int:
        return 1 << len(self.ap)

    @property
    def accepting_union(self) -> frozenset[int]:
        return frozenset().union(*self.accepting)

    def state_id(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown automaton state {name!r}") from None

    def mask(self, label: Label) -> int:
        """Encode a label set as a bitmask; propositions outside ``ap`` are dropped."""
        if isinstance(label, int):
            return label
        m = 0
        for i, p in enumerate(self.ap):
            if p in label:
                m |= 1 << i
        return m

    def label_of(self, mask: int) -> frozenset[str]:
        return frozenset(p for i, p in enumerate(self.ap) if mask >> i & 1)


def _mask_text(ap: Sequence[str], mask: int) -> str:
    return "{" + " ".join(p for i, p in enumerate(ap) if mask >> i & 1) + "}"


def build_ldba(
    ap: Sequence[str],
    names: Sequence[str],
    partition: Sequence[str],
    init: int,
    delta: Sequence[Sequence[int]],
    eps: Sequence[Iterable[int]],
    accepting: Sequence[Iterable[int]],
) -> Ldba:
    """Validate the structure and return an automaton with sinks precomputed.

    ``delta`` must be a complete table: one successor per state and per
    label mask in ``range(2 ** len(ap))``.
    """
    n = len(names)
    if n == 0:
        raise LdbaError("automaton has no states")
    if len(set(names)) != n:
        raise LdbaError("duplicate state name")
    if len(partition) != n or any(t not in ("N", "D") for t in partition):
        raise LdbaError("every state needs a partition tag N or D")
    if not 0 <= init < n:
        raise LdbaError("initial state out of range")
    n_labels = 1 << len(ap)
    if len(delta) != n:
        raise LdbaError("transition table does not cover every state")
    for q, row in enumerate(delta):
        if len(row) != n_labels:
            missing = len(row)
            raise LdbaError(
                f"blocking state {names[q]}: no transition for label {_mask_text(ap, missing)}"
            )
        for q2 in row:
            if not 0 <= q2 < n:
                raise LdbaError(f"transition from {names[q]} to unknown state")
    eps_t = tuple(tuple(sorted(set(t))) for t in eps)
    if len(eps_t) != n:
        raise LdbaError("epsilon table does not cover every state")
    acc = tuple(frozenset(F) for F in accepting)
    if not acc:
        raise LdbaError("no accepting sets")
    for j, F in enumerate(acc, start=1):
        if not F:
            raise LdbaError(f"accepting set {j} is empty")
        for q in F:
            if partition[q] != "D":
                raise LdbaError(f"accepting state outside D-partition: {names[q]}")
    has_n = "N" in partition
    if has_n and partition[init] != "N":
        raise LdbaError(f"initial state not in N-partition: {names[init]}")
    for q, targets in enumerate(eps_t):
        for q2 in targets:
            if partition[q] != "N":
                raise LdbaError(f"epsilon transition source not in N-partition: {names[q]}")
            if partition[q2] != "D":
                raise LdbaError(f"epsilon transition target not in D-partition: {names[q2]}")
    for q, row in enumerate(delta):
        if partition[q] == "D":
            for m, q2 in enumerate(row):
                if partition[q2] != "D":
                    raise LdbaError(
                        f"labeled transition leaves D-partition: {names[q]} "
                        f"{_mask_text(ap, m)} {names[q2]}"
                    )

    a = Ldba(
        ap=tuple(ap),
        names=tuple(names),
        partition=tuple(partition),
        init=init,
        delta=tuple(tuple(r) for r in delta),
        eps=eps_t,
        accepting=acc,
    )
    sinks, sink_trans = sink_components(a)
    absorbing = frozenset(
        q
        for q in range(n)
        if all(q in F for F in acc) and not eps_t[q] and all(q2 == q for q2 in a.delta[q])
    )
    return Ldba(
        ap=a.ap,
        names=a.names,
        partition=a.partition,
        init=a.init,
        delta=a.delta,
        eps=a.eps,
        accepting=a.accepting,
        sinks=sinks,
        sink_transitions=sink_trans,
        accept_absorbing=absorbing,
    )


def _parse_label(tok: str, ap: Sequence[str], line: int) -> int:
    if not (tok.startswith("{") and tok.endswith("}")):
        raise LdbaError(f"malformed label {tok!r}", line)
    m = 0
    for p in tok[1:-1].split():
        if p not in ap:
            raise LdbaError(f"label uses undeclared proposition {p!r}", line)
        m |= 1 << ap.index(p)
    return m


def _split_label_line(rest: str, line: int) -> tuple[str, str, str]:
    """Split ``q0 {a b} q1`` or ``q0 else q1`` into its three fields."""
    rest = rest.strip()
    parts = rest.split(None, 1)
    if len(parts) != 2:
        raise LdbaError("trans needs source, label and target", line)
    src, tail = parts
    tail = tail.strip()
    if tail.startswith("{"):
        close = tail.find("}")
        if close < 0:
            raise LdbaError("unterminated label", line)
        label, target = tail[: close + 1], tail[close + 1 :].split()
    else:
        label, *target = tail.split()
    if len(target) != 1:
        raise LdbaError("trans needs source, label and target", line)
    return src, label, target[0]


def load_ldba(text: str) -> Ldba:
    ap: list[str] | None = None
    names: list[str] = []
    partition: list[str] = []
    accept_idx: dict[int, set[int]] = {}
    init_name: tuple[str, int] | None = None
    explicit: list[tuple[str, int, str, int]] = []
    defaults: list[tuple[str, str, int]] = []
    eps: list[tuple[str, str, int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        keyword, _, rest = line.partition(" ")
        fields = rest.split()
        if keyword == "ap":
            if ap is not None:
                raise LdbaError("duplicate ap declaration", lineno)
            if len(set(fields)) != len(fields):
                raise LdbaError("duplicate proposition in ap", lineno)
            ap = fields
        elif keyword == "state":
            if len(fields) < 2:
                raise LdbaError("state needs a name and a partition tag", lineno)
            name, tag, extra = fields[0], fields[1], fields[2:]
            if name in names:
                raise LdbaError(f"duplicate state {name!r}", lineno)
            if tag not in ("N", "D"):
                raise LdbaError(f"partition tag must be N or D, got {tag!r}", lineno)
            q = len(names)
            names.append(name)
            partition.append(tag)
            if len(extra) % 2:
                raise LdbaError("expected 'accept <index>' pairs", lineno)
            for kw, idx in zip(extra[::2], extra[1::2]):
                if kw != "accept" or not idx.isdigit() or int(idx) < 1:
                    raise LdbaError("expected 'accept <index>' with index >= 1", lineno)
                accept_idx.setdefault(int(idx), set()).add(q)
        elif keyword == "init":
            if len(fields) != 1:
                raise LdbaError("init needs exactly one state", lineno)
            if init_name is not None:
                raise LdbaError("duplicate init", lineno)
            init_name = (fields[0], lineno)
        elif keyword == "trans":
            if ap is None:
                raise LdbaError("trans before ap declaration", lineno)
            src, label, dst = _split_label_line(rest, lineno)
            if label == "else":
                defaults.append((src, dst, lineno))
            else:
                explicit.append((src, _parse_label(label, ap, lineno), dst, lineno))
        elif keyword == "eps":
            if len(fields) != 2:
                raise LdbaError("eps needs source and target", lineno)
            eps.append((fields[0], fields[1], lineno))
        else:
            raise LdbaError(f"unknown keyword {keyword!r}", lineno)

    if ap is None:
        raise LdbaError("missing ap declaration")
    if init_name is None:
        raise LdbaError("missing init")

    def sid(name: str, lineno: int) -> int:
        if name not in names:
            raise LdbaError(f"unknown state {name!r}", lineno)
        return names.index(name)

    n_labels = 1 << len(ap)
    table: list[list[int | None]] = [[None] * n_labels for _ in names]
    for src, m, dst, lineno in explicit:
        q = sid(src, lineno)
        if table[q][m] is not None:
            raise LdbaError(
                f"nondeterministic transition: {src} {_mask_text(ap, m)} listed twice", lineno
            )
        table[q][m] = sid(dst, lineno)
    seen_default: set[int] = set()
    for src, dst, lineno in defaults:
        q = sid(src, lineno)
        if q in seen_default:
            raise LdbaError(f"nondeterministic transition: two else defaults for {src}", lineno)
        seen_default.add(q)
        q2 = sid(dst, lineno)
        table[q] = [q2 if t is None else t for t in table[q]]
    for q, row in enumerate(table):
        for m, t in enumerate(row):
            if t is None:
                raise LdbaError(
                    f"blocking state {names[q]}: no transition for label {_mask_text(ap, m)}"
                )
    eps_table: list[set[int]] = [set() for _ in names]
    for src, dst, lineno in eps:
        eps_table[sid(src, lineno)].add(sid(dst, lineno))

    if accept_idx:
        f = max(accept_idx)
        missing = [j for j in range(1, f + 1) if j not in accept_idx]
        if missing:
            raise LdbaError(f"accepting set {missing[0]} is empty")
        accepting = [accept_idx[j] for j in range(1, f + 1)]
    else:
        accepting = []
    return build_ldba(
        ap,
        names,
        partition,
        sid(*init_name),
        table,  # type: ignore[arg-type]
        eps_table,
        accepting,
    )


def dump_ldba(a: Ldba) -> str:
    """Serialize with one explicit ``trans`` line per label (no defaults)."""
    lines = ["ap " + " ".join(a.ap)]
    for q, name in enumerate(a.names):
        acc = "".join(f" accept {j}" for j, F in enumerate(a.accepting, 1) if q in F)
        lines.append(f"state {name} {a.partition[q]}{acc}")
    lines.append(f"init {a.names[a.init]}")
    for q, row in enumerate(a.delta):
        for m, q2 in enumerate(row):
            lines.append(f"trans {a.names[q]} {_mask_text(a.ap, m)} {a.names[q2]}")
    for q, targets in enumerate(a.eps):
        for q2 in targets:
            lines.append(f"eps {a.names[q]} {a.names[q2]}")
    return "\n".join(lines) + "\n"


def step(a: Ldba, q: int, label: Label) -> int:
    return a.delta[q][a.mask(label)]


def epsilon_successors(a: Ldba, q: int) -> list[int]:
    return list(a.eps[q])


def _successors(a: Ldba, q: int) -> list[int]:
    return sorted(set(a.delta[q]) | set(a.eps[q]))


def sink_components(a: Ldba) -> tuple[frozenset[int], frozenset[tuple[int, int, int]]]:
    """Non-accepting sink states and the transitions that enter them.

    A closed SCC that misses at least one accepting set is a sink SCC. A state
    is in the result when every cyclic SCC reachable from it, its own
    included, is a sink SCC: no run from there can be accepting.
    """
    succ = [_successors(a, q) for q in range(a.n_states)]
    comps = tarjan_scc(range(a.n_states), lambda q: succ[q])
    comp_of = {}
    for c, members in enumerate(comps):
        for q in members:
            comp_of[q] = c

    # comps come out sinks-first, so successors are settled before predecessors
    absorbed = [False] * len(comps)
    for c, members in enumerate(comps):
        member_set = set(members)
        targets = {comp_of[q2] for q in members for q2 in succ[q]}
        cyclic = len(members) > 1 or members[0] in succ[members[0]]
        closed = targets <= {c}
        if cyclic:
            accepting = all(member_set & F for F in a.accepting)
            own_ok = closed and not accepting
        else:
            own_ok = True
        absorbed[c] = own_ok and all(absorbed[t] for t in targets if t != c)

    sinks = frozenset(q for q in range(a.n_states) if absorbed[comp_of[q]])
    trans = frozenset(
        (q, m, q2)
        for q in range(a.n_states)
        if q not in sinks
        for m, q2 in enumerate(a.delta[q])
        if q2 in sinks
    )
    return sinks, trans


@dataclass(frozen=True)
class FrontierUpdate:
    frontier: frozenset[int]
    accepting_hit: bool
    reset: bool


def initial_frontier(a: Ldba) -> frozenset[int]:
    return a.accepting_union


def accepting_frontier(q: int, fr: AbstractSet[int], a: Ldba) -> FrontierUpdate:
    """Update the set of accepting states still owed a visit after entering ``q``.

    When the frontier is exactly the accepting set containing ``q`` it resets
    to every other accepting state. With a single accepting set that would be
    empty, so it resets to the full set instead.
    """
    fr = frozenset(fr)
    hit = False
    reset = False
    for F in a.accepting:
        if q not in F:
            continue
        if F & fr:
            hit = True
        # fr < F only happens with overlapping accepting sets; treat it as a reset
        if fr <= F:
            reset = True
            fr = a.accepting_union - F or a.accepting_union
        else:
            fr = fr - F
    return FrontierUpdate(fr, hit, reset)
